use std::collections::BTreeMap;

use super::{RegistrarBinding, SignalingTiming, SipMessage};
use crate::error::{Error, Result};
use crate::simnet::{EventLabel, LinkId, Network, Scheduler, Transmission};
use crate::types::{Address, SimTime};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ForwardOutcome {
    Delivered(Address),
    Unreachable,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AttemptRecord {
    pub target: Address,
    pub at: SimTime,
    pub retransmission: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ForwardTimer {
    Retransmit { attempt: usize },
    Deadline { attempt: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ForwardStep {
    Send { to: Address, retransmission: bool },
    Arm { at: SimTime, timer: ForwardTimer },
    Finished(ForwardOutcome),
}

/// Request transaction that walks a priority list serially: each target gets
/// the message (plus retransmissions) and a fixed window to answer before the
/// next one is tried.
///
/// With a single target and no window it is a plain retransmitting client
/// transaction that never gives up on its own.
#[derive(Debug, Clone)]
pub struct FallbackForwarder {
    targets: Vec<Address>,
    timing: SignalingTiming,
    window_us: Option<u64>,
    current: usize,
    outcome: Option<ForwardOutcome>,
    attempts: Vec<AttemptRecord>,
}

impl FallbackForwarder {
    pub fn new(targets: Vec<Address>, timing: SignalingTiming) -> Self {
        let window = timing.fallback_timeout_ms * 1_000;
        FallbackForwarder { targets, timing, window_us: Some(window), current: 0, outcome: None, attempts: Vec::new() }
    }

    pub fn single(target: Address, timing: SignalingTiming) -> Self {
        FallbackForwarder { targets: vec![target], timing, window_us: None, current: 0, outcome: None, attempts: Vec::new() }
    }

    pub fn outcome(&self) -> Option<ForwardOutcome> {
        self.outcome
    }

    pub fn attempts(&self) -> &[AttemptRecord] {
        &self.attempts
    }

    pub fn current_target(&self) -> Option<Address> {
        self.targets.get(self.current).copied()
    }

    pub fn start(&mut self, now: SimTime) -> Vec<ForwardStep> {
        if self.targets.is_empty() {
            self.outcome = Some(ForwardOutcome::Unreachable);
            return vec![ForwardStep::Finished(ForwardOutcome::Unreachable)];
        }
        self.begin_attempt(0, now)
    }

    fn begin_attempt(&mut self, idx: usize, now: SimTime) -> Vec<ForwardStep> {
        self.current = idx;
        let to = self.targets[idx];
        self.attempts.push(AttemptRecord { target: to, at: now, retransmission: false });
        let mut steps = vec![ForwardStep::Send { to, retransmission: false }];
        for off in self.timing.retransmit_offsets_us(self.window_us) {
            steps.push(ForwardStep::Arm { at: now.plus_us(off), timer: ForwardTimer::Retransmit { attempt: idx } });
        }
        if let Some(w) = self.window_us {
            steps.push(ForwardStep::Arm { at: now.plus_us(w), timer: ForwardTimer::Deadline { attempt: idx } });
        }
        steps
    }

    pub fn on_timer(&mut self, timer: ForwardTimer, now: SimTime) -> Vec<ForwardStep> {
        if self.outcome.is_some() {
            return Vec::new();
        }
        match timer {
            ForwardTimer::Retransmit { attempt } if attempt == self.current => {
                let to = self.targets[attempt];
                self.attempts.push(AttemptRecord { target: to, at: now, retransmission: true });
                vec![ForwardStep::Send { to, retransmission: true }]
            }
            ForwardTimer::Deadline { attempt } if attempt == self.current => {
                if attempt + 1 < self.targets.len() {
                    self.begin_attempt(attempt + 1, now)
                } else {
                    self.outcome = Some(ForwardOutcome::Unreachable);
                    vec![ForwardStep::Finished(ForwardOutcome::Unreachable)]
                }
            }
            _ => Vec::new(),
        }
    }

    /// An answer from any target tried so far completes the transaction.
    pub fn on_answer(&mut self, from: Address) -> Vec<ForwardStep> {
        if self.outcome.is_some() || !self.targets.iter().take(self.current + 1).any(|&a| a == from) {
            return Vec::new();
        }
        self.outcome = Some(ForwardOutcome::Delivered(from));
        vec![ForwardStep::Finished(ForwardOutcome::Delivered(from))]
    }
}

/// Links between the registrar and one registered address.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SignalPath {
    pub toward_node: LinkId,
    pub from_node: LinkId,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FallbackReport {
    pub outcome: ForwardOutcome,
    pub attempts: Vec<AttemptRecord>,
    pub finished_at: SimTime,
    pub elapsed_us: u64,
}

#[derive(Debug, Clone, Copy)]
enum Step {
    Timer(ForwardTimer),
    AtNode(Address),
    AnswerAtRegistrar(Address),
}

impl EventLabel for Step {
    fn kind(&self) -> &'static str {
        match self {
            Step::Timer(_) => "timer",
            Step::AtNode(_) => "request-arrival",
            Step::AnswerAtRegistrar(_) => "answer-arrival",
        }
    }

    fn subject(&self) -> String {
        match self {
            Step::Timer(t) => format!("{t:?}"),
            Step::AtNode(a) | Step::AnswerAtRegistrar(a) => a.to_string(),
        }
    }
}

/// Offers `msg` to the entries of `binding` in priority order over `net`,
/// where every reachable node answers each request it receives with a
/// message of `answer_bytes`.
pub fn forward_with_fallback(
    net: &mut Network,
    paths: &BTreeMap<Address, SignalPath>,
    binding: &RegistrarBinding,
    msg: &SipMessage,
    answer_bytes: u32,
    timing: &SignalingTiming,
    t_start: SimTime,
) -> Result<FallbackReport> {
    let mut fwd = FallbackForwarder::new(binding.addresses(), timing.clone());
    let mut sched: Scheduler<Step> = Scheduler::new();
    sched.next_until(t_start);
    let path = |a: &Address| {
        paths.get(a).copied().ok_or_else(|| Error::UnknownLink(format!("no signal path to {a}")))
    };

    let mut pending = fwd.start(t_start);
    loop {
        for step in std::mem::take(&mut pending) {
            match step {
                ForwardStep::Send { to, .. } => {
                    let p = path(&to)?;
                    if let Transmission::Delivered(at) = net.link_mut(p.toward_node).transmit(msg.size_bytes, sched.now())? {
                        sched.schedule(at, Step::AtNode(to))?;
                    }
                }
                ForwardStep::Arm { at, timer } => {
                    sched.schedule(at, Step::Timer(timer))?;
                }
                ForwardStep::Finished(outcome) => {
                    let now = sched.now();
                    return Ok(FallbackReport {
                        outcome,
                        attempts: fwd.attempts().to_vec(),
                        finished_at: now,
                        elapsed_us: now.since(t_start),
                    });
                }
            }
        }
        let Some(ev) = sched.next_until(SimTime::from_us(u64::MAX)) else {
            // queue drained without a verdict; only possible with a zero window
            return Ok(FallbackReport {
                outcome: ForwardOutcome::Unreachable,
                attempts: fwd.attempts().to_vec(),
                finished_at: sched.now(),
                elapsed_us: sched.now().since(t_start),
            });
        };
        match ev.action {
            Step::Timer(t) => pending = fwd.on_timer(t, ev.time),
            Step::AtNode(addr) => {
                let p = path(&addr)?;
                if let Transmission::Delivered(at) = net.link_mut(p.from_node).transmit(answer_bytes, ev.time)? {
                    sched.schedule(at, Step::AnswerAtRegistrar(addr))?;
                }
            }
            Step::AnswerAtRegistrar(addr) => pending = fwd.on_answer(addr),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn addr(i: u16) -> Address {
        Address::new(1, i, 5060)
    }

    #[test]
    fn first_answer_wins() {
        let mut f = FallbackForwarder::new(vec![addr(0), addr(1)], SignalingTiming::default());
        let steps = f.start(SimTime::ZERO);
        assert_eq!(steps[0], ForwardStep::Send { to: addr(0), retransmission: false });
        assert_eq!(f.on_answer(addr(0)), vec![ForwardStep::Finished(ForwardOutcome::Delivered(addr(0)))]);
        assert_eq!(f.attempts().len(), 1);
    }

    #[test]
    fn deadline_moves_to_next_entry() {
        let mut f = FallbackForwarder::new(vec![addr(0), addr(1)], SignalingTiming::default());
        f.start(SimTime::ZERO);
        let retx = f.on_timer(ForwardTimer::Retransmit { attempt: 0 }, SimTime::from_ms(500));
        assert_eq!(retx, vec![ForwardStep::Send { to: addr(0), retransmission: true }]);
        let next = f.on_timer(ForwardTimer::Deadline { attempt: 0 }, SimTime::from_secs(2));
        assert_eq!(next[0], ForwardStep::Send { to: addr(1), retransmission: false });
        // stale timer of attempt 0 is ignored
        assert!(f.on_timer(ForwardTimer::Retransmit { attempt: 0 }, SimTime::from_secs(2)).is_empty());
        let done = f.on_timer(ForwardTimer::Deadline { attempt: 1 }, SimTime::from_secs(4));
        assert_eq!(done, vec![ForwardStep::Finished(ForwardOutcome::Unreachable)]);
    }

    #[test]
    fn empty_list_is_unreachable() {
        let mut f = FallbackForwarder::new(vec![], SignalingTiming::default());
        assert_eq!(f.start(SimTime::ZERO), vec![ForwardStep::Finished(ForwardOutcome::Unreachable)]);
    }

    #[test]
    fn answers_from_untried_entries_are_ignored() {
        let mut f = FallbackForwarder::new(vec![addr(0), addr(1)], SignalingTiming::default());
        f.start(SimTime::ZERO);
        assert!(f.on_answer(addr(1)).is_empty());
        assert!(f.outcome().is_none());
    }

    #[test]
    fn single_target_never_gives_up() {
        let mut f = FallbackForwarder::single(addr(3), SignalingTiming::default());
        let steps = f.start(SimTime::ZERO);
        assert!(!steps.iter().any(|s| matches!(s, ForwardStep::Arm { timer: ForwardTimer::Deadline { .. }, .. })));
        assert_eq!(steps.len(), 2);
    }
}
