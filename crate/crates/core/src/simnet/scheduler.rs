//! Event queue with a total (time, sequence) dispatch order.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::types::SimTime;

/// Labels an action for the event log.
pub trait EventLabel {
    fn kind(&self) -> &'static str;
    fn subject(&self) -> String;
}

#[derive(Debug, Clone, PartialEq)]
pub struct Event<A> {
    pub time: SimTime,
    pub sequence: u64,
    pub action: A,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct EventHandle(pub u64);

struct Entry<A>(Event<A>);

impl<A> PartialEq for Entry<A> {
    fn eq(&self, other: &Self) -> bool {
        self.0.time == other.0.time && self.0.sequence == other.0.sequence
    }
}

impl<A> Eq for Entry<A> {}

impl<A> PartialOrd for Entry<A> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<A> Ord for Entry<A> {
    // reversed: BinaryHeap is a max-heap
    fn cmp(&self, other: &Self) -> Ordering {
        (other.0.time, other.0.sequence).cmp(&(self.0.time, self.0.sequence))
    }
}

pub struct Scheduler<A> {
    now: SimTime,
    next_sequence: u64,
    queue: BinaryHeap<Entry<A>>,
    log: Option<String>,
}

impl<A: EventLabel> Scheduler<A> {
    pub fn new() -> Self {
        Scheduler { now: SimTime::ZERO, next_sequence: 0, queue: BinaryHeap::new(), log: None }
    }

    /// Scheduler that records one line per dispatched event.
    pub fn with_log() -> Self {
        Scheduler { log: Some(String::new()), ..Self::new() }
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn pending(&self) -> usize {
        self.queue.len()
    }

    pub fn schedule(&mut self, time: SimTime, action: A) -> Result<EventHandle> {
        if time < self.now {
            return Err(Error::ScheduleInPast { at: time, now: self.now });
        }
        let sequence = self.next_sequence;
        self.next_sequence += 1;
        self.queue.push(Entry(Event { time, sequence, action }));
        Ok(EventHandle(sequence))
    }

    pub fn schedule_in(&mut self, delay_us: u64, action: A) -> Result<EventHandle> {
        self.schedule(self.now.plus_us(delay_us), action)
    }

    /// Pops the next event due at or before `t_end`, advancing the clock to it.
    /// When nothing is due the clock moves to `t_end` and `None` is returned.
    pub fn next_until(&mut self, t_end: SimTime) -> Option<Event<A>> {
        match self.queue.peek() {
            Some(Entry(ev)) if ev.time <= t_end => {
                let Entry(ev) = self.queue.pop().expect("peeked");
                self.now = ev.time;
                if let Some(log) = self.log.as_mut() {
                    let _ = writeln!(log, "{},{},{}", ev.time, ev.action.kind(), ev.action.subject());
                }
                Some(ev)
            }
            _ => {
                if t_end > self.now {
                    self.now = t_end;
                }
                None
            }
        }
    }

    /// Dispatches every event with time <= `t_end` to `handler` in total order.
    pub fn run_until<F>(&mut self, t_end: SimTime, mut handler: F) -> usize
    where
        F: FnMut(&mut Self, Event<A>),
    {
        let mut count = 0;
        while let Some(ev) = self.next_until(t_end) {
            handler(self, ev);
            count += 1;
        }
        count
    }

    pub fn event_log(&self) -> Option<&str> {
        self.log.as_deref()
    }

    pub fn take_event_log(&mut self) -> Option<String> {
        self.log.as_mut().map(std::mem::take)
    }
}

impl<A: EventLabel> Default for Scheduler<A> {
    fn default() -> Self {
        Self::new()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Debug, Clone, PartialEq)]
    struct Tag(&'static str);

    impl EventLabel for Tag {
        fn kind(&self) -> &'static str {
            "tag"
        }
        fn subject(&self) -> String {
            self.0.to_string()
        }
    }

    #[test]
    fn equal_time_is_fifo() {
        let mut s = Scheduler::new();
        s.schedule(SimTime::from_ms(5), Tag("A")).unwrap();
        s.schedule(SimTime::from_ms(5), Tag("B")).unwrap();
        s.schedule(SimTime::from_ms(1), Tag("early")).unwrap();
        let mut seen = Vec::new();
        s.run_until(SimTime::from_ms(10), |_, ev| seen.push(ev.action.0));
        assert_eq!(seen, vec!["early", "A", "B"]);
    }

    #[test]
    fn schedule_at_now_dispatches_after_equal_time_predecessors() {
        let mut s = Scheduler::new();
        s.schedule(SimTime::ZERO, Tag("first")).unwrap();
        let mut seen = Vec::new();
        s.run_until(SimTime::ZERO, |s, ev| {
            if ev.action.0 == "first" {
                s.schedule(s.now(), Tag("now")).unwrap();
            }
            seen.push(ev.action.0);
        });
        assert_eq!(seen, vec!["first", "now"]);
    }

    #[test]
    fn past_is_rejected() {
        let mut s: Scheduler<Tag> = Scheduler::new();
        s.next_until(SimTime::from_ms(10));
        let err = s.schedule(SimTime::from_us(9_999), Tag("late")).unwrap_err();
        assert!(matches!(err, Error::ScheduleInPast { .. }));
    }

    #[test]
    fn empty_run_advances_clock() {
        let mut s: Scheduler<Tag> = Scheduler::new();
        assert_eq!(s.run_until(SimTime::from_secs(60), |_, _| {}), 0);
        assert_eq!(s.now(), SimTime::from_secs(60));
    }

    #[test]
    fn only_due_events_run() {
        let mut s = Scheduler::new();
        s.schedule(SimTime::from_secs(30), Tag("mid")).unwrap();
        s.schedule(SimTime::from_secs(90), Tag("after")).unwrap();
        assert_eq!(s.run_until(SimTime::from_secs(60), |_, _| {}), 1);
        assert_eq!(s.pending(), 1);
    }

    #[test]
    fn log_lines() {
        let mut s = Scheduler::with_log();
        s.schedule(SimTime::from_us(3), Tag("x")).unwrap();
        s.run_until(SimTime::from_us(3), |_, _| {});
        assert_eq!(s.event_log().unwrap(), "3,tag,x\n");
    }
}
