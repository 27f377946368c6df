//! One simulated call: registration, call setup through the registrar, two
//! media streams and a mid-call interface switch.

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::config::{ExperimentConfig, SwitchDirection};
use crate::codec::CodecProfile;
use crate::error::{Error, Result};
use crate::handoff::{
    check_invariants, cn_on_reinvite, media_route, CnAction, CnSession, HandoffPhase, HandoffProcedure, HandoffRecord,
    HandoffState, MediaRoute, MnAction,
};
use crate::simnet::{EventLabel, LinkId, LinkState, Network, RngStreams, Scheduler, Transmission};
use crate::sip::{
    build_register, needs_reregistration, Contact, FallbackForwarder, ForwardOutcome, ForwardStep, ForwardTimer,
    Method, Registrar, RegistrationTrigger, SessionDescriptor, SignalingRecord, SipMessage,
};
use crate::traffic::{MediaPacket, PacketOutcome, PacketRecord, PacketTrace, StreamSource};
use crate::types::{Address, Direction, IfaceState, InterfaceDescriptor, SimTime};

const MN_NODE: u16 = 1;
const CN_NODE: u16 = 2;
const PROXY_NODE: u16 = 3;
const SIP_PORT: u16 = 5060;
const MN_URI: &str = "sip:mn@example.org";
const CN_URI: &str = "sip:cn@example.org";
const REGISTRAR_URI: &str = "sip:registrar.example.org";
const DRAIN_LIMIT_US: u64 = 60_000_000;

pub const CN_ADDR: Address = Address::new(CN_NODE, 0, SIP_PORT);
pub const PROXY_ADDR: Address = Address::new(PROXY_NODE, 0, SIP_PORT);

/// Deterministic signaling drops keyed by message label and per-label
/// transmission index (0 = first transmission).
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FaultPlan {
    drops: Vec<(String, u32)>,
}

impl FaultPlan {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn drop_nth(mut self, label: &str, nth: u32) -> Self {
        self.drops.push((label.to_string(), nth));
        self
    }

    fn hits(&self, label: &str, nth: u32) -> bool {
        self.drops.iter().any(|(l, n)| l == label && *n == nth)
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub faults: FaultPlan,
    pub event_log: bool,
}

/// One cell of the campaign grid plus the repetition index.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSpec {
    pub codec: CodecProfile,
    pub procedure: HandoffProcedure,
    pub switch: SwitchDirection,
    pub rep: u32,
    pub seed: u64,
}

impl RunSpec {
    pub fn cell_name(&self) -> String {
        cell_name(&self.codec.name, self.procedure, &self.switch)
    }

    pub fn run_id(&self) -> String {
        format!("{}-r{:03}", self.cell_name(), self.rep)
    }
}

pub fn cell_name(codec: &str, procedure: HandoffProcedure, switch: &SwitchDirection) -> String {
    format!("{codec}_{procedure}_{}", switch.label())
}

pub fn stream_id(codec: &str, direction: Direction) -> String {
    format!("{codec}-{direction}")
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub spec: RunSpec,
    pub run_id: String,
    pub trace: PacketTrace,
    pub signaling: Vec<SignalingRecord>,
    pub handoff: Vec<HandoffRecord>,
    pub event_log: Option<String>,
    pub aborted: Option<String>,
    pub violations: Vec<String>,
    pub warnings: Vec<String>,
    pub final_phase: Option<HandoffPhase>,
    pub media_start: SimTime,
    pub media_end: SimTime,
    pub trigger_at: Option<SimTime>,
    pub old_closed_at: Option<SimTime>,
    pub cn_switched_at: Option<SimTime>,
    pub completed_at: Option<SimTime>,
}

impl RunResult {
    pub fn lost(&self, direction: Direction) -> usize {
        self.trace.lost(direction)
    }

    /// Lost packets generated in `[from, from + span_us)`.
    pub fn lost_between(&self, direction: Direction, from: SimTime, span_us: u64) -> usize {
        let to = from.plus_us(span_us);
        self.trace
            .records()
            .filter(|r| r.direction == direction && r.is_lost() && r.gen_time >= from && r.gen_time < to)
            .count()
    }

    pub fn signaling_log(&self) -> String {
        let mut s = format!("{}\n", SignalingRecord::HEADER);
        for r in &self.signaling {
            s.push_str(&r.to_line());
            s.push('\n');
        }
        s
    }

    pub fn handoff_log(&self) -> String {
        let mut s = format!("{}\n", HandoffRecord::HEADER);
        for r in &self.handoff {
            s.push_str(&r.to_line());
            s.push('\n');
        }
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Txn {
    Register,
    Invite,
    Reinvite,
}

#[derive(Debug, Clone)]
enum Body {
    Sip(SipMessage),
    Media(MediaPacket, String),
}

#[derive(Debug, Clone)]
struct Packet {
    src: Address,
    dst: Address,
    body: Body,
}

#[derive(Debug, Clone)]
enum Action {
    PowerOn,
    StartMedia,
    Tick(Direction),
    Trigger,
    Watchdog,
    Cross(usize),
    LinkChange(LinkId, LinkState),
    Arrive(Box<Packet>),
    Timer(Txn, ForwardTimer),
}

impl EventLabel for Action {
    fn kind(&self) -> &'static str {
        match self {
            Action::PowerOn => "power-on",
            Action::StartMedia => "start-media",
            Action::Tick(_) => "media-tick",
            Action::Trigger => "trigger",
            Action::Watchdog => "watchdog",
            Action::Cross(_) => "cross-traffic",
            Action::LinkChange(..) => "link-change",
            Action::Arrive(_) => "arrival",
            Action::Timer(..) => "timer",
        }
    }

    fn subject(&self) -> String {
        match self {
            Action::Tick(d) => d.to_string(),
            Action::Cross(i) => i.to_string(),
            Action::LinkChange(id, s) => format!("{}:{s:?}", id.0),
            Action::Arrive(p) => match &p.body {
                Body::Sip(m) => format!("{} {}->{}", m.label(), p.src, p.dst),
                Body::Media(m, _) => format!("{}#{} {}->{}", m.stream_id, m.seq, p.src, p.dst),
            },
            Action::Timer(t, timer) => format!("{t:?}/{timer:?}"),
            _ => String::new(),
        }
    }
}

struct CrossSource {
    link: LinkId,
    mean_gap_us: f64,
    bytes: u32,
    rng: ChaCha8Rng,
}

struct World<'a> {
    cfg: &'a ExperimentConfig,
    spec: RunSpec,
    faults: FaultPlan,
    sched: Scheduler<Action>,
    net: Network,
    ifaces: Vec<InterfaceDescriptor>,
    ul_links: Vec<LinkId>,
    dl_links: Vec<LinkId>,
    core: LinkId,
    cross: Vec<CrossSource>,
    from_idx: usize,
    to_idx: usize,
    registrar: Registrar,
    txns: BTreeMap<&'static str, (FallbackForwarder, SipMessage)>,
    mn_ok_session: Option<SessionDescriptor>,
    mn_knows_cn: bool,
    cn: Option<CnSession>,
    mn: Option<HandoffState>,
    sources: [Option<StreamSource>; 2],
    trace: PacketTrace,
    signaling: Vec<SignalingRecord>,
    handoff: Vec<HandoffRecord>,
    sent_per_label: BTreeMap<String, u32>,
    in_flight: u64,
    media_start: SimTime,
    media_end: SimTime,
    aborted: Option<String>,
    violations: Vec<String>,
    warnings: Vec<String>,
    trigger_at: Option<SimTime>,
    old_closed_at: Option<SimTime>,
    completed_at: Option<SimTime>,
}

fn txn_key(t: Txn) -> &'static str {
    match t {
        Txn::Register => "register",
        Txn::Invite => "invite",
        Txn::Reinvite => "reinvite",
    }
}

fn slot(d: Direction) -> usize {
    match d {
        Direction::Ul => 0,
        Direction::Dl => 1,
    }
}

fn mn_addr(idx: usize) -> Address {
    Address::new(MN_NODE, idx as u16, SIP_PORT)
}

/// Simulates one call of `spec` under `cfg`.
pub fn run_once(cfg: &ExperimentConfig, spec: RunSpec, opts: &RunOptions) -> Result<RunResult> {
    let mut world = World::new(cfg, spec, opts)?;
    world.run()?;
    Ok(world.finish())
}

impl<'a> World<'a> {
    fn new(cfg: &'a ExperimentConfig, spec: RunSpec, opts: &RunOptions) -> Result<Self> {
        let rngs = RngStreams::new(spec.seed);
        let mut net = Network::new();
        let mut ifaces = Vec::new();
        let (mut ul_links, mut dl_links, mut cross) = (Vec::new(), Vec::new(), Vec::new());
        let mut link_events = Vec::new();
        for (idx, ic) in cfg.interfaces.iter().enumerate() {
            ifaces.push(InterfaceDescriptor {
                iface_id: ic.id.clone(),
                technology: ic.technology,
                address: mn_addr(idx),
                q_weight: ic.q,
                state: IfaceState::Up,
            });
            for (name, lc, list) in [(ic.uplink_id(), &ic.uplink, &mut ul_links), (ic.downlink_id(), &ic.downlink, &mut dl_links)] {
                let id = net.add_link(lc.to_model(&name), &rngs);
                list.push(id);
                if lc.cross_traffic_kbps > 0.0 {
                    cross.push(CrossSource {
                        link: id,
                        mean_gap_us: f64::from(lc.cross_packet_bytes) * 8_000.0 / lc.cross_traffic_kbps,
                        bytes: lc.cross_packet_bytes,
                        rng: rngs.substream(&format!("cross/{name}")),
                    });
                }
                link_events.extend(lc.events.iter().map(|e| (id, *e)));
            }
        }
        let core_model = crate::simnet::LinkModel::new(
            "core",
            None,
            super::config::DelaySpec::Fixed(cfg.core_delay_ms).to_model(),
        );
        let core = net.add_link(core_model, &rngs);

        let idx_of = |id: &str| {
            cfg.interfaces.iter().position(|i| i.id == id).ok_or_else(|| Error::Invariant(format!("unknown interface `{id}`")))
        };
        let from_idx = idx_of(&spec.switch.from)?;
        let to_idx = idx_of(&spec.switch.to)?;

        let media_start = SimTime::from_ms(cfg.media_start_ms);
        let media_end = media_start.plus_us(cfg.call_duration_us());
        let mut trigger = media_start.plus_us(cfg.switch_time_us());
        if cfg.switch_jitter_ms > 0 {
            let j = (cfg.switch_jitter_ms * 1_000) as i64;
            let offset = rngs.substream("trigger").random_range(-j..=j);
            trigger = SimTime::from_us(trigger.as_us().saturating_add_signed(offset));
        }

        let mut sched = if opts.event_log || cfg.event_log { Scheduler::with_log() } else { Scheduler::new() };
        sched.schedule(SimTime::ZERO, Action::PowerOn)?;
        sched.schedule(trigger, Action::Trigger)?;
        sched.schedule(media_start, Action::StartMedia)?;
        for (id, ev) in link_events {
            sched.schedule(SimTime::from_ms(ev.at_ms), Action::LinkChange(id, ev.state))?;
        }
        for i in 0..cross.len() {
            sched.schedule(SimTime::ZERO, Action::Cross(i))?;
        }

        let run_id = spec.run_id();
        Ok(World {
            cfg,
            spec,
            faults: opts.faults.clone(),
            sched,
            net,
            ifaces,
            ul_links,
            dl_links,
            core,
            cross,
            from_idx,
            to_idx,
            registrar: Registrar::new(),
            txns: BTreeMap::new(),
            mn_ok_session: None,
            mn_knows_cn: false,
            cn: None,
            mn: None,
            sources: [None, None],
            trace: PacketTrace::new(run_id),
            signaling: Vec::new(),
            handoff: Vec::new(),
            sent_per_label: BTreeMap::new(),
            in_flight: 0,
            media_start,
            media_end,
            aborted: None,
            violations: Vec::new(),
            warnings: Vec::new(),
            trigger_at: None,
            old_closed_at: None,
            completed_at: None,
        })
    }

    fn run(&mut self) -> Result<()> {
        while let Some(ev) = self.sched.next_until(self.media_end) {
            self.dispatch(ev.action)?;
            if self.aborted.is_some() {
                return Ok(());
            }
        }
        let limit = self.media_end.plus_us(DRAIN_LIMIT_US);
        while self.in_flight > 0 && self.aborted.is_none() {
            let Some(ev) = self.sched.next_until(limit) else {
                return Err(Error::Invariant(format!("{} media packets still in flight at drain limit", self.in_flight)));
            };
            self.dispatch(ev.action)?;
        }
        Ok(())
    }

    fn finish(mut self) -> RunResult {
        if self.aborted.is_none() {
            for s in self.sources.iter().flatten() {
                if let Err(e) = self.trace.check_conservation(s.stream_id(), s.packet_count()) {
                    self.violations.push(e.to_string());
                }
            }
            if self.sources.iter().all(Option::is_none) {
                self.violations.push("media never started".into());
            }
        }
        let run_id = self.spec.run_id();
        RunResult {
            run_id,
            trace: self.trace,
            signaling: self.signaling,
            handoff: self.handoff,
            event_log: self.sched.take_event_log(),
            aborted: self.aborted,
            violations: self.violations,
            warnings: self.warnings,
            final_phase: self.mn.as_ref().map(|m| m.phase),
            media_start: self.media_start,
            media_end: self.media_end,
            trigger_at: self.trigger_at,
            old_closed_at: self.old_closed_at,
            cn_switched_at: self.cn.as_ref().and_then(|c| c.switched_at),
            completed_at: self.completed_at,
            spec: self.spec,
        }
    }

    fn now(&self) -> SimTime {
        self.sched.now()
    }

    fn abort(&mut self, reason: String) {
        if self.aborted.is_none() {
            self.aborted = Some(reason);
        }
    }

    fn dispatch(&mut self, action: Action) -> Result<()> {
        match action {
            Action::PowerOn => self.power_on(),
            Action::StartMedia => self.start_media(),
            Action::Tick(d) => self.tick(d),
            Action::Trigger => self.trigger(),
            Action::Watchdog => {
                if self.mn.as_ref().is_some_and(|m| m.phase == HandoffPhase::Switching) {
                    self.log_handoff("mn", "watchdog-abort", HandoffPhase::Switching, HandoffPhase::Switching);
                    self.abort(format!("handoff still switching {} ms after trigger", self.cfg.watchdog_ms));
                }
                Ok(())
            }
            Action::Cross(i) => self.cross_traffic(i),
            Action::LinkChange(id, state) => {
                self.net.link_mut(id).set_state(state);
                Ok(())
            }
            Action::Arrive(p) => self.arrive(*p),
            Action::Timer(txn, timer) => {
                let now = self.now();
                let steps = match self.txns.get_mut(txn_key(txn)) {
                    Some((fwd, _)) => fwd.on_timer(timer, now),
                    None => Vec::new(),
                };
                self.process_steps(txn, steps)
            }
        }
    }

    fn power_on(&mut self) -> Result<()> {
        if !needs_reregistration(RegistrationTrigger::PowerOn) {
            return Ok(());
        }
        let msg = match build_register(MN_URI, REGISTRAR_URI, &self.ifaces, &self.cfg.message_sizes) {
            Ok(m) => m,
            Err(e) => {
                self.abort(format!("registration impossible: {e}"));
                return Ok(());
            }
        };
        let mut up: Vec<&InterfaceDescriptor> = self.ifaces.iter().filter(|i| i.is_up()).collect();
        up.sort_by(|a, b| b.q_weight.total_cmp(&a.q_weight));
        let routes = up.iter().map(|i| i.address).collect();
        self.start_txn(Txn::Register, FallbackForwarder::new(routes, self.cfg.signaling.clone()), msg)
    }

    fn start_txn(&mut self, txn: Txn, mut fwd: FallbackForwarder, msg: SipMessage) -> Result<()> {
        let steps = fwd.start(self.now());
        self.txns.insert(txn_key(txn), (fwd, msg));
        self.process_steps(txn, steps)
    }

    fn process_steps(&mut self, txn: Txn, steps: Vec<ForwardStep>) -> Result<()> {
        for step in steps {
            match step {
                ForwardStep::Send { to, .. } => {
                    let mut msg = self.txns[txn_key(txn)].1.clone();
                    match txn {
                        Txn::Register => {
                            msg.via_iface = self.iface_name(to);
                            self.send_sip(to, PROXY_ADDR, msg)?;
                        }
                        Txn::Invite => self.send_sip(PROXY_ADDR, to, msg)?,
                        Txn::Reinvite => self.send_sip(mn_addr(self.to_idx), CN_ADDR, msg)?,
                    }
                }
                ForwardStep::Arm { at, timer } => {
                    self.sched.schedule(at, Action::Timer(txn, timer))?;
                }
                ForwardStep::Finished(outcome) => match (txn, outcome) {
                    (Txn::Register, ForwardOutcome::Delivered(_)) => self.place_call()?,
                    (Txn::Register, ForwardOutcome::Unreachable) => {
                        self.abort("registration failed on every interface".into())
                    }
                    (Txn::Invite, ForwardOutcome::Delivered(contact)) => self.relay_invite_ok(contact)?,
                    (Txn::Invite, ForwardOutcome::Unreachable) => {
                        self.abort("call setup failed: no registered contact answered".into())
                    }
                    (Txn::Reinvite, _) => {}
                },
            }
        }
        Ok(())
    }

    fn place_call(&mut self) -> Result<()> {
        let session = SessionDescriptor { media_dst: CN_ADDR, media_src: CN_ADDR, codec: self.spec.codec.name.clone() };
        let invite = SipMessage::request(Method::Invite, CN_URI, MN_URI, "core", &self.cfg.message_sizes).with_session(session);
        self.send_sip(CN_ADDR, PROXY_ADDR, invite)
    }

    fn relay_invite_ok(&mut self, contact: Address) -> Result<()> {
        let invite = self.txns[txn_key(Txn::Invite)].1.clone();
        let mut ok = invite.ok("core", &self.cfg.message_sizes);
        ok.session = self.mn_ok_session.clone();
        ok.contacts = vec![Contact { address: contact, q: 1.0 }];
        self.send_sip(PROXY_ADDR, CN_ADDR, ok)
    }

    fn iface_name(&self, addr: Address) -> String {
        self.iface_index(addr).map_or_else(|| "core".to_string(), |i| self.ifaces[i].iface_id.clone())
    }

    fn iface_index(&self, addr: Address) -> Option<usize> {
        (addr.node == MN_NODE).then(|| addr.iface as usize).filter(|&i| i < self.ifaces.len())
    }

    fn send_sip(&mut self, src: Address, dst: Address, msg: SipMessage) -> Result<()> {
        let now = self.now();
        let label = msg.label();
        let nth = {
            let c = self.sent_per_label.entry(label.clone()).or_insert(0);
            *c += 1;
            *c - 1
        };
        let (link, mn_iface) = if let Some(i) = self.iface_index(src) {
            (self.ul_links[i], Some(i))
        } else if let Some(i) = self.iface_index(dst) {
            (self.dl_links[i], Some(i))
        } else {
            (self.core, None)
        };
        let via = mn_iface.map_or_else(|| "core".to_string(), |i| self.ifaces[i].iface_id.clone());
        let outcome = if mn_iface.is_some_and(|i| self.ifaces[i].state == IfaceState::Closed) {
            if src.node == MN_NODE {
                self.violations.push(format!("{label} sent from closed interface `{via}`"));
            }
            "dropped:closed-interface".to_string()
        } else if self.faults.hits(&label, nth) {
            "dropped:injected".to_string()
        } else {
            match self.net.link_mut(link).transmit(msg.size_bytes, now)? {
                Transmission::Delivered(at) => {
                    let method = msg.method;
                    self.sched.schedule(at, Action::Arrive(Box::new(Packet { src, dst, body: Body::Sip(msg) })))?;
                    self.signaling.push(SignalingRecord {
                        time: now,
                        label,
                        method,
                        from: src.to_string(),
                        to: dst.to_string(),
                        via_iface: via,
                        outcome: "sent".into(),
                    });
                    return Ok(());
                }
                Transmission::Dropped(r) => format!("dropped:{r}"),
            }
        };
        self.signaling.push(SignalingRecord {
            time: now,
            label,
            method: msg.method,
            from: src.to_string(),
            to: dst.to_string(),
            via_iface: via,
            outcome,
        });
        Ok(())
    }

    fn arrive(&mut self, p: Packet) -> Result<()> {
        match p.body {
            Body::Media(m, iface) => {
                self.in_flight -= 1;
                let now = self.now();
                self.trace.record(PacketRecord {
                    stream_id: m.stream_id,
                    direction: m.direction,
                    seq: m.seq,
                    gen_time: m.gen_time,
                    send_iface: iface,
                    outcome: PacketOutcome::Delivered(now),
                })
            }
            Body::Sip(msg) => match p.dst.node {
                MN_NODE => self.mn_receive(p.src, p.dst, msg),
                CN_NODE => self.cn_receive(p.src, msg),
                PROXY_NODE => self.proxy_receive(p.src, msg),
                other => Err(Error::Invariant(format!("message for unknown node {other}"))),
            },
        }
    }

    fn mn_receive(&mut self, src: Address, at: Address, msg: SipMessage) -> Result<()> {
        let sizes = &self.cfg.message_sizes;
        match (msg.method, msg.answers) {
            (Method::Ok, Some(Method::Register)) => {
                let steps = match self.txns.get_mut(txn_key(Txn::Register)) {
                    Some((fwd, _)) => fwd.on_answer(at),
                    None => Vec::new(),
                };
                self.process_steps(Txn::Register, steps)
            }
            (Method::Invite, _) => {
                self.mn_knows_cn = true;
                let media = mn_addr(self.from_idx);
                let via = self.iface_name(at);
                let mut ok = msg.ok(&via, sizes);
                ok.session = Some(SessionDescriptor { media_dst: media, media_src: media, codec: self.spec.codec.name.clone() });
                ok.contacts = vec![Contact { address: at, q: 1.0 }];
                self.send_sip(at, src, ok)
            }
            (Method::Ok, Some(Method::Reinvite)) => {
                let now = self.now();
                let steps = match self.txns.get_mut(txn_key(Txn::Reinvite)) {
                    Some((fwd, _)) => fwd.on_answer(src),
                    None => Vec::new(),
                };
                self.process_steps(Txn::Reinvite, steps)?;
                let Some(mn) = self.mn.as_mut() else {
                    self.warnings.push("OK(REINVITE) before media start".into());
                    return Ok(());
                };
                let before = mn.phase;
                let actions = mn.mn_on_ok(now);
                let after = mn.phase;
                if before != after {
                    self.completed_at = Some(now);
                    self.log_handoff("mn", "ok", before, after);
                }
                self.apply_mn_actions(actions)?;
                let ack = SipMessage::request(Method::Ack, MN_URI, CN_URI, &msg.via_iface, sizes);
                self.send_sip(at, src, ack)?;
                self.check_handoff_invariants();
                Ok(())
            }
            (Method::Ack, _) => Ok(()),
            _ => {
                self.warnings.push(format!("mobile node ignored {}", msg.label()));
                Ok(())
            }
        }
    }

    fn proxy_receive(&mut self, src: Address, msg: SipMessage) -> Result<()> {
        match (msg.method, msg.answers) {
            (Method::Register, _) => {
                self.registrar.apply_register(&msg)?;
                let ok = msg.ok(&msg.via_iface, &self.cfg.message_sizes);
                self.send_sip(PROXY_ADDR, src, ok)
            }
            (Method::Invite, _) => {
                let targets = match self.registrar.binding(&msg.to_uri) {
                    Some(b) if !b.is_empty() => b.addresses(),
                    _ => {
                        self.abort(format!("callee {} not registered", msg.to_uri));
                        return Ok(());
                    }
                };
                self.start_txn(Txn::Invite, FallbackForwarder::new(targets, self.cfg.signaling.clone()), msg)
            }
            (Method::Ok, Some(Method::Invite)) => {
                if self.mn_ok_session.is_none() {
                    self.mn_ok_session = msg.session.clone();
                }
                let steps = match self.txns.get_mut(txn_key(Txn::Invite)) {
                    Some((fwd, _)) => fwd.on_answer(src),
                    None => Vec::new(),
                };
                self.process_steps(Txn::Invite, steps)
            }
            _ => {
                self.warnings.push(format!("registrar ignored {}", msg.label()));
                Ok(())
            }
        }
    }

    fn cn_receive(&mut self, src: Address, msg: SipMessage) -> Result<()> {
        let now = self.now();
        match (msg.method, msg.answers) {
            (Method::Ok, Some(Method::Invite)) => {
                if self.cn.is_some() {
                    return Ok(());
                }
                let (Some(session), Some(contact)) = (msg.session.as_ref(), msg.contacts.first()) else {
                    self.abort("call setup answer without session or contact".into());
                    return Ok(());
                };
                self.cn = Some(CnSession::new(session.media_dst));
                let ack = SipMessage::request(Method::Ack, CN_URI, MN_URI, "core", &self.cfg.message_sizes);
                self.send_sip(CN_ADDR, contact.address, ack)
            }
            (Method::Reinvite, _) => {
                let Some(cn) = self.cn.as_mut() else {
                    self.warnings.push("REINVITE without an established session".into());
                    return Ok(());
                };
                let before = cn.phase_label();
                let actions = cn_on_reinvite(cn, &msg, src, now);
                let after = cn.phase_label();
                for a in actions {
                    match a {
                        CnAction::SendOk { to, via_iface } => {
                            let ok = msg.ok(&via_iface, &self.cfg.message_sizes);
                            self.send_sip(CN_ADDR, to, ok)?;
                        }
                        CnAction::SwitchDestination(addr) => {
                            self.handoff.push(HandoffRecord {
                                time: now,
                                endpoint: "cn",
                                transition: format!("dst:{}", self.iface_name(addr)),
                                phase_before: before.into(),
                                phase_after: after.into(),
                            });
                        }
                        CnAction::Warning(w) => self.warnings.push(w),
                    }
                }
                self.check_handoff_invariants();
                Ok(())
            }
            (Method::Ack, _) | (Method::Ok, _) => Ok(()),
            _ => {
                self.warnings.push(format!("correspondent ignored {}", msg.label()));
                Ok(())
            }
        }
    }

    fn start_media(&mut self) -> Result<()> {
        if self.cn.is_none() || !self.mn_knows_cn {
            self.abort("call setup incomplete at media start".into());
            return Ok(());
        }
        let from = &self.ifaces[self.from_idx].iface_id;
        let to = &self.ifaces[self.to_idx].iface_id;
        self.mn = Some(HandoffState::new(self.spec.procedure, from, to));
        let now = self.now();
        for d in Direction::BOTH {
            let id = stream_id(&self.spec.codec.name, d);
            let src = StreamSource::start_stream(id, &self.spec.codec, d, now, self.media_end, self.cfg.header_overhead_bytes);
            self.sources[slot(d)] = Some(src);
            self.sched.schedule(now, Action::Tick(d))?;
        }
        Ok(())
    }

    fn tick(&mut self, d: Direction) -> Result<()> {
        let now = self.now();
        let Some(pkt) = self.sources[slot(d)].as_mut().and_then(StreamSource::next_packet) else {
            return Ok(());
        };
        let (Some(mn), Some(cn)) = (self.mn.as_ref(), self.cn.as_ref()) else {
            return Err(Error::Invariant("media without session".into()));
        };
        match media_route(mn, cn, d, &self.ifaces, CN_ADDR)? {
            MediaRoute::NoRoute(reason) => {
                let iface = match d {
                    Direction::Ul => mn.ul_media_iface.clone(),
                    Direction::Dl => self.iface_name(cn.media_dst),
                };
                if d == Direction::Ul {
                    self.violations.push(format!("uplink packet {} emitted from closed interface", pkt.seq));
                }
                self.trace.record(PacketRecord {
                    stream_id: pkt.stream_id,
                    direction: d,
                    seq: pkt.seq,
                    gen_time: pkt.gen_time,
                    send_iface: iface,
                    outcome: PacketOutcome::Lost(reason),
                })?;
            }
            MediaRoute::Route { src, dst, iface } => {
                let idx = self.ifaces.iter().position(|i| i.iface_id == iface).expect("routed interface exists");
                let link = match d {
                    Direction::Ul => self.ul_links[idx],
                    Direction::Dl => self.dl_links[idx],
                };
                match self.net.link_mut(link).transmit(pkt.size_bytes, now)? {
                    Transmission::Delivered(at) => {
                        self.in_flight += 1;
                        let body = Body::Media(pkt, iface);
                        self.sched.schedule(at, Action::Arrive(Box::new(Packet { src, dst, body })))?;
                    }
                    Transmission::Dropped(reason) => {
                        self.trace.record(PacketRecord {
                            stream_id: pkt.stream_id,
                            direction: d,
                            seq: pkt.seq,
                            gen_time: pkt.gen_time,
                            send_iface: iface,
                            outcome: PacketOutcome::Lost(reason),
                        })?;
                    }
                }
            }
        }
        if let Some(next) = self.sources[slot(d)].as_ref().and_then(StreamSource::next_gen_time) {
            self.sched.schedule(next, Action::Tick(d))?;
        }
        Ok(())
    }

    fn trigger(&mut self) -> Result<()> {
        let now = self.now();
        let new_state = self.ifaces[self.to_idx].state;
        let Some(mn) = self.mn.as_mut() else {
            self.warnings.push("switch trigger before media start".into());
            return Ok(());
        };
        self.trigger_at = Some(now);
        let before = mn.phase;
        let actions = mn.mn_trigger(new_state, now);
        let after = mn.phase;
        let refused = actions.iter().any(|a| matches!(a, MnAction::Refused(_)));
        self.log_handoff("mn", if refused { "trigger-refused" } else { "trigger" }, before, after);
        if needs_reregistration(RegistrationTrigger::MidCallSwitch) {
            self.power_on()?;
        }
        self.apply_mn_actions(actions)?;
        if after == HandoffPhase::Switching {
            self.sched.schedule(now.plus_us(self.cfg.watchdog_ms * 1_000), Action::Watchdog)?;
        }
        self.check_handoff_invariants();
        Ok(())
    }

    fn apply_mn_actions(&mut self, actions: Vec<MnAction>) -> Result<()> {
        let now = self.now();
        let phase = self.mn.as_ref().map_or(HandoffPhase::Stable, |m| m.phase);
        for a in actions {
            match a {
                MnAction::SendReinvite { via } => {
                    let idx = self.to_idx;
                    let addr = mn_addr(idx);
                    let session = SessionDescriptor { media_dst: addr, media_src: addr, codec: self.spec.codec.name.clone() };
                    let msg = SipMessage::request(Method::Reinvite, MN_URI, CN_URI, &via, &self.cfg.message_sizes)
                        .with_session(session);
                    self.start_txn(Txn::Reinvite, FallbackForwarder::single(CN_ADDR, self.cfg.signaling.clone()), msg)?;
                }
                MnAction::CloseIface(id) => {
                    if let Some(i) = self.ifaces.iter_mut().find(|i| i.iface_id == id) {
                        i.state = IfaceState::Closed;
                    }
                    self.old_closed_at = Some(now);
                    self.log_handoff("mn", &format!("close:{id}"), phase, phase);
                }
                MnAction::SwitchUplink(id) => self.log_handoff("mn", &format!("uplink:{id}"), phase, phase),
                MnAction::Refused(r) | MnAction::Warning(r) => self.warnings.push(r),
            }
        }
        Ok(())
    }

    fn check_handoff_invariants(&mut self) {
        if let (Some(mn), Some(cn)) = (self.mn.as_ref(), self.cn.as_ref()) {
            if let Err(e) = check_invariants(mn, cn, &self.ifaces) {
                self.violations.push(format!("at {}: {e}", self.now()));
            }
        }
    }

    fn log_handoff(&mut self, endpoint: &'static str, transition: &str, before: HandoffPhase, after: HandoffPhase) {
        self.handoff.push(HandoffRecord {
            time: self.now(),
            endpoint,
            transition: transition.to_string(),
            phase_before: before.to_string(),
            phase_after: after.to_string(),
        });
    }

    fn cross_traffic(&mut self, i: usize) -> Result<()> {
        let now = self.now();
        let src = &mut self.cross[i];
        self.net.link_mut(src.link).transmit(src.bytes, now)?;
        let u: f64 = src.rng.random();
        let gap = (-(1.0 - u).ln() * src.mean_gap_us).round().max(1.0) as u64;
        let next = now.plus_us(gap);
        if next < self.media_end {
            self.sched.schedule(next, Action::Cross(i))?;
        }
        Ok(())
    }
}
