use std::collections::BTreeMap;

use sipmob::simnet::{DelayModel, LinkModel, LinkState, Network, RngStreams};
use sipmob::sip::{
    build_register, forward_with_fallback, ForwardOutcome, MessageSizes, Method, Registrar, SignalPath,
    SignalingTiming, SipMessage,
};
use sipmob::types::{Address, IfaceState, InterfaceDescriptor, Technology};
use sipmob::SimTime;

fn iface(id: &str, idx: u16, q: f64, tech: Technology) -> InterfaceDescriptor {
    InterfaceDescriptor { iface_id: id.into(), technology: tech, address: Address::new(1, idx, 5060), q_weight: q, state: IfaceState::Up }
}

struct Setup {
    net: Network,
    paths: BTreeMap<Address, SignalPath>,
    ifaces: Vec<InterfaceDescriptor>,
}

/// Cellular (q 0.9, 384 kbps, 60 ms) and WLAN (q 0.5, 54 Mbps, 5 ms).
fn setup() -> Setup {
    let rngs = RngStreams::new(5);
    let mut net = Network::new();
    let ifaces = vec![iface("cellular", 0, 0.9, Technology::Cellular), iface("wlan", 1, 0.5, Technology::Wlan)];
    let mut paths = BTreeMap::new();
    for (i, (kbps, delay)) in ifaces.iter().zip([(384, 60_000), (54_000, 5_000)]) {
        let toward = net.add_link(LinkModel::new(format!("{}-dl", i.iface_id), Some(kbps), DelayModel::Fixed(delay)), &rngs);
        let from = net.add_link(LinkModel::new(format!("{}-ul", i.iface_id), Some(kbps), DelayModel::Fixed(delay)), &rngs);
        paths.insert(i.address, SignalPath { toward_node: toward, from_node: from });
    }
    Setup { net, paths, ifaces }
}

fn ser_us(bytes: u64, kbps: u64) -> u64 {
    (bytes * 8_000).div_ceil(kbps)
}

#[test]
fn fallback_to_second_interface_when_first_is_down() {
    let mut s = setup();
    let sizes = MessageSizes::default();
    let reg = build_register("sip:mn@x", "sip:reg@x", &s.ifaces, &sizes).unwrap();
    let mut registrar = Registrar::new();
    let binding = registrar.apply_register(&reg).unwrap().clone();
    s.net.set_link_state("cellular-dl", LinkState::Down).unwrap();

    let invite = SipMessage::request(Method::Invite, "sip:cn@x", "sip:mn@x", "core", &sizes);
    let timing = SignalingTiming::default();
    let t0 = SimTime::from_secs(1);
    let report = forward_with_fallback(&mut s.net, &s.paths, &binding, &invite, sizes.ok, &timing, t0).unwrap();

    let wlan = s.ifaces[1].address;
    assert_eq!(report.outcome, ForwardOutcome::Delivered(wlan));
    let order: Vec<(Address, bool)> = report.attempts.iter().map(|a| (a.target, a.retransmission)).collect();
    assert_eq!(order, vec![(s.ifaces[0].address, false), (s.ifaces[0].address, true), (wlan, false)]);
    let rtt = ser_us(700, 54_000) + 5_000 + ser_us(450, 54_000) + 5_000;
    assert_eq!(report.elapsed_us, timing.fallback_timeout_ms * 1_000 + rtt);
    assert!(report.elapsed_us <= (timing.fallback_timeout_ms + timing.retransmit_interval_ms) * 1_000);
}

#[test]
fn top_priority_answers_directly_when_up() {
    let mut s = setup();
    let sizes = MessageSizes::default();
    let reg = build_register("sip:mn@x", "sip:reg@x", &s.ifaces, &sizes).unwrap();
    let binding = Registrar::new().apply_register(&reg).unwrap().clone();
    let invite = SipMessage::request(Method::Invite, "sip:cn@x", "sip:mn@x", "core", &sizes);
    let report =
        forward_with_fallback(&mut s.net, &s.paths, &binding, &invite, sizes.ok, &SignalingTiming::default(), SimTime::ZERO)
            .unwrap();
    assert_eq!(report.outcome, ForwardOutcome::Delivered(s.ifaces[0].address));
    assert_eq!(report.attempts.len(), 1);
    assert_eq!(report.elapsed_us, ser_us(700, 384) + 60_000 + ser_us(450, 384) + 60_000);
}

#[test]
fn all_down_is_unreachable_after_every_window() {
    let mut s = setup();
    let sizes = MessageSizes::default();
    let reg = build_register("sip:mn@x", "sip:reg@x", &s.ifaces, &sizes).unwrap();
    let binding = Registrar::new().apply_register(&reg).unwrap().clone();
    s.net.set_link_state("cellular-dl", LinkState::Down).unwrap();
    s.net.set_link_state("wlan-dl", LinkState::Down).unwrap();
    let invite = SipMessage::request(Method::Invite, "sip:cn@x", "sip:mn@x", "core", &sizes);
    let report =
        forward_with_fallback(&mut s.net, &s.paths, &binding, &invite, sizes.ok, &SignalingTiming::default(), SimTime::ZERO)
            .unwrap();
    assert_eq!(report.outcome, ForwardOutcome::Unreachable);
    assert_eq!(report.elapsed_us, 4_000_000);
    assert_eq!(report.attempts.len(), 4);
}

#[test]
fn registrar_orders_by_descending_q_and_keeps_ties_stable() {
    let sizes = MessageSizes::default();
    let ifaces = vec![
        iface("a", 0, 0.3, Technology::Wired),
        iface("b", 1, 0.8, Technology::Wlan),
        iface("c", 2, 0.3, Technology::Cellular),
        iface("d", 3, 1.0, Technology::Cellular),
    ];
    let reg = build_register("sip:mn@x", "sip:reg@x", &ifaces, &sizes).unwrap();
    assert_eq!(reg.via_iface, "d");
    let mut r = Registrar::new();
    let order: Vec<u16> = r.apply_register(&reg).unwrap().addresses().iter().map(|a| a.iface).collect();
    assert_eq!(order, vec![3, 1, 0, 2]);
}
