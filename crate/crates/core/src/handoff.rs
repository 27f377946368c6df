//! Mid-call interface switching: hard (break-before-make), hybrid and soft
//! (make-before-break) procedures.
//!
//! The mobile node side is a small state machine, [`HandoffState`]; the
//! correspondent side only tracks where it sends downlink media,
//! [`CnSession`]. Both return actions for the caller to carry out, so the
//! machines stay free of any network or timing code.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::simnet::DropReason;
use crate::sip::{Method, SipMessage};
use crate::types::{Address, Direction, IfaceState, InterfaceDescriptor, SimTime};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HandoffProcedure {
    Hard,
    Hybrid,
    Soft,
}

impl HandoffProcedure {
    pub const ALL: [HandoffProcedure; 3] = [HandoffProcedure::Hard, HandoffProcedure::Hybrid, HandoffProcedure::Soft];

    pub fn as_str(self) -> &'static str {
        match self {
            HandoffProcedure::Hard => "hard",
            HandoffProcedure::Hybrid => "hybrid",
            HandoffProcedure::Soft => "soft",
        }
    }
}

impl fmt::Display for HandoffProcedure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for HandoffProcedure {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "hard" => Ok(HandoffProcedure::Hard),
            "hybrid" => Ok(HandoffProcedure::Hybrid),
            "soft" => Ok(HandoffProcedure::Soft),
            other => Err(format!("unknown procedure `{other}` (expected hard, hybrid or soft)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum HandoffPhase {
    Stable,
    Switching,
    Completed,
}

impl fmt::Display for HandoffPhase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            HandoffPhase::Stable => "Stable",
            HandoffPhase::Switching => "Switching",
            HandoffPhase::Completed => "Completed",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MnAction {
    SendReinvite { via: String },
    CloseIface(String),
    SwitchUplink(String),
    /// Handoff not started; the session stays on the old interface.
    Refused(String),
    Warning(String),
}

/// Mobile-node view of one session's interface switch.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HandoffState {
    pub procedure: HandoffProcedure,
    pub phase: HandoffPhase,
    pub old_iface: String,
    pub new_iface: String,
    pub ul_media_iface: String,
    pub old_iface_state: IfaceState,
}

impl HandoffState {
    pub fn new(procedure: HandoffProcedure, old_iface: &str, new_iface: &str) -> Self {
        HandoffState {
            procedure,
            phase: HandoffPhase::Stable,
            old_iface: old_iface.to_string(),
            new_iface: new_iface.to_string(),
            ul_media_iface: old_iface.to_string(),
            old_iface_state: IfaceState::Up,
        }
    }

    /// The switch decision. A re-INVITE always leaves through the new
    /// interface; what happens to uplink media depends on the procedure.
    pub fn mn_trigger(&mut self, new_iface_state: IfaceState, _t: SimTime) -> Vec<MnAction> {
        if self.phase != HandoffPhase::Stable {
            return vec![MnAction::Warning(format!("trigger ignored in phase {}", self.phase))];
        }
        if new_iface_state != IfaceState::Up {
            return vec![MnAction::Refused(format!("new interface `{}` is {}", self.new_iface, new_iface_state))];
        }
        self.phase = HandoffPhase::Switching;
        let mut actions = vec![MnAction::SendReinvite { via: self.new_iface.clone() }];
        match self.procedure {
            HandoffProcedure::Hard => {
                self.old_iface_state = IfaceState::Closed;
                self.ul_media_iface = self.new_iface.clone();
                actions.push(MnAction::CloseIface(self.old_iface.clone()));
                actions.push(MnAction::SwitchUplink(self.new_iface.clone()));
            }
            HandoffProcedure::Hybrid => {
                self.ul_media_iface = self.new_iface.clone();
                actions.push(MnAction::SwitchUplink(self.new_iface.clone()));
            }
            HandoffProcedure::Soft => {}
        }
        actions
    }

    /// Reception of the OK answering the re-INVITE.
    pub fn mn_on_ok(&mut self, _t: SimTime) -> Vec<MnAction> {
        if self.phase != HandoffPhase::Switching {
            return vec![MnAction::Warning(format!("OK without pending handoff (phase {})", self.phase))];
        }
        self.phase = HandoffPhase::Completed;
        match self.procedure {
            HandoffProcedure::Hard => Vec::new(),
            HandoffProcedure::Hybrid => {
                self.old_iface_state = IfaceState::Closed;
                vec![MnAction::CloseIface(self.old_iface.clone())]
            }
            HandoffProcedure::Soft => {
                self.ul_media_iface = self.new_iface.clone();
                self.old_iface_state = IfaceState::Closed;
                vec![MnAction::SwitchUplink(self.new_iface.clone()), MnAction::CloseIface(self.old_iface.clone())]
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CnAction {
    SendOk { to: Address, via_iface: String },
    SwitchDestination(Address),
    Warning(String),
}

/// Correspondent-node view of the session.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CnSession {
    pub active: bool,
    pub media_dst: Address,
    pub switched_at: Option<SimTime>,
}

impl CnSession {
    pub fn new(media_dst: Address) -> Self {
        CnSession { active: true, media_dst, switched_at: None }
    }

    pub fn phase_label(&self) -> &'static str {
        if !self.active {
            "Closed"
        } else if self.switched_at.is_some() {
            "Switched"
        } else {
            "Established"
        }
    }
}

/// Re-INVITE reception at the correspondent: answer over the path it came in
/// on and move downlink media to the new address in one step. Same for all
/// three procedures.
pub fn cn_on_reinvite(cn: &mut CnSession, msg: &SipMessage, from: Address, t: SimTime) -> Vec<CnAction> {
    if msg.method != Method::Reinvite {
        return vec![CnAction::Warning(format!("expected REINVITE, got {}", msg.label()))];
    }
    if !cn.active {
        return vec![CnAction::Warning("REINVITE for a closed session".into())];
    }
    let Some(session) = msg.session.as_ref() else {
        return vec![CnAction::Warning("REINVITE without session description".into())];
    };
    let mut actions = vec![CnAction::SendOk { to: from, via_iface: msg.via_iface.clone() }];
    if cn.media_dst != session.media_dst {
        cn.media_dst = session.media_dst;
        cn.switched_at = Some(t);
        actions.push(CnAction::SwitchDestination(session.media_dst));
    }
    actions
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MediaRoute {
    Route { src: Address, dst: Address, iface: String },
    NoRoute(DropReason),
}

/// Where a media packet generated now goes. Uplink leaves from the current
/// uplink interface; downlink targets the correspondent's current
/// destination. A Closed mobile-node interface on either end is a drop.
pub fn media_route(
    state: &HandoffState,
    cn: &CnSession,
    direction: Direction,
    mn_ifaces: &[InterfaceDescriptor],
    cn_addr: Address,
) -> Result<MediaRoute> {
    let iface = match direction {
        Direction::Ul => mn_ifaces.iter().find(|i| i.iface_id == state.ul_media_iface),
        Direction::Dl => mn_ifaces.iter().find(|i| i.address == cn.media_dst),
    };
    let Some(iface) = iface else {
        return Err(Error::Invariant(format!("{direction} media has no mobile-node interface")));
    };
    if iface.state == IfaceState::Closed {
        return Ok(MediaRoute::NoRoute(DropReason::ClosedInterface));
    }
    let (src, dst) = match direction {
        Direction::Ul => (iface.address, cn_addr),
        Direction::Dl => (cn_addr, iface.address),
    };
    Ok(MediaRoute::Route { src, dst, iface: iface.iface_id.clone() })
}

/// Checks the phase invariants of the combined mobile/correspondent view.
pub fn check_invariants(state: &HandoffState, cn: &CnSession, mn_ifaces: &[InterfaceDescriptor]) -> std::result::Result<(), String> {
    let addr_of = |id: &str| mn_ifaces.iter().find(|i| i.iface_id == id).map(|i| i.address);
    let old_addr = addr_of(&state.old_iface);
    let new_addr = addr_of(&state.new_iface);
    let ul_closed = mn_ifaces.iter().any(|i| i.iface_id == state.ul_media_iface && i.state == IfaceState::Closed);
    if ul_closed {
        return Err(format!("uplink media assigned to closed interface `{}`", state.ul_media_iface));
    }
    match (state.phase, state.procedure) {
        (HandoffPhase::Stable, _) => {
            if state.ul_media_iface != state.old_iface || Some(cn.media_dst) != old_addr {
                return Err("Stable but media not on the old interface".into());
            }
        }
        (HandoffPhase::Completed, _) => {
            if state.ul_media_iface != state.new_iface
                || Some(cn.media_dst) != new_addr
                || state.old_iface_state != IfaceState::Closed
            {
                return Err("Completed but media not fully on the new interface".into());
            }
        }
        (HandoffPhase::Switching, HandoffProcedure::Hard) if state.old_iface_state != IfaceState::Closed => {
            return Err("hard procedure switching with old interface open".into());
        }
        (HandoffPhase::Switching, HandoffProcedure::Soft) if state.ul_media_iface != state.old_iface => {
            return Err("soft procedure moved uplink before OK".into());
        }
        _ => {}
    }
    Ok(())
}

/// One line of the handoff log.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HandoffRecord {
    pub time: SimTime,
    pub endpoint: &'static str,
    pub transition: String,
    pub phase_before: String,
    pub phase_after: String,
}

impl HandoffRecord {
    pub const HEADER: &'static str = "time_us,endpoint,transition,phase_before,phase_after";

    pub fn to_line(&self) -> String {
        format!("{},{},{},{},{}", self.time, self.endpoint, self.transition, self.phase_before, self.phase_after)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sip::{MessageSizes, SessionDescriptor};
    use crate::types::Technology;
    use proptest::prelude::*;

    const CN: Address = Address::new(2, 0, 4000);

    fn ifaces() -> Vec<InterfaceDescriptor> {
        vec![
            InterfaceDescriptor {
                iface_id: "cellular".into(),
                technology: Technology::Cellular,
                address: Address::new(1, 0, 4000),
                q_weight: 0.9,
                state: IfaceState::Up,
            },
            InterfaceDescriptor {
                iface_id: "wlan".into(),
                technology: Technology::Wlan,
                address: Address::new(1, 1, 4000),
                q_weight: 0.5,
                state: IfaceState::Up,
            },
        ]
    }

    fn reinvite(new: Address) -> SipMessage {
        SipMessage::request(Method::Reinvite, "mn", "cn", "wlan", &MessageSizes::default()).with_session(SessionDescriptor {
            media_dst: new,
            media_src: new,
            codec: "G711".into(),
        })
    }

    fn apply(ifs: &mut [InterfaceDescriptor], actions: &[MnAction]) {
        for a in actions {
            if let MnAction::CloseIface(id) = a {
                ifs.iter_mut().find(|i| &i.iface_id == id).unwrap().state = IfaceState::Closed;
            }
        }
    }

    #[test]
    fn hard_trigger_breaks_before_make() {
        let mut s = HandoffState::new(HandoffProcedure::Hard, "cellular", "wlan");
        let a = s.mn_trigger(IfaceState::Up, SimTime::ZERO);
        assert_eq!(
            a,
            vec![
                MnAction::SendReinvite { via: "wlan".into() },
                MnAction::CloseIface("cellular".into()),
                MnAction::SwitchUplink("wlan".into()),
            ]
        );
        assert_eq!(s.phase, HandoffPhase::Switching);
        assert_eq!(s.mn_on_ok(SimTime::from_ms(10)), vec![]);
        assert_eq!(s.phase, HandoffPhase::Completed);
    }

    #[test]
    fn hybrid_keeps_old_open_until_ok() {
        let mut s = HandoffState::new(HandoffProcedure::Hybrid, "cellular", "wlan");
        let a = s.mn_trigger(IfaceState::Up, SimTime::ZERO);
        assert_eq!(a, vec![MnAction::SendReinvite { via: "wlan".into() }, MnAction::SwitchUplink("wlan".into())]);
        assert_eq!(s.old_iface_state, IfaceState::Up);
        assert_eq!(s.mn_on_ok(SimTime::from_ms(10)), vec![MnAction::CloseIface("cellular".into())]);
        assert_eq!(s.old_iface_state, IfaceState::Closed);
    }

    #[test]
    fn soft_media_trails_signaling() {
        let mut s = HandoffState::new(HandoffProcedure::Soft, "cellular", "wlan");
        assert_eq!(s.mn_trigger(IfaceState::Up, SimTime::ZERO), vec![MnAction::SendReinvite { via: "wlan".into() }]);
        assert_eq!(s.ul_media_iface, "cellular");
        assert_eq!(
            s.mn_on_ok(SimTime::from_ms(10)),
            vec![MnAction::SwitchUplink("wlan".into()), MnAction::CloseIface("cellular".into())]
        );
        assert_eq!(s.ul_media_iface, "wlan");
    }

    #[test]
    fn down_new_interface_refuses() {
        let mut s = HandoffState::new(HandoffProcedure::Soft, "cellular", "wlan");
        assert!(matches!(s.mn_trigger(IfaceState::Down, SimTime::ZERO)[0], MnAction::Refused(_)));
        assert_eq!(s.phase, HandoffPhase::Stable);
    }

    #[test]
    fn stray_ok_warns() {
        let mut s = HandoffState::new(HandoffProcedure::Hybrid, "cellular", "wlan");
        assert!(matches!(s.mn_on_ok(SimTime::ZERO)[0], MnAction::Warning(_)));
        assert_eq!(s.phase, HandoffPhase::Stable);
    }

    #[test]
    fn cn_switches_and_is_idempotent() {
        let ifs = ifaces();
        let mut cn = CnSession::new(ifs[0].address);
        let msg = reinvite(ifs[1].address);
        let a = cn_on_reinvite(&mut cn, &msg, ifs[1].address, SimTime::from_ms(7));
        assert_eq!(
            a,
            vec![
                CnAction::SendOk { to: ifs[1].address, via_iface: "wlan".into() },
                CnAction::SwitchDestination(ifs[1].address),
            ]
        );
        let again = cn_on_reinvite(&mut cn, &msg, ifs[1].address, SimTime::from_ms(507));
        assert_eq!(again, vec![CnAction::SendOk { to: ifs[1].address, via_iface: "wlan".into() }]);
        assert_eq!(cn.switched_at, Some(SimTime::from_ms(7)));
    }

    #[test]
    fn cn_closed_session_warns() {
        let ifs = ifaces();
        let mut cn = CnSession::new(ifs[0].address);
        cn.active = false;
        let a = cn_on_reinvite(&mut cn, &reinvite(ifs[1].address), ifs[1].address, SimTime::ZERO);
        assert!(matches!(a[..], [CnAction::Warning(_)]));
        assert_eq!(cn.media_dst, ifs[0].address);
    }

    #[test]
    fn routes_during_switching() {
        let mut ifs = ifaces();
        let cn = CnSession::new(ifs[0].address);

        let mut hard = HandoffState::new(HandoffProcedure::Hard, "cellular", "wlan");
        let stable = media_route(&hard, &cn, Direction::Ul, &ifs, CN).unwrap();
        assert!(matches!(stable, MediaRoute::Route { ref iface, .. } if iface == "cellular"));
        let a = hard.mn_trigger(IfaceState::Up, SimTime::ZERO);
        apply(&mut ifs, &a);
        assert_eq!(
            media_route(&hard, &cn, Direction::Dl, &ifs, CN).unwrap(),
            MediaRoute::NoRoute(DropReason::ClosedInterface)
        );

        let ifs = ifaces();
        let mut hybrid = HandoffState::new(HandoffProcedure::Hybrid, "cellular", "wlan");
        hybrid.mn_trigger(IfaceState::Up, SimTime::ZERO);
        assert!(matches!(
            media_route(&hybrid, &cn, Direction::Dl, &ifs, CN).unwrap(),
            MediaRoute::Route { ref iface, .. } if iface == "cellular"
        ));
        assert!(matches!(
            media_route(&hybrid, &cn, Direction::Ul, &ifs, CN).unwrap(),
            MediaRoute::Route { ref iface, .. } if iface == "wlan"
        ));
    }

    #[derive(Debug, Clone, Copy)]
    enum Ev {
        Trigger,
        ReinviteAtCn,
        OkAtMn,
    }

    proptest! {
        // Arbitrary interleavings of trigger, re-INVITE deliveries (including
        // duplicates) and OK deliveries keep every phase invariant.
        #[test]
        fn invariants_hold_under_any_interleaving(
            proc_idx in 0usize..3,
            choices in proptest::collection::vec(0usize..8, 0..12),
        ) {
            let procedure = HandoffProcedure::ALL[proc_idx];
            let mut ifs = ifaces();
            let mut mn = HandoffState::new(procedure, "cellular", "wlan");
            let mut cn = CnSession::new(ifs[0].address);
            let (mut reinvites_sent, mut oks_sent) = (0u32, 0u32);
            for c in choices {
                let mut enabled = vec![Ev::Trigger];
                if reinvites_sent > 0 { enabled.push(Ev::ReinviteAtCn); }
                if oks_sent > 0 { enabled.push(Ev::OkAtMn); }
                match enabled[c % enabled.len()] {
                    Ev::Trigger => {
                        let a = mn.mn_trigger(IfaceState::Up, SimTime::ZERO);
                        reinvites_sent += a.iter().filter(|x| matches!(x, MnAction::SendReinvite { .. })).count() as u32;
                        apply(&mut ifs, &a);
                    }
                    Ev::ReinviteAtCn => {
                        let a = cn_on_reinvite(&mut cn, &reinvite(ifs[1].address), ifs[1].address, SimTime::ZERO);
                        oks_sent += a.iter().filter(|x| matches!(x, CnAction::SendOk { .. })).count() as u32;
                    }
                    Ev::OkAtMn => {
                        let a = mn.mn_on_ok(SimTime::ZERO);
                        apply(&mut ifs, &a);
                    }
                }
                prop_assert_eq!(check_invariants(&mn, &cn, &ifs), Ok(()));
                prop_assert!(!matches!(
                    media_route(&mn, &cn, Direction::Ul, &ifs, CN).unwrap(),
                    MediaRoute::NoRoute(_)
                ));
            }
        }
    }
}
