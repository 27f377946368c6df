//! SIP signaling model: message types, the registrar priority list, serial
//! forwarding with fallback and the rules for when a node re-registers.
//!
//! Only the parts of SIP the mobility procedures depend on are modelled. A
//! message is a typed value with a nominal wire size; there is no grammar.

mod fallback;
mod registrar;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::types::{Address, SimTime};

pub use fallback::{
    forward_with_fallback, AttemptRecord, FallbackForwarder, FallbackReport, ForwardOutcome, ForwardStep,
    ForwardTimer, SignalPath,
};
pub use registrar::{build_register, Contact, Registrar, RegistrarBinding};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Method {
    Register,
    Invite,
    Reinvite,
    Ok,
    Ack,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Register => "REGISTER",
            Method::Invite => "INVITE",
            Method::Reinvite => "REINVITE",
            Method::Ok => "OK",
            Method::Ack => "ACK",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionDescriptor {
    /// Where the sender of this descriptor wants to receive media.
    pub media_dst: Address,
    /// Where the sender of this descriptor sources media from.
    pub media_src: Address,
    pub codec: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SipMessage {
    pub method: Method,
    /// For `Ok`, the request being answered.
    pub answers: Option<Method>,
    pub from_uri: String,
    pub to_uri: String,
    pub contacts: Vec<Contact>,
    pub session: Option<SessionDescriptor>,
    pub via_iface: String,
    pub size_bytes: u32,
}

impl SipMessage {
    pub fn request(method: Method, from_uri: &str, to_uri: &str, via_iface: &str, sizes: &MessageSizes) -> Self {
        SipMessage {
            method,
            answers: None,
            from_uri: from_uri.to_string(),
            to_uri: to_uri.to_string(),
            contacts: Vec::new(),
            session: None,
            via_iface: via_iface.to_string(),
            size_bytes: sizes.of(method),
        }
    }

    pub fn with_session(mut self, session: SessionDescriptor) -> Self {
        self.session = Some(session);
        self
    }

    /// A 200 OK answering `self`, sent back over `via_iface`.
    pub fn ok(&self, via_iface: &str, sizes: &MessageSizes) -> SipMessage {
        SipMessage {
            method: Method::Ok,
            answers: Some(self.method),
            from_uri: self.to_uri.clone(),
            to_uri: self.from_uri.clone(),
            contacts: Vec::new(),
            session: None,
            via_iface: via_iface.to_string(),
            size_bytes: sizes.ok,
        }
    }

    /// Short label used in logs, e.g. `OK(REINVITE)`.
    pub fn label(&self) -> String {
        match self.answers {
            Some(m) => format!("{}({})", self.method, m),
            None => self.method.to_string(),
        }
    }
}

/// Nominal wire sizes of signaling messages, in bytes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MessageSizes {
    pub invite: u32,
    pub ok: u32,
    pub register: u32,
    pub ack: u32,
}

impl Default for MessageSizes {
    fn default() -> Self {
        MessageSizes { invite: 700, ok: 450, register: 450, ack: 450 }
    }
}

impl MessageSizes {
    pub fn of(&self, method: Method) -> u32 {
        match method {
            Method::Invite | Method::Reinvite => self.invite,
            Method::Ok => self.ok,
            Method::Register => self.register,
            Method::Ack => self.ack,
        }
    }
}

/// Retransmission and fallback timers for request transactions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SignalingTiming {
    pub retransmit_interval_ms: u64,
    pub max_retransmissions: u32,
    /// How long each priority entry is given to answer before the next one
    /// is tried. Retransmissions happen inside this window.
    pub fallback_timeout_ms: u64,
}

impl Default for SignalingTiming {
    fn default() -> Self {
        SignalingTiming { retransmit_interval_ms: 500, max_retransmissions: 1, fallback_timeout_ms: 2_000 }
    }
}

impl SignalingTiming {
    /// Offsets (from the first send) at which retransmissions go out, bounded
    /// by `window_us` when given.
    pub fn retransmit_offsets_us(&self, window_us: Option<u64>) -> Vec<u64> {
        (1..=u64::from(self.max_retransmissions))
            .map(|n| n * self.retransmit_interval_ms * 1_000)
            .filter(|&off| window_us.is_none_or(|w| off < w))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RegistrationTrigger {
    PowerOn,
    NewInterfaceUp,
    PriorityChange,
    MidCallSwitch,
}

/// Whether `trigger` requires the node to send a fresh REGISTER.
///
/// All interfaces are registered up front, so switching the media interface
/// of an ongoing call never touches the registrar.
pub fn needs_reregistration(trigger: RegistrationTrigger) -> bool {
    match trigger {
        RegistrationTrigger::PowerOn | RegistrationTrigger::NewInterfaceUp | RegistrationTrigger::PriorityChange => {
            true
        }
        RegistrationTrigger::MidCallSwitch => false,
    }
}

/// One line of the signaling log.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SignalingRecord {
    pub time: SimTime,
    pub label: String,
    pub method: Method,
    pub from: String,
    pub to: String,
    pub via_iface: String,
    pub outcome: String,
}

impl SignalingRecord {
    pub const HEADER: &'static str = "time_us,method,from,to,via_iface,outcome";

    pub fn to_line(&self) -> String {
        format!("{},{},{},{},{},{}", self.time, self.label, self.from, self.to, self.via_iface, self.outcome)
    }
}
