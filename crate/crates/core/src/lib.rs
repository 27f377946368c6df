//! Discrete-event simulation of SIP-based mobility for multihomed nodes,
//! with per-window VoIP quality ratings.

pub mod codec;
pub mod error;
pub mod experiment;
pub mod handoff;
pub mod metrics;
pub mod simnet;
pub mod sip;
pub mod traffic;
pub mod types;

pub use codec::CodecProfile;
pub use error::{Error, Result};
pub use handoff::HandoffProcedure;
pub use types::{Address, Direction, SimTime};
