//! Deterministic discrete-event engine and link models.

mod link;
mod rng;
mod scheduler;

pub use link::{DelayModel, DropReason, Link, LinkId, LinkModel, LinkState, LinkStats, Network, Transmission};
pub use rng::RngStreams;
pub use scheduler::{Event, EventHandle, EventLabel, Scheduler};
