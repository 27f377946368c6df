//! Shared value types: simulated time, endpoint addresses and node interfaces.

use std::fmt;

use serde::{Deserialize, Serialize};

/// Simulated instant, in whole microseconds since simulation start.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SimTime(u64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0);

    pub const fn from_us(us: u64) -> Self {
        SimTime(us)
    }

    pub const fn from_ms(ms: u64) -> Self {
        SimTime(ms * 1_000)
    }

    pub const fn from_secs(s: u64) -> Self {
        SimTime(s * 1_000_000)
    }

    pub const fn as_us(self) -> u64 {
        self.0
    }

    pub fn as_ms_f64(self) -> f64 {
        self.0 as f64 / 1_000.0
    }

    pub const fn plus_us(self, us: u64) -> Self {
        SimTime(self.0 + us)
    }

    /// Microseconds elapsed since `earlier`, zero if `earlier` is later.
    pub const fn since(self, earlier: SimTime) -> u64 {
        self.0.saturating_sub(earlier.0)
    }
}

impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Opaque network endpoint: (node, interface, port).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Address {
    pub node: u16,
    pub iface: u16,
    pub port: u16,
}

impl Address {
    pub const fn new(node: u16, iface: u16, port: u16) -> Self {
        Address { node, iface, port }
    }
}

impl fmt::Display for Address {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "n{}.i{}:{}", self.node, self.iface, self.port)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Technology {
    Wlan,
    Cellular,
    Wired,
}

impl fmt::Display for Technology {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Technology::Wlan => "wlan",
            Technology::Cellular => "cellular",
            Technology::Wired => "wired",
        })
    }
}

/// Administrative state of a node interface.
///
/// `Closed` is set by the handoff procedures: the interface no longer sources
/// media or signaling and nothing new is routed towards it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IfaceState {
    Up,
    Down,
    Closed,
}

impl fmt::Display for IfaceState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            IfaceState::Up => "up",
            IfaceState::Down => "down",
            IfaceState::Closed => "closed",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterfaceDescriptor {
    pub iface_id: String,
    pub technology: Technology,
    pub address: Address,
    pub q_weight: f64,
    pub state: IfaceState,
}

impl InterfaceDescriptor {
    pub fn is_up(&self) -> bool {
        self.state == IfaceState::Up
    }
}

/// Media direction relative to the mobile node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    /// Mobile node to correspondent node.
    Ul,
    /// Correspondent node to mobile node.
    Dl,
}

impl Direction {
    pub const BOTH: [Direction; 2] = [Direction::Ul, Direction::Dl];

    pub fn as_str(self) -> &'static str {
        match self {
            Direction::Ul => "ul",
            Direction::Dl => "dl",
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Direction {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ul" => Ok(Direction::Ul),
            "dl" => Ok(Direction::Dl),
            other => Err(format!("unknown direction `{other}`")),
        }
    }
}
