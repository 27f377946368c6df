//! Voice codec profiles and their packet-level characteristics.

use std::fmt;

use serde::{Deserialize, Serialize};

/// Maximum relative error tolerated between the declared bitrate and the one
/// implied by payload size and packet interval.
pub const RATE_TOLERANCE: f64 = 0.02;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodecProfile {
    pub name: String,
    pub bitrate_kbps: f64,
    pub packet_interval_ms: u32,
    pub payload_bytes: u32,
    /// Equipment impairment factor.
    pub ie: f64,
    /// Packet-loss robustness factor.
    pub bpl: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum CodecViolation {
    RateMismatch { implied_kbps: f64, declared_kbps: f64 },
    NonPositiveInterval,
    NonPositiveBitrate,
    NonPositivePayload,
    NegativeIe(f64),
    NonPositiveBpl(f64),
}

impl fmt::Display for CodecViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CodecViolation::RateMismatch { implied_kbps, declared_kbps } => write!(
                f,
                "rate identity: payload and interval imply {implied_kbps} kbps, declared {declared_kbps} kbps"
            ),
            CodecViolation::NonPositiveInterval => f.write_str("packet interval must be positive"),
            CodecViolation::NonPositiveBitrate => f.write_str("bitrate must be positive"),
            CodecViolation::NonPositivePayload => f.write_str("payload size must be positive"),
            CodecViolation::NegativeIe(v) => write!(f, "ie must be >= 0 (got {v})"),
            CodecViolation::NonPositiveBpl(v) => write!(f, "bpl must be > 0 (got {v})"),
        }
    }
}

impl CodecProfile {
    pub fn g711() -> Self {
        CodecProfile {
            name: "G711".into(),
            bitrate_kbps: 64.0,
            packet_interval_ms: 20,
            payload_bytes: 160,
            ie: 0.0,
            bpl: 25.1,
        }
    }

    pub fn g729() -> Self {
        CodecProfile {
            name: "G729".into(),
            bitrate_kbps: 8.0,
            packet_interval_ms: 20,
            payload_bytes: 20,
            ie: 11.0,
            bpl: 19.0,
        }
    }

    pub fn g723_1() -> Self {
        CodecProfile {
            name: "G723.1".into(),
            bitrate_kbps: 6.3,
            packet_interval_ms: 30,
            payload_bytes: 24,
            ie: 15.0,
            bpl: 16.1,
        }
    }

    pub fn presets() -> Vec<CodecProfile> {
        vec![Self::g711(), Self::g729(), Self::g723_1()]
    }

    pub fn preset(name: &str) -> Option<CodecProfile> {
        Self::presets().into_iter().find(|c| c.name == name)
    }

    pub fn packet_rate(&self) -> f64 {
        1_000.0 / self.packet_interval_ms as f64
    }

    pub fn packet_interval_us(&self) -> u64 {
        u64::from(self.packet_interval_ms) * 1_000
    }

    /// Bitrate implied by payload size and cadence.
    pub fn implied_kbps(&self) -> f64 {
        self.payload_bytes as f64 * 8.0 / self.packet_interval_ms as f64
    }

    /// Offered rate at IP level once `overhead_bytes` of headers are added.
    pub fn ip_rate_kbps(&self, overhead_bytes: u32) -> f64 {
        (self.payload_bytes + overhead_bytes) as f64 * 8.0 / self.packet_interval_ms as f64
    }

    pub fn validate(&self) -> Result<(), Vec<CodecViolation>> {
        let mut out = Vec::new();
        if self.packet_interval_ms == 0 {
            out.push(CodecViolation::NonPositiveInterval);
        }
        if !(self.bitrate_kbps > 0.0) {
            out.push(CodecViolation::NonPositiveBitrate);
        }
        if self.payload_bytes == 0 {
            out.push(CodecViolation::NonPositivePayload);
        }
        if !(self.ie >= 0.0) {
            out.push(CodecViolation::NegativeIe(self.ie));
        }
        if !(self.bpl > 0.0) {
            out.push(CodecViolation::NonPositiveBpl(self.bpl));
        }
        if self.packet_interval_ms > 0 && self.bitrate_kbps > 0.0 {
            let implied = self.implied_kbps();
            if (implied - self.bitrate_kbps).abs() / self.bitrate_kbps > RATE_TOLERANCE {
                out.push(CodecViolation::RateMismatch {
                    implied_kbps: implied,
                    declared_kbps: self.bitrate_kbps,
                });
            }
        }
        if out.is_empty() {
            Ok(())
        } else {
            Err(out)
        }
    }
}

pub fn codec_packet_rate(codec: &CodecProfile) -> f64 {
    codec.packet_rate()
}

pub fn validate_codec(codec: &CodecProfile) -> Result<(), Vec<CodecViolation>> {
    codec.validate()
}
