//! Experiment configuration: a TOML document laid over a named preset.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::codec::CodecProfile;
use crate::error::{Error, Result};
use crate::handoff::HandoffProcedure;
use crate::metrics::{EModelParams, WindowConfig};
use crate::simnet::{DelayModel, LinkModel, LinkState};
use crate::sip::{MessageSizes, SignalingTiming};
use crate::traffic::DEFAULT_HEADER_OVERHEAD;
use crate::types::Technology;

pub const PRESETS: [&str; 2] = ["campaign-A", "campaign-B"];

/// One-way propagation delay: a fixed value or an inclusive `[lo, hi]` range, in ms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DelaySpec {
    Fixed(f64),
    Range([f64; 2]),
}

impl DelaySpec {
    pub fn to_model(self) -> DelayModel {
        let us = |ms: f64| (ms * 1_000.0).round().max(0.0) as u64;
        match self {
            DelaySpec::Fixed(ms) => DelayModel::Fixed(us(ms)),
            DelaySpec::Range([lo, hi]) if lo == hi => DelayModel::Fixed(us(lo)),
            DelaySpec::Range([lo, hi]) => DelayModel::Uniform { lo_us: us(lo), hi_us: us(hi) },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkEvent {
    pub at_ms: u64,
    pub state: LinkState,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LinkConfig {
    /// Omitted means unlimited.
    pub bitrate_kbps: Option<u64>,
    pub delay_ms: DelaySpec,
    pub queue_capacity: u32,
    pub loss_prob: f64,
    pub state: LinkState,
    /// Poisson background load sharing the queue, in kbps.
    pub cross_traffic_kbps: f64,
    pub cross_packet_bytes: u32,
    pub events: Vec<LinkEvent>,
}

impl Default for LinkConfig {
    fn default() -> Self {
        LinkConfig {
            bitrate_kbps: None,
            delay_ms: DelaySpec::Fixed(0.0),
            queue_capacity: 50,
            loss_prob: 0.0,
            state: LinkState::Up,
            cross_traffic_kbps: 0.0,
            cross_packet_bytes: 200,
            events: Vec::new(),
        }
    }
}

impl LinkConfig {
    pub fn to_model(&self, link_id: &str) -> LinkModel {
        LinkModel {
            link_id: link_id.to_string(),
            bitrate_kbps: self.bitrate_kbps,
            prop_delay: self.delay_ms.to_model(),
            queue_capacity_pkts: self.queue_capacity,
            loss_prob: self.loss_prob,
            state: self.state,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InterfaceConfig {
    pub id: String,
    pub technology: Technology,
    pub q: f64,
    #[serde(default)]
    pub uplink: LinkConfig,
    #[serde(default)]
    pub downlink: LinkConfig,
}

impl InterfaceConfig {
    pub fn uplink_id(&self) -> String {
        format!("{}-ul", self.id)
    }

    pub fn downlink_id(&self) -> String {
        format!("{}-dl", self.id)
    }
}

/// Media moves from interface `from` to interface `to` mid-call.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SwitchDirection {
    pub from: String,
    pub to: String,
}

impl SwitchDirection {
    pub fn new(from: &str, to: &str) -> Self {
        SwitchDirection { from: from.into(), to: to.into() }
    }

    pub fn label(&self) -> String {
        format!("{}-to-{}", self.from, self.to)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scenario: String,
    pub codecs: Vec<String>,
    pub procedures: Vec<HandoffProcedure>,
    pub switches: Vec<SwitchDirection>,
    pub interfaces: Vec<InterfaceConfig>,
    /// Extra or replacement codec definitions, matched by name.
    #[serde(default)]
    pub codec_profiles: Vec<CodecProfile>,
    pub call_duration_s: f64,
    pub switch_time_s: f64,
    /// Trigger drawn uniformly in `switch_time ± jitter`.
    pub switch_jitter_ms: u64,
    /// Media starts at this absolute time; registration and call setup run before it.
    pub media_start_ms: u64,
    pub window_len_ms: u64,
    pub stride_ms: Option<u64>,
    /// Span after the trigger used for the switching-window loss percentage.
    pub switch_window_ms: u64,
    pub repetitions: u32,
    pub base_seed: u64,
    pub output_dir: PathBuf,
    pub burst_adjusted: bool,
    pub header_overhead_bytes: u32,
    pub watchdog_ms: u64,
    /// Delay between the correspondent node and the registrar.
    pub core_delay_ms: f64,
    pub write_run_files: bool,
    pub event_log: bool,
    #[serde(default)]
    pub signaling: SignalingTiming,
    #[serde(default)]
    pub message_sizes: MessageSizes,
    #[serde(default)]
    pub emodel: EModelParams,
}

fn cellular(q: f64, ul_kbps: u64, dl_kbps: u64) -> InterfaceConfig {
    let link = |kbps| LinkConfig {
        bitrate_kbps: Some(kbps),
        delay_ms: DelaySpec::Range([40.0, 80.0]),
        ..LinkConfig::default()
    };
    InterfaceConfig { id: "cellular".into(), technology: Technology::Cellular, q, uplink: link(ul_kbps), downlink: link(dl_kbps) }
}

fn wlan(q: f64) -> InterfaceConfig {
    let link = LinkConfig { bitrate_kbps: Some(54_000), delay_ms: DelaySpec::Fixed(5.0), ..LinkConfig::default() };
    InterfaceConfig { id: "wlan".into(), technology: Technology::Wlan, q, uplink: link.clone(), downlink: link }
}

impl ExperimentConfig {
    /// Clean links, both switch directions, all three codecs.
    pub fn campaign_a() -> Self {
        ExperimentConfig {
            scenario: "campaign-A".into(),
            codecs: CodecProfile::presets().into_iter().map(|c| c.name).collect(),
            procedures: HandoffProcedure::ALL.to_vec(),
            switches: vec![SwitchDirection::new("cellular", "wlan"), SwitchDirection::new("wlan", "cellular")],
            interfaces: vec![cellular(0.9, 384, 3_600), wlan(0.5)],
            codec_profiles: Vec::new(),
            call_duration_s: 60.0,
            switch_time_s: 30.0,
            switch_jitter_ms: 0,
            media_start_ms: 5_000,
            window_len_ms: 60,
            stride_ms: None,
            switch_window_ms: 2_000,
            repetitions: 50,
            base_seed: 1,
            output_dir: PathBuf::from("out"),
            burst_adjusted: true,
            header_overhead_bytes: DEFAULT_HEADER_OVERHEAD,
            watchdog_ms: 10_000,
            core_delay_ms: 1.0,
            write_run_files: true,
            event_log: false,
            signaling: SignalingTiming::default(),
            message_sizes: MessageSizes::default(),
            emodel: EModelParams::default(),
        }
    }

    /// Congested 64 kbps cellular access switching to WLAN.
    pub fn campaign_b() -> Self {
        let mut cell = cellular(0.9, 64, 64);
        for link in [&mut cell.uplink, &mut cell.downlink] {
            link.cross_traffic_kbps = 36.0;
        }
        ExperimentConfig {
            scenario: "campaign-B".into(),
            codecs: vec!["G729".into(), "G723.1".into()],
            switches: vec![SwitchDirection::new("cellular", "wlan")],
            interfaces: vec![cell, wlan(0.5)],
            ..Self::campaign_a()
        }
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "campaign-A" => Some(Self::campaign_a()),
            "campaign-B" => Some(Self::campaign_b()),
            _ => None,
        }
    }

    /// Parses `text` as an overlay on the preset it names (or on
    /// `preset_override`, or campaign-A when neither is given).
    pub fn from_toml_str(text: &str, preset_override: Option<&str>, origin: &Path) -> Result<Self> {
        let parse_err = |message: String| Error::ConfigParse { path: origin.to_path_buf(), message };
        let mut user: toml::Table = text.parse().map_err(|e: toml::de::Error| parse_err(e.to_string()))?;
        let named = match user.remove("preset") {
            Some(toml::Value::String(s)) => Some(s),
            Some(other) => return Err(parse_err(format!("field `preset`: expected a string, got {}", other.type_str()))),
            None => None,
        };
        let preset_name = preset_override.map(str::to_string).or(named).unwrap_or_else(|| "campaign-A".into());
        let base = Self::preset(&preset_name)
            .ok_or_else(|| parse_err(format!("unknown preset `{preset_name}` (known: {})", PRESETS.join(", "))))?;
        let mut merged = toml::Table::try_from(&base).map_err(|e| parse_err(e.to_string()))?;
        overlay(&mut merged, user);
        let cfg: ExperimentConfig = toml::Value::Table(merged).try_into().map_err(|e: toml::de::Error| parse_err(e.to_string()))?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn window_config(&self) -> WindowConfig {
        WindowConfig {
            window_len_ms: self.window_len_ms,
            stride_ms: self.stride_ms.unwrap_or(self.window_len_ms),
            burst_adjusted: self.burst_adjusted,
        }
    }

    /// Presets, then user definitions replacing same-named presets.
    pub fn codec_table(&self) -> Vec<CodecProfile> {
        let mut table = CodecProfile::presets();
        for c in &self.codec_profiles {
            match table.iter_mut().find(|p| p.name == c.name) {
                Some(slot) => *slot = c.clone(),
                None => table.push(c.clone()),
            }
        }
        table
    }

    pub fn codec(&self, name: &str) -> Option<CodecProfile> {
        self.codec_table().into_iter().find(|c| c.name == name)
    }

    pub fn interface(&self, id: &str) -> Option<&InterfaceConfig> {
        self.interfaces.iter().find(|i| i.id == id)
    }

    pub fn call_duration_us(&self) -> u64 {
        (self.call_duration_s * 1e6).round() as u64
    }

    pub fn switch_time_us(&self) -> u64 {
        (self.switch_time_s * 1e6).round() as u64
    }

    /// Every violated constraint; empty when the config is usable.
    pub fn validate(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !(self.call_duration_s > 0.0) {
            out.push(format!("call_duration_s must be positive (got {})", self.call_duration_s));
        }
        if !(self.switch_time_s >= 0.0) || self.switch_time_s >= self.call_duration_s {
            out.push(format!(
                "switch_time_s ({}) must be within [0, call_duration_s = {})",
                self.switch_time_s, self.call_duration_s
            ));
        } else {
            let j = self.switch_jitter_ms * 1_000;
            if j > self.switch_time_us() || self.switch_time_us() + j >= self.call_duration_us() {
                out.push(format!("switch_jitter_ms {} moves the trigger outside the call", self.switch_jitter_ms));
            }
        }
        if self.repetitions < 1 {
            out.push("repetitions must be >= 1".into());
        }
        if self.window_len_ms == 0 {
            out.push("window_len_ms must be positive".into());
        }
        if self.stride_ms == Some(0) {
            out.push("stride_ms must be positive".into());
        }
        if self.media_start_ms == 0 {
            out.push("media_start_ms must leave time for registration and call setup".into());
        }
        if self.watchdog_ms == 0 {
            out.push("watchdog_ms must be positive".into());
        }

        let table = self.codec_table();
        let known: Vec<&str> = table.iter().map(|c| c.name.as_str()).collect();
        if self.codecs.is_empty() {
            out.push("codecs: at least one codec required".into());
        }
        for name in &self.codecs {
            if !known.contains(&name.as_str()) {
                out.push(format!("codecs: unknown codec `{name}` (known: {})", known.join(", ")));
            }
        }
        for c in &table {
            if let Err(vs) = c.validate() {
                out.extend(vs.iter().map(|v| format!("codec `{}`: {v}", c.name)));
            }
        }
        if self.procedures.is_empty() {
            out.push("procedures: at least one procedure required".into());
        }

        let mut ids = BTreeSet::new();
        for i in &self.interfaces {
            if !ids.insert(i.id.as_str()) {
                out.push(format!("interfaces: duplicate id `{}`", i.id));
            }
            if !(0.0..=1.0).contains(&i.q) {
                out.push(format!("interface `{}`: q {} outside [0,1]", i.id, i.q));
            }
            for (lid, l) in [(i.uplink_id(), &i.uplink), (i.downlink_id(), &i.downlink)] {
                out.extend(l.to_model(&lid).violations());
                if let DelaySpec::Range([lo, hi]) = l.delay_ms {
                    if lo < 0.0 || hi < 0.0 {
                        out.push(format!("link `{lid}`: negative delay"));
                    }
                }
                if !(l.cross_traffic_kbps >= 0.0) {
                    out.push(format!("link `{lid}`: cross_traffic_kbps must be >= 0"));
                }
                if l.cross_traffic_kbps > 0.0 && l.cross_packet_bytes == 0 {
                    out.push(format!("link `{lid}`: cross_packet_bytes must be positive"));
                }
            }
        }
        if self.interfaces.is_empty() {
            out.push("interfaces: at least one interface required".into());
        }
        if self.switches.is_empty() {
            out.push("switches: at least one switch direction required".into());
        }
        for s in &self.switches {
            for end in [&s.from, &s.to] {
                if !ids.contains(end.as_str()) {
                    out.push(format!("switches: unknown interface `{end}`"));
                }
            }
            if s.from == s.to {
                out.push(format!("switches: `{}` switches to itself", s.from));
            }
        }
        out.extend(self.emodel.violations());
        out
    }

    pub fn validated(self) -> Result<Self> {
        let v = self.validate();
        if v.is_empty() {
            Ok(self)
        } else {
            Err(Error::ConfigInvalid(v))
        }
    }

    /// Links a codec's IP-level rate cannot fit through.
    pub fn capacity_warnings(&self) -> Vec<String> {
        let mut out = Vec::new();
        let used: BTreeSet<&str> = self.switches.iter().flat_map(|s| [s.from.as_str(), s.to.as_str()]).collect();
        for name in &self.codecs {
            let Some(codec) = self.codec(name) else { continue };
            let need = codec.ip_rate_kbps(self.header_overhead_bytes);
            for i in self.interfaces.iter().filter(|i| used.contains(i.id.as_str())) {
                for (lid, l) in [(i.uplink_id(), &i.uplink), (i.downlink_id(), &i.downlink)] {
                    if let Some(kbps) = l.bitrate_kbps {
                        if need > kbps as f64 {
                            out.push(format!(
                                "over capacity: {name} needs {need} kbps at IP level but link `{lid}` carries {kbps} kbps"
                            ));
                        }
                    }
                }
            }
        }
        out
    }
}

/// Loads, overlays and validates a config file.
pub fn load_config(path: &Path, preset_override: Option<&str>) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    ExperimentConfig::from_toml_str(&text, preset_override, path)?.validated()
}

fn overlay(base: &mut toml::Table, user: toml::Table) {
    for (k, v) in user {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(u)) => overlay(b, u),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<ExperimentConfig> {
        ExperimentConfig::from_toml_str(text, None, Path::new("test.toml")).and_then(ExperimentConfig::validated)
    }

    #[test]
    fn presets_are_valid() {
        for p in PRESETS {
            let cfg = ExperimentConfig::preset(p).unwrap();
            assert!(cfg.validate().is_empty(), "{p}: {:?}", cfg.validate());
        }
    }

    #[test]
    fn minimal_config_is_fully_defaulted() {
        let cfg = parse("preset = \"campaign-A\"\n").unwrap();
        assert_eq!(cfg, ExperimentConfig::campaign_a());
    }

    #[test]
    fn overrides_are_applied() {
        let cfg = parse("preset = \"campaign-B\"\nrepetitions = 3\n[signaling]\nmax_retransmissions = 0\n").unwrap();
        assert_eq!(cfg.repetitions, 3);
        assert_eq!(cfg.signaling.max_retransmissions, 0);
        assert_eq!(cfg.signaling.retransmit_interval_ms, 500);
        assert_eq!(cfg.codecs, vec!["G729", "G723.1"]);
    }

    #[test]
    fn late_switch_rejected() {
        let err = parse("switch_time_s = 70\ncall_duration_s = 60\n").unwrap_err();
        match err {
            Error::ConfigInvalid(v) => assert!(v.iter().any(|m| m.contains("switch_time_s")), "{v:?}"),
            other => panic!("{other}"),
        }
    }

    #[test]
    fn unknown_codec_lists_known() {
        let err = parse("codecs = [\"G722\"]\n").unwrap_err().to_string();
        assert!(err.contains("G722") && err.contains("G711, G729, G723.1"), "{err}");
    }

    #[test]
    fn every_violation_is_reported() {
        let err = parse("repetitions = 0\nwindow_len_ms = 0\ncodecs = [\"nope\"]\n").unwrap_err();
        match err {
            Error::ConfigInvalid(v) => assert_eq!(v.len(), 3, "{v:?}"),
            other => panic!("{other}"),
        }
    }

    #[test]
    fn syntax_errors_carry_position() {
        let err = parse("repetitions = \n").unwrap_err().to_string();
        assert!(err.contains("line 1"), "{err}");
    }

    #[test]
    fn unknown_field_named() {
        let err = parse("repetitionz = 3\n").unwrap_err().to_string();
        assert!(err.contains("repetitionz"), "{err}");
    }

    #[test]
    fn codec_profiles_override_presets() {
        let cfg = parse(
            "[[codec_profiles]]\nname = \"G711\"\nbitrate_kbps = 64.0\npacket_interval_ms = 20\npayload_bytes = 160\nie = 5.0\nbpl = 4.3\n",
        )
        .unwrap();
        assert_eq!(cfg.codec("G711").unwrap().ie, 5.0);
        assert_eq!(cfg.codec_table().len(), 3);
    }

    #[test]
    fn capacity_warning_for_g711_on_64k() {
        let mut cfg = ExperimentConfig::campaign_b();
        assert!(cfg.capacity_warnings().is_empty());
        cfg.codecs = vec!["G711".into()];
        let w = cfg.capacity_warnings();
        assert_eq!(w.len(), 2, "{w:?}");
        assert!(w[0].contains("80 kbps"));
    }

    #[test]
    fn round_trips_through_toml() {
        let cfg = ExperimentConfig::campaign_b();
        let back = ExperimentConfig::from_toml_str(&cfg.to_toml_string(), None, Path::new("x")).unwrap();
        assert_eq!(back, cfg);
    }
}
