//! Loss, one-way delay, burst ratio and E-model R-factor over sliding windows
//! of a packet trace.
//!
//! Everything here is a pure function of the trace records, so metrics
//! recomputed from an exported trace match the in-run values exactly.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::codec::CodecProfile;
use crate::error::{Error, Result};
use crate::traffic::PacketRecord;
use crate::types::SimTime;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EModelParams {
    pub r0: f64,
    /// Delay impairment slope below the knee, per ms.
    pub delay_coeff_a: f64,
    /// Extra slope above the knee, per ms.
    pub delay_coeff_b: f64,
    pub delay_threshold_ms: f64,
    pub loss_ceiling: f64,
}

impl Default for EModelParams {
    fn default() -> Self {
        EModelParams { r0: 93.2, delay_coeff_a: 0.024, delay_coeff_b: 0.11, delay_threshold_ms: 177.3, loss_ceiling: 95.0 }
    }
}

impl EModelParams {
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (name, v) in [
            ("r0", self.r0),
            ("delay_coeff_a", self.delay_coeff_a),
            ("delay_coeff_b", self.delay_coeff_b),
            ("delay_threshold_ms", self.delay_threshold_ms),
            ("loss_ceiling", self.loss_ceiling),
        ] {
            if !(v > 0.0) {
                out.push(format!("emodel.{name} must be positive (got {v})"));
            }
        }
        if self.r0 > 100.0 {
            out.push(format!("emodel.r0 must be <= 100 (got {})", self.r0));
        }
        out
    }

    /// Delay impairment `Id` for a one-way delay in ms.
    pub fn id_delay_impairment(&self, d_ms: f64) -> f64 {
        let mut id = self.delay_coeff_a * d_ms;
        if d_ms > self.delay_threshold_ms {
            id += self.delay_coeff_b * (d_ms - self.delay_threshold_ms);
        }
        id
    }

    /// Effective equipment impairment under loss ratio `ppl` with burst ratio
    /// `burst_r`.
    pub fn ie_effective(&self, codec: &CodecProfile, ppl: f64, burst_r: f64) -> Result<f64> {
        if !(burst_r > 0.0) {
            return Err(Error::NonPositiveBurstRatio(burst_r));
        }
        if ppl == 0.0 {
            return Ok(codec.ie);
        }
        let pct = 100.0 * ppl;
        Ok(codec.ie + (self.loss_ceiling - codec.ie) * pct / (pct / burst_r + codec.bpl))
    }

    /// Unclamped rating; may go negative under heavy loss.
    pub fn r_factor(&self, mean_delay_ms: f64, ppl: f64, burst_r: f64, codec: &CodecProfile) -> Result<f64> {
        Ok(self.r0 - self.id_delay_impairment(mean_delay_ms) - self.ie_effective(codec, ppl, burst_r)?)
    }
}

/// Fraction of packets lost; `None` for an empty window.
pub fn loss_ratio(records: &[PacketRecord]) -> Option<f64> {
    if records.is_empty() {
        return None;
    }
    let lost = records.iter().filter(|r| r.is_lost()).count();
    Some(lost as f64 / records.len() as f64)
}

/// Mean one-way delay of delivered packets, in ms; `None` if nothing arrived.
pub fn mean_delay(records: &[PacketRecord]) -> Option<f64> {
    let (sum, n) = records.iter().filter_map(|r| r.delay_us()).fold((0u64, 0u64), |(s, n), d| (s + d, n + 1));
    (n > 0).then(|| sum as f64 / n as f64 / 1_000.0)
}

/// Observed mean loss-burst length relative to the mean expected for
/// independent losses at rate `ppl`, `1 / (1 - ppl)`.
///
/// Defined as 1 when nothing was lost. At `ppl = 1` the expectation is
/// unbounded and the observed mean burst length is returned instead.
pub fn burst_ratio(losses: &[bool], ppl: f64) -> f64 {
    let lost = losses.iter().filter(|&&l| l).count();
    let bursts = losses.iter().enumerate().filter(|&(i, &l)| l && (i == 0 || !losses[i - 1])).count();
    if ppl <= 0.0 || bursts == 0 {
        return 1.0;
    }
    let observed = lost as f64 / bursts as f64;
    if ppl >= 1.0 {
        return observed;
    }
    observed * (1.0 - ppl)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowConfig {
    pub window_len_ms: u64,
    pub stride_ms: u64,
    /// When false the rating uses a burst ratio of 1 (independent losses).
    pub burst_adjusted: bool,
}

impl Default for WindowConfig {
    fn default() -> Self {
        WindowConfig { window_len_ms: 60, stride_ms: 60, burst_adjusted: true }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindowMetrics {
    pub window_start: SimTime,
    pub window_len_ms: u64,
    pub generated: usize,
    pub mean_delay_ms: f64,
    pub ppl: f64,
    pub burst_r: f64,
    pub r_factor: f64,
    /// No packet generated in the window; all values copied from the previous one.
    pub carried: bool,
    /// Every packet lost; delay copied from the last window with deliveries.
    pub carried_delay: bool,
}

/// Windows tiled from the first generated packet at `stride_ms`, each
/// holding the packets generated in `[start, start + window_len_ms)`.
pub fn window_series(
    records: &[PacketRecord],
    codec: &CodecProfile,
    params: &EModelParams,
    cfg: &WindowConfig,
) -> Result<Vec<WindowMetrics>> {
    let mut sorted: Vec<&PacketRecord> = records.iter().collect();
    sorted.sort_by_key(|r| (r.gen_time, r.seq));
    let (Some(first), Some(last)) = (sorted.first(), sorted.last()) else {
        return Ok(Vec::new());
    };
    let (origin, last) = (first.gen_time, last.gen_time);
    let len_us = cfg.window_len_ms * 1_000;
    let stride_us = cfg.stride_ms * 1_000;
    if len_us == 0 || stride_us == 0 {
        return Err(Error::Invariant("window length and stride must be positive".into()));
    }

    let mut out: Vec<WindowMetrics> = Vec::new();
    let mut last_delay: Option<f64> = None;
    let mut start = origin;
    while start <= last {
        let end = start.plus_us(len_us);
        let lo = sorted.partition_point(|r| r.gen_time < start);
        let hi = sorted.partition_point(|r| r.gen_time < end);
        let window: Vec<PacketRecord> = sorted[lo..hi].iter().map(|&r| r.clone()).collect();

        let metrics = match (loss_ratio(&window), out.last()) {
            (None, Some(prev)) => WindowMetrics { window_start: start, generated: 0, carried: true, ..prev.clone() },
            (None, None) => WindowMetrics {
                window_start: start,
                window_len_ms: cfg.window_len_ms,
                generated: 0,
                mean_delay_ms: 0.0,
                ppl: 0.0,
                burst_r: 1.0,
                r_factor: params.r_factor(0.0, 0.0, 1.0, codec)?,
                carried: true,
                carried_delay: true,
            },
            (Some(ppl), _) => {
                let (delay, carried_delay) = match mean_delay(&window) {
                    Some(d) => {
                        last_delay = Some(d);
                        (d, false)
                    }
                    None => (last_delay.unwrap_or(0.0), true),
                };
                let losses: Vec<bool> = window.iter().map(PacketRecord::is_lost).collect();
                let burst_r = burst_ratio(&losses, ppl);
                let rating_burst = if cfg.burst_adjusted { burst_r } else { 1.0 };
                WindowMetrics {
                    window_start: start,
                    window_len_ms: cfg.window_len_ms,
                    generated: window.len(),
                    mean_delay_ms: delay,
                    ppl,
                    burst_r,
                    r_factor: params.r_factor(delay, ppl, rating_burst, codec)?,
                    carried: false,
                    carried_delay,
                }
            }
        };
        out.push(metrics);
        start = start.plus_us(stride_us);
    }
    Ok(out)
}

/// Burst ratio over a whole stream ordered by sequence number.
pub fn whole_call_burst_ratio(records: &[PacketRecord]) -> f64 {
    let mut sorted: Vec<&PacketRecord> = records.iter().collect();
    sorted.sort_by_key(|r| r.seq);
    let losses: Vec<bool> = sorted.iter().map(|r| r.is_lost()).collect();
    burst_ratio(&losses, loss_ratio(records).unwrap_or(0.0))
}

pub const METRICS_HEADER: &str = "run_id,window_start_us,mean_delay_ms,ppl,burst_r,r_factor,carried,carried_delay";

pub fn write_metrics_csv<W: Write>(mut w: W, run_id: &str, series: &[WindowMetrics]) -> std::io::Result<()> {
    writeln!(w, "{METRICS_HEADER}")?;
    for m in series {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{}",
            run_id,
            m.window_start.as_us(),
            m.mean_delay_ms,
            m.ppl,
            m.burst_r,
            m.r_factor,
            u8::from(m.carried),
            u8::from(m.carried_delay)
        )?;
    }
    w.flush()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simnet::DropReason;
    use crate::traffic::PacketOutcome;
    use crate::types::Direction;
    use proptest::prelude::*;

    fn rec(seq: u64, gen_ms: u64, delay_ms: Option<u64>) -> PacketRecord {
        let gen_time = SimTime::from_ms(gen_ms);
        PacketRecord {
            stream_id: "s".into(),
            direction: Direction::Dl,
            seq,
            gen_time,
            send_iface: "wlan".into(),
            outcome: match delay_ms {
                Some(d) => PacketOutcome::Delivered(gen_time.plus_us(d * 1_000)),
                None => PacketOutcome::Lost(DropReason::RandomLoss),
            },
        }
    }

    fn stream(delays: &[Option<u64>], interval_ms: u64) -> Vec<PacketRecord> {
        delays.iter().enumerate().map(|(i, &d)| rec(i as u64, i as u64 * interval_ms, d)).collect()
    }

    #[test]
    fn loss_ratios() {
        assert_eq!(loss_ratio(&stream(&[Some(5); 3], 20)), Some(0.0));
        let mut ten = vec![Some(5); 10];
        ten[4] = None;
        assert_eq!(loss_ratio(&stream(&ten, 20)), Some(0.1));
        assert_eq!(loss_ratio(&stream(&[None, None], 20)), Some(1.0));
        assert_eq!(loss_ratio(&[]), None);
    }

    #[test]
    fn mean_delays() {
        assert_eq!(mean_delay(&stream(&[Some(8), Some(10), Some(12)], 20)), Some(10.0));
        assert_eq!(mean_delay(&stream(&[Some(55)], 20)), Some(55.0));
        assert_eq!(mean_delay(&stream(&[None, None], 20)), None);
    }

    #[test]
    fn burst_ratios() {
        // 50 packets, 5 isolated losses
        let isolated: Vec<bool> = (0..50).map(|i| i % 10 == 3).collect();
        assert!((burst_ratio(&isolated, 0.1) - 0.9).abs() < 1e-12);
        // one burst of 5
        let burst: Vec<bool> = (0..50).map(|i| (20..25).contains(&i)).collect();
        assert!((burst_ratio(&burst, 0.1) - 4.5).abs() < 1e-12);
        assert_eq!(burst_ratio(&[false; 8], 0.0), 1.0);
        assert_eq!(burst_ratio(&[true; 3], 1.0), 3.0);
    }

    #[test]
    fn delay_impairment() {
        let p = EModelParams::default();
        assert_eq!(p.id_delay_impairment(0.0), 0.0);
        assert!((p.id_delay_impairment(100.0) - 2.4).abs() < 1e-12);
        assert!((p.id_delay_impairment(200.0) - 7.297).abs() < 1e-9);
    }

    #[test]
    fn effective_equipment_impairment() {
        let p = EModelParams::default();
        assert_eq!(p.ie_effective(&CodecProfile::g711(), 0.0, 1.0).unwrap(), 0.0);
        assert!((p.ie_effective(&CodecProfile::g729(), 0.02, 1.0).unwrap() - 19.0).abs() < 1e-9);
        let g723 = p.ie_effective(&CodecProfile::g723_1(), 0.05, 2.0).unwrap();
        assert!((g723 - (15.0 + 80.0 * 5.0 / 18.6)).abs() < 1e-9);
        assert!((g723 - 36.51).abs() < 0.005);
        assert!(matches!(p.ie_effective(&CodecProfile::g711(), 0.1, 0.0), Err(Error::NonPositiveBurstRatio(_))));
    }

    #[test]
    fn ratings() {
        let p = EModelParams::default();
        assert_eq!(p.r_factor(0.0, 0.0, 1.0, &CodecProfile::g711()).unwrap(), 93.2);
        assert!((p.r_factor(60.0, 0.0, 1.0, &CodecProfile::g723_1()).unwrap() - 76.76).abs() < 1e-9);
        assert!((p.r_factor(5.0, 0.0, 1.0, &CodecProfile::g729()).unwrap() - 82.08).abs() < 1e-9);
    }

    #[test]
    fn unit_burst_ratio_is_the_independent_loss_form() {
        let p = EModelParams::default();
        for codec in CodecProfile::presets() {
            for i in 0..=20 {
                let ppl = i as f64 / 20.0;
                let pct = 100.0 * ppl;
                let plain = codec.ie + (95.0 - codec.ie) * pct / (pct + codec.bpl);
                assert!((p.ie_effective(&codec, ppl, 1.0).unwrap() - plain).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn windows_tile_and_carry() {
        // 20 ms cadence: window 0 = seq 0..3, window 1 = seq 3..6 (all lost), window 2 = seq 6
        let recs = stream(&[Some(10), Some(10), Some(10), None, None, None, Some(20)], 20);
        let s = window_series(&recs, &CodecProfile::g711(), &EModelParams::default(), &WindowConfig::default()).unwrap();
        assert_eq!(s.len(), 3);
        assert_eq!(s.iter().map(|w| w.generated).sum::<usize>(), 7);
        assert_eq!((s[1].ppl, s[1].mean_delay_ms, s[1].carried_delay), (1.0, 10.0, true));
        assert_eq!(s[1].burst_r, 3.0);
        assert!(s[1].r_factor < s[0].r_factor);
        assert_eq!(s[2].mean_delay_ms, 20.0);
    }

    #[test]
    fn empty_window_is_carried() {
        let recs = vec![rec(0, 0, Some(5)), rec(1, 200, Some(5))];
        let s = window_series(&recs, &CodecProfile::g711(), &EModelParams::default(), &WindowConfig::default()).unwrap();
        assert_eq!(s.len(), 4);
        assert!(s[1].carried && s[2].carried && !s[3].carried);
        assert_eq!(s[1].r_factor, s[0].r_factor);
        assert_eq!(s[2].window_start, SimTime::from_ms(120));
    }

    #[test]
    fn plain_loss_mode_ignores_bursts() {
        let recs = stream(&[Some(5), None, None], 20);
        let p = EModelParams::default();
        let cfg = WindowConfig { burst_adjusted: false, ..WindowConfig::default() };
        let s = window_series(&recs, &CodecProfile::g729(), &p, &cfg).unwrap();
        let expected = p.r_factor(5.0, 2.0 / 3.0, 1.0, &CodecProfile::g729()).unwrap();
        assert_eq!(s[0].r_factor, expected);
    }

    #[test]
    fn csv_rows() {
        let recs = stream(&[Some(10), None, Some(10)], 20);
        let s = window_series(&recs, &CodecProfile::g711(), &EModelParams::default(), &WindowConfig::default()).unwrap();
        let mut buf = Vec::new();
        write_metrics_csv(&mut buf, "r", &s).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some(METRICS_HEADER));
        assert!(lines.next().unwrap().starts_with("r,0,10,0.3333333333333333,"));
    }

    proptest! {
        #[test]
        fn rating_monotone_in_loss_and_delay(
            codec_idx in 0usize..3, d in 0.0f64..400.0, dd in 0.0f64..50.0,
            ppl in 0.0f64..1.0, dp in 0.0f64..0.5, burst in 0.1f64..5.0,
        ) {
            let codec = &CodecProfile::presets()[codec_idx];
            let p = EModelParams::default();
            let base = p.r_factor(d, ppl, burst, codec).unwrap();
            prop_assert!(p.r_factor(d + dd, ppl, burst, codec).unwrap() <= base);
            prop_assert!(p.r_factor(d, (ppl + dp).min(1.0), burst, codec).unwrap() <= base + 1e-12);
            prop_assert!(base <= p.r0);
        }

        #[test]
        fn tiled_windows_conserve_packets(
            interval in prop::sample::select(vec![20u64, 30]),
            lost in proptest::collection::vec(any::<bool>(), 1..400),
        ) {
            let delays: Vec<Option<u64>> = lost.iter().map(|&l| if l { None } else { Some(7) }).collect();
            let recs = stream(&delays, interval);
            let s = window_series(&recs, &CodecProfile::g711(), &EModelParams::default(), &WindowConfig::default()).unwrap();
            prop_assert_eq!(s.iter().map(|w| w.generated).sum::<usize>(), recs.len());
            for w in &s {
                prop_assert!((0.0..=1.0).contains(&w.ppl));
                prop_assert!(w.burst_r >= 0.0);
                prop_assert!(w.r_factor <= 93.2);
            }
        }
    }
}
