//! Per-window statistics across the repetitions of one campaign cell.

use std::io::Write;

use crate::error::{Error, Result};
use crate::metrics::WindowMetrics;
use crate::types::SimTime;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stat {
    pub mean: f64,
    /// Sample standard deviation; 0 for a single value.
    pub std: f64,
}

impl Stat {
    /// Mean and sample std of `values`, independent of their order.
    pub fn of(values: &[f64]) -> Stat {
        if values.is_empty() {
            return Stat { mean: f64::NAN, std: f64::NAN };
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        if v.len() < 2 {
            return Stat { mean, std: 0.0 };
        }
        let mut sq: Vec<f64> = v.iter().map(|x| (x - mean) * (x - mean)).collect();
        sq.sort_by(f64::total_cmp);
        Stat { mean, std: (sq.iter().sum::<f64>() / (n - 1.0)).sqrt() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggregateRow {
    pub window_index: usize,
    pub window_start: SimTime,
    pub runs: usize,
    pub mean_delay_ms: Stat,
    pub ppl: Stat,
    pub burst_r: Stat,
    pub r_factor: Stat,
}

/// Elementwise statistics over runs sharing one window grid.
pub fn aggregate(runs: &[&[WindowMetrics]]) -> Result<Vec<AggregateRow>> {
    let Some(first) = runs.first() else {
        return Ok(Vec::new());
    };
    for (i, r) in runs.iter().enumerate() {
        if r.len() != first.len() {
            return Err(Error::WindowGridMismatch(format!("run {i} has {} windows, run 0 has {}", r.len(), first.len())));
        }
        if let Some(w) = r.iter().zip(first.iter()).position(|(a, b)| a.window_start != b.window_start) {
            return Err(Error::WindowGridMismatch(format!(
                "run {i} window {w} starts at {}, run 0 at {}",
                r[w].window_start, first[w].window_start
            )));
        }
    }
    let column = |w: usize, f: fn(&WindowMetrics) -> f64| -> Vec<f64> { runs.iter().map(|r| f(&r[w])).collect() };
    Ok((0..first.len())
        .map(|w| AggregateRow {
            window_index: w,
            window_start: first[w].window_start,
            runs: runs.len(),
            mean_delay_ms: Stat::of(&column(w, |m| m.mean_delay_ms)),
            ppl: Stat::of(&column(w, |m| m.ppl)),
            burst_r: Stat::of(&column(w, |m| m.burst_r)),
            r_factor: Stat::of(&column(w, |m| m.r_factor)),
        })
        .collect())
}

pub const AGGREGATE_HEADER: &str = "window_index,window_start_us,t_call_ms,runs,mean_delay_ms_mean,mean_delay_ms_std,\
ppl_mean,ppl_std,burst_r_mean,burst_r_std,r_factor_mean,r_factor_std";

/// `call_start` converts absolute window starts to call-relative time.
pub fn write_aggregate_csv<W: Write>(mut w: W, rows: &[AggregateRow], call_start: SimTime) -> std::io::Result<()> {
    writeln!(w, "{AGGREGATE_HEADER}")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            r.window_index,
            r.window_start.as_us(),
            r.window_start.since(call_start) as f64 / 1_000.0,
            r.runs,
            r.mean_delay_ms.mean,
            r.mean_delay_ms.std,
            r.ppl.mean,
            r.ppl.std,
            r.burst_r.mean,
            r.burst_r.std,
            r.r_factor.mean,
            r.r_factor.std
        )?;
    }
    w.flush()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn window(start_ms: u64, ppl: f64) -> WindowMetrics {
        WindowMetrics {
            window_start: SimTime::from_ms(start_ms),
            window_len_ms: 60,
            generated: 3,
            mean_delay_ms: 10.0,
            ppl,
            burst_r: 1.0,
            r_factor: 80.0,
            carried: false,
            carried_delay: false,
        }
    }

    #[test]
    fn identical_runs_have_zero_spread() {
        let a = vec![window(0, 0.1), window(60, 0.0)];
        let rows = aggregate(&[&a, &a]).unwrap();
        assert_eq!(rows[0].ppl, Stat { mean: 0.1, std: 0.0 });
        assert_eq!(rows[1].r_factor.mean, 80.0);
    }

    #[test]
    fn mean_of_two() {
        let (a, b) = (vec![window(0, 0.0)], vec![window(0, 0.2)]);
        let rows = aggregate(&[&a, &b]).unwrap();
        assert!((rows[0].ppl.mean - 0.1).abs() < 1e-15);
    }

    #[test]
    fn single_run_std_is_zero() {
        let a = vec![window(0, 0.3)];
        assert_eq!(aggregate(&[&a]).unwrap()[0].ppl.std, 0.0);
    }

    #[test]
    fn grid_mismatch_is_an_error() {
        let (a, b) = (vec![window(0, 0.0)], vec![window(20, 0.0)]);
        assert!(matches!(aggregate(&[&a, &b]), Err(Error::WindowGridMismatch(_))));
        let c = vec![window(0, 0.0), window(60, 0.0)];
        assert!(matches!(aggregate(&[&a, &c]), Err(Error::WindowGridMismatch(_))));
    }

    #[test]
    fn order_invariant() {
        let runs: Vec<Vec<WindowMetrics>> = [0.1, 0.7, 0.3, 1e-9, 0.25].iter().map(|&p| vec![window(0, p)]).collect();
        let fwd: Vec<&[WindowMetrics]> = runs.iter().map(Vec::as_slice).collect();
        let rev: Vec<&[WindowMetrics]> = runs.iter().rev().map(Vec::as_slice).collect();
        assert_eq!(aggregate(&fwd).unwrap(), aggregate(&rev).unwrap());
    }
}
