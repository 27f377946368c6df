//! Campaign runner: every codec x procedure x switch cell, repeated with
//! consecutive seeds, with per-run artifacts and cross-run aggregates.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;

use super::aggregate::{aggregate, write_aggregate_csv, Stat};
use super::config::ExperimentConfig;
use super::run::{cell_name, run_once, RunOptions, RunResult, RunSpec};
use crate::error::{Error, Result};
use crate::metrics::{whole_call_burst_ratio, window_series, write_metrics_csv, WindowMetrics};
use crate::traffic::PacketTrace;
use crate::types::{Direction, SimTime};

/// Window series of both directions of a finished run.
pub fn run_metrics(cfg: &ExperimentConfig, run: &RunResult) -> Result<[Vec<WindowMetrics>; 2]> {
    let series = |d| window_series(&run.trace.direction_records(d), &run.spec.codec, &cfg.emodel, &cfg.window_config());
    Ok([series(Direction::Ul)?, series(Direction::Dl)?])
}

/// Everything the campaign keeps about one run once its files are written.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub run_id: String,
    pub seed: u64,
    pub aborted: Option<String>,
    pub violations: Vec<String>,
    pub generated: [usize; 2],
    pub lost: [usize; 2],
    pub switch_generated: [usize; 2],
    pub switch_lost: [usize; 2],
    pub burst_r: [f64; 2],
    pub trigger_us: Option<u64>,
    pub cn_switch_us: Option<u64>,
    pub completed_us: Option<u64>,
}

impl RunSummary {
    fn of(cfg: &ExperimentConfig, run: &RunResult) -> Self {
        let span = cfg.switch_window_ms * 1_000;
        let per_dir = |f: &dyn Fn(Direction) -> usize| [f(Direction::Ul), f(Direction::Dl)];
        let in_switch = |d: Direction| match run.trigger_at {
            Some(t) => {
                run.trace.records().filter(|r| r.direction == d && r.gen_time >= t && r.gen_time < t.plus_us(span)).count()
            }
            None => 0,
        };
        let burst = |d| whole_call_burst_ratio(&run.trace.direction_records(d));
        RunSummary {
            run_id: run.run_id.clone(),
            seed: run.spec.seed,
            aborted: run.aborted.clone(),
            violations: run.violations.clone(),
            generated: per_dir(&|d| run.trace.generated(d)),
            lost: per_dir(&|d| run.lost(d)),
            switch_generated: per_dir(&in_switch),
            switch_lost: per_dir(&|d| run.trigger_at.map_or(0, |t| run.lost_between(d, t, span))),
            burst_r: [burst(Direction::Ul), burst(Direction::Dl)],
            trigger_us: run.trigger_at.map(SimTime::as_us),
            cn_switch_us: run.cn_switched_at.map(SimTime::as_us),
            completed_us: run.completed_at.map(SimTime::as_us),
        }
    }

    fn pct(lost: usize, generated: usize) -> f64 {
        if generated == 0 {
            0.0
        } else {
            100.0 * lost as f64 / generated as f64
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CellReport {
    pub cell: String,
    pub codec: String,
    pub procedure: String,
    pub from: String,
    pub to: String,
    pub runs: Vec<RunSummary>,
}

impl CellReport {
    pub fn completed(&self) -> impl Iterator<Item = &RunSummary> {
        self.runs.iter().filter(|r| r.aborted.is_none())
    }

    /// Statistics of lost packets per completed run; `None` direction means both.
    pub fn lost_stat(&self, direction: Option<Direction>) -> Stat {
        let v: Vec<f64> = self.completed().map(|r| pick(&r.lost, direction) as f64).collect();
        Stat::of(&v)
    }
}

fn pick(v: &[usize; 2], direction: Option<Direction>) -> usize {
    match direction {
        Some(Direction::Ul) => v[0],
        Some(Direction::Dl) => v[1],
        None => v[0] + v[1],
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CampaignReport {
    pub out_dir: PathBuf,
    pub cells: Vec<CellReport>,
    pub warnings: Vec<String>,
}

impl CampaignReport {
    pub fn aborted_runs(&self) -> Vec<(&str, &str)> {
        self.cells
            .iter()
            .flat_map(|c| c.runs.iter())
            .filter_map(|r| r.aborted.as_deref().map(|a| (r.run_id.as_str(), a)))
            .collect()
    }

    pub fn violations(&self) -> Vec<String> {
        self.cells
            .iter()
            .flat_map(|c| c.runs.iter())
            .flat_map(|r| r.violations.iter().map(move |v| format!("{}: {v}", r.run_id)))
            .collect()
    }

    pub fn cell(&self, name: &str) -> Option<&CellReport> {
        self.cells.iter().find(|c| c.cell == name)
    }
}

#[derive(Debug, Clone, Default)]
pub struct CampaignOptions {
    /// Worker threads; `None` uses rayon's default.
    pub parallel: Option<usize>,
    pub run: RunOptions,
}

#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    scenario: &'a str,
    base_seed: u64,
    repetitions: u32,
    seeds: Vec<u64>,
    window_len_ms: u64,
    stride_ms: u64,
    switch_window_ms: u64,
    burst_adjusted: bool,
    cells: Vec<&'a str>,
    aborted_runs: Vec<ManifestAbort<'a>>,
    violations: Vec<String>,
    warnings: &'a [String],
    config: String,
}

#[derive(Serialize)]
struct ManifestAbort<'a> {
    run_id: &'a str,
    reason: &'a str,
}

fn write_file(path: &Path, body: impl FnOnce(&mut BufWriter<fs::File>) -> std::io::Result<()>) -> Result<()> {
    let f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    body(&mut w).and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}

fn write_run_files(dir: &Path, run: &RunResult, series: &[Vec<WindowMetrics>; 2]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    run.trace.write_file(&dir.join("trace.csv"))?;
    write_file(&dir.join("signaling.log"), |w| w.write_all(run.signaling_log().as_bytes()))?;
    write_file(&dir.join("handoff.log"), |w| w.write_all(run.handoff_log().as_bytes()))?;
    for (d, s) in Direction::BOTH.iter().zip(series) {
        write_file(&dir.join(format!("metrics_{d}.csv")), |w| write_metrics_csv(w, &run.run_id, s))?;
    }
    if let Some(log) = &run.event_log {
        write_file(&dir.join("events.log"), |w| w.write_all(log.as_bytes()))?;
    }
    Ok(())
}

/// Runs every repetition of one cell, returning summaries in repetition order
/// and, for completed runs, their window series.
fn run_cell(
    cfg: &ExperimentConfig,
    specs: Vec<RunSpec>,
    out_dir: &Path,
    opts: &RunOptions,
) -> Result<Vec<(RunSummary, Option<[Vec<WindowMetrics>; 2]>)>> {
    specs
        .into_par_iter()
        .map(|spec| {
            let run = run_once(cfg, spec, opts)?;
            let series = run_metrics(cfg, &run)?;
            if cfg.write_run_files {
                write_run_files(&out_dir.join("runs").join(&run.run_id), &run, &series)?;
            }
            let summary = RunSummary::of(cfg, &run);
            Ok((summary, run.aborted.is_none().then_some(series)))
        })
        .collect()
}

/// Runs the whole grid and writes all artifacts under `out_dir`.
pub fn run_campaign(cfg: &ExperimentConfig, out_dir: &Path, opts: &CampaignOptions) -> Result<CampaignReport> {
    let pool = {
        let mut b = rayon::ThreadPoolBuilder::new();
        if let Some(n) = opts.parallel {
            b = b.num_threads(n.max(1));
        }
        b.build().map_err(|e| Error::Invariant(format!("thread pool: {e}")))?
    };
    let agg_dir = out_dir.join("aggregate");
    fs::create_dir_all(&agg_dir).map_err(|e| Error::io(&agg_dir, e))?;

    let mut cells = Vec::new();
    for codec_name in &cfg.codecs {
        let codec = cfg.codec(codec_name).ok_or_else(|| Error::ConfigInvalid(vec![format!("unknown codec `{codec_name}`")]))?;
        for &procedure in &cfg.procedures {
            for switch in &cfg.switches {
                let specs: Vec<RunSpec> = (0..cfg.repetitions)
                    .map(|rep| RunSpec {
                        codec: codec.clone(),
                        procedure,
                        switch: switch.clone(),
                        rep,
                        seed: cfg.base_seed.wrapping_add(u64::from(rep)),
                    })
                    .collect();
                let name = cell_name(&codec.name, procedure, switch);
                let results = pool.install(|| run_cell(cfg, specs, out_dir, &opts.run))?;

                for (i, d) in Direction::BOTH.iter().enumerate() {
                    let series: Vec<&[WindowMetrics]> =
                        results.iter().filter_map(|(_, s)| s.as_ref().map(|s| s[i].as_slice())).collect();
                    let rows = aggregate(&series)?;
                    let path = agg_dir.join(format!("{name}_{d}.csv"));
                    write_file(&path, |w| write_aggregate_csv(w, &rows, SimTime::from_ms(cfg.media_start_ms)))?;
                }
                cells.push(CellReport {
                    cell: name,
                    codec: codec.name.clone(),
                    procedure: procedure.to_string(),
                    from: switch.from.clone(),
                    to: switch.to.clone(),
                    runs: results.into_iter().map(|(s, _)| s).collect(),
                });
            }
        }
    }

    let report = CampaignReport { out_dir: out_dir.to_path_buf(), cells, warnings: cfg.capacity_warnings() };
    write_runs_table(&out_dir.join("runs.csv"), &report)?;
    write_loss_summary(&out_dir.join("loss_summary.csv"), &report)?;
    write_manifest(&out_dir.join("manifest.json"), cfg, &report)?;
    Ok(report)
}

fn opt(v: Option<u64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn write_runs_table(path: &Path, report: &CampaignReport) -> Result<()> {
    write_file(path, |w| {
        writeln!(
            w,
            "run_id,cell,seed,aborted,violations,generated_ul,generated_dl,lost_ul,lost_dl,\
switch_lost_ul,switch_lost_dl,burst_r_ul,burst_r_dl,trigger_us,cn_switch_us,completed_us"
        )?;
        for c in &report.cells {
            for r in &c.runs {
                writeln!(
                    w,
                    "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                    r.run_id,
                    c.cell,
                    r.seed,
                    u8::from(r.aborted.is_some()),
                    r.violations.len(),
                    r.generated[0],
                    r.generated[1],
                    r.lost[0],
                    r.lost[1],
                    r.switch_lost[0],
                    r.switch_lost[1],
                    r.burst_r[0],
                    r.burst_r[1],
                    opt(r.trigger_us),
                    opt(r.cn_switch_us),
                    opt(r.completed_us)
                )?;
            }
        }
        Ok(())
    })
}

pub const LOSS_SUMMARY_HEADER: &str = "cell,codec,procedure,from,to,runs,aborted,\
lost_ul_mean,lost_ul_std,lost_dl_mean,lost_dl_std,lost_total_mean,lost_total_std,\
loss_pct_call_ul,loss_pct_call_dl,loss_pct_switch_ul,loss_pct_switch_dl";

fn write_loss_summary(path: &Path, report: &CampaignReport) -> Result<()> {
    write_file(path, |w| {
        writeln!(w, "{LOSS_SUMMARY_HEADER}")?;
        for c in &report.cells {
            let done: Vec<&RunSummary> = c.completed().collect();
            let pct = |f: &dyn Fn(&RunSummary) -> f64| Stat::of(&done.iter().map(|r| f(r)).collect::<Vec<_>>()).mean;
            let (ul, dl, tot) = (c.lost_stat(Some(Direction::Ul)), c.lost_stat(Some(Direction::Dl)), c.lost_stat(None));
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                c.cell,
                c.codec,
                c.procedure,
                c.from,
                c.to,
                c.runs.len(),
                c.runs.len() - done.len(),
                ul.mean,
                ul.std,
                dl.mean,
                dl.std,
                tot.mean,
                tot.std,
                pct(&|r| RunSummary::pct(r.lost[0], r.generated[0])),
                pct(&|r| RunSummary::pct(r.lost[1], r.generated[1])),
                pct(&|r| RunSummary::pct(r.switch_lost[0], r.switch_generated[0])),
                pct(&|r| RunSummary::pct(r.switch_lost[1], r.switch_generated[1])),
            )?;
        }
        Ok(())
    })
}

fn write_manifest(path: &Path, cfg: &ExperimentConfig, report: &CampaignReport) -> Result<()> {
    let manifest = Manifest {
        tool: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        scenario: &cfg.scenario,
        base_seed: cfg.base_seed,
        repetitions: cfg.repetitions,
        seeds: (0..cfg.repetitions).map(|r| cfg.base_seed.wrapping_add(u64::from(r))).collect(),
        window_len_ms: cfg.window_len_ms,
        stride_ms: cfg.window_config().stride_ms,
        switch_window_ms: cfg.switch_window_ms,
        burst_adjusted: cfg.burst_adjusted,
        cells: report.cells.iter().map(|c| c.cell.as_str()).collect(),
        aborted_runs: report.aborted_runs().into_iter().map(|(run_id, reason)| ManifestAbort { run_id, reason }).collect(),
        violations: report.violations(),
        warnings: &report.warnings,
        config: cfg.to_toml_string(),
    };
    write_file(path, |w| {
        serde_json::to_writer_pretty(&mut *w, &manifest).map_err(std::io::Error::other)?;
        writeln!(w)
    })
}

/// Re-derives the per-direction metric files of an exported trace. The codec
/// is taken from the stream ids (`<codec>-<direction>`).
pub fn recompute_metrics(trace: &PacketTrace, cfg: &ExperimentConfig, out_dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut written = Vec::new();
    for d in Direction::BOTH {
        let records = trace.direction_records(d);
        let Some(first) = records.first() else { continue };
        let codec_name = first.stream_id.rsplit_once('-').map_or(first.stream_id.as_str(), |(c, _)| c);
        let codec = cfg
            .codec(codec_name)
            .ok_or_else(|| Error::TraceFormat { line: 0, message: format!("stream `{}`: unknown codec", first.stream_id) })?;
        let series = window_series(&records, &codec, &cfg.emodel, &cfg.window_config())?;
        let path = out_dir.join(format!("metrics_{d}.csv"));
        write_file(&path, |w| write_metrics_csv(w, &trace.run_id, &series))?;
        written.push(path);
    }
    Ok(written)
}
