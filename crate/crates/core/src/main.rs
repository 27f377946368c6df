use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use sipmob::experiment::{self, CampaignOptions, ExperimentConfig};
use sipmob::traffic::PacketTrace;
use sipmob::Error;

const EXIT_CONFIG: u8 = 1;
const EXIT_ABORTED: u8 = 2;
const EXIT_INTERNAL: u8 = 3;

#[derive(Parser)]
#[command(name = "sipmob", version, about = "SIP mobility simulator for multihomed VoIP nodes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every cell of a campaign and write traces, metrics and aggregates.
    Run {
        config: PathBuf,
        /// Base preset the config is laid over (overrides `preset` in the file).
        #[arg(long)]
        preset: Option<String>,
        /// Base seed; repetition i uses seed + i.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        reps: Option<u32>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads.
        #[arg(long)]
        parallel: Option<usize>,
    },
    /// Check a config and report every problem found.
    Validate {
        config: PathBuf,
        #[arg(long)]
        preset: Option<String>,
    },
    /// Recompute per-window metrics from an exported trace.
    RecomputeMetrics {
        trace: PathBuf,
        /// Config supplying E-model and window settings (defaults otherwise).
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory (default: `recomputed/` next to the trace).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load(path: &Path, preset: Option<&str>) -> Result<ExperimentConfig, Error> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    ExperimentConfig::from_toml_str(&text, preset, path)
}

fn report_config_error(e: &Error) -> ExitCode {
    match e {
        Error::ConfigInvalid(violations) => {
            eprintln!("error: invalid configuration ({} problems)", violations.len());
            for v in violations {
                eprintln!("  - {v}");
            }
        }
        other => eprintln!("error: {other}"),
    }
    ExitCode::from(EXIT_CONFIG)
}

fn warn_capacity(cfg: &ExperimentConfig) {
    for w in cfg.capacity_warnings() {
        eprintln!("warning: {w}");
    }
}

fn run(
    config: &Path,
    preset: Option<&str>,
    seed: Option<u64>,
    reps: Option<u32>,
    out: Option<PathBuf>,
    parallel: Option<usize>,
) -> ExitCode {
    let mut cfg = match load(config, preset) {
        Ok(c) => c,
        Err(e) => return report_config_error(&e),
    };
    if let Some(s) = seed {
        cfg.base_seed = s;
    }
    if let Some(r) = reps {
        cfg.repetitions = r;
    }
    if let Some(o) = out {
        cfg.output_dir = o;
    }
    let cfg = match cfg.validated() {
        Ok(c) => c,
        Err(e) => return report_config_error(&e),
    };
    warn_capacity(&cfg);

    let opts = CampaignOptions { parallel, ..CampaignOptions::default() };
    let report = match experiment::run_campaign(&cfg, &cfg.output_dir, &opts) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_INTERNAL);
        }
    };

    println!("{:<36} {:>5} {:>8} {:>12} {:>12}", "cell", "runs", "aborted", "lost_ul", "lost_dl");
    for c in &report.cells {
        let (ul, dl) = (c.lost_stat(Some(sipmob::Direction::Ul)), c.lost_stat(Some(sipmob::Direction::Dl)));
        let aborted = c.runs.len() - c.completed().count();
        println!(
            "{:<36} {:>5} {:>8} {:>5.2}±{:<6.2} {:>5.2}±{:<6.2}",
            c.cell,
            c.runs.len(),
            aborted,
            ul.mean,
            ul.std,
            dl.mean,
            dl.std
        );
    }
    println!("outputs written to {}", report.out_dir.display());

    let violations = report.violations();
    if !violations.is_empty() {
        for v in &violations {
            eprintln!("invariant violation: {v}");
        }
        return ExitCode::from(EXIT_INTERNAL);
    }
    let aborted = report.aborted_runs();
    if !aborted.is_empty() {
        for (id, reason) in &aborted {
            eprintln!("aborted: {id}: {reason}");
        }
        return ExitCode::from(EXIT_ABORTED);
    }
    ExitCode::SUCCESS
}

fn validate(config: &Path, preset: Option<&str>) -> ExitCode {
    let cfg = match load(config, preset).and_then(ExperimentConfig::validated) {
        Ok(c) => c,
        Err(e) => return report_config_error(&e),
    };
    warn_capacity(&cfg);
    let cells = cfg.codecs.len() * cfg.procedures.len() * cfg.switches.len();
    println!("ok: scenario {} with {cells} cells x {} repetitions", cfg.scenario, cfg.repetitions);
    ExitCode::SUCCESS
}

fn recompute(trace_path: &Path, config: Option<&Path>, out: Option<PathBuf>) -> ExitCode {
    let cfg = match config {
        Some(p) => match load(p, None).and_then(ExperimentConfig::validated) {
            Ok(c) => c,
            Err(e) => return report_config_error(&e),
        },
        None => ExperimentConfig::campaign_a(),
    };
    let trace = match PacketTrace::read_file(trace_path) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: {}: {e}", trace_path.display());
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    let out = out.unwrap_or_else(|| trace_path.parent().unwrap_or(Path::new(".")).join("recomputed"));
    match experiment::recompute_metrics(&trace, &cfg, &out) {
        Ok(paths) => {
            for p in paths {
                println!("{}", p.display());
            }
            ExitCode::SUCCESS
        }
        Err(e @ Error::TraceFormat { .. }) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_CONFIG)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_INTERNAL)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run { config, preset, seed, reps, out, parallel } => {
            run(&config, preset.as_deref(), seed, reps, out, parallel)
        }
        Command::Validate { config, preset } => validate(&config, preset.as_deref()),
        Command::RecomputeMetrics { trace, config, out } => recompute(&trace, config.as_deref(), out),
    }
}
