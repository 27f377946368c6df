//! Experiment layer: configuration, single-call simulation, campaign
//! sweeps and cross-run aggregation.

pub mod aggregate;
pub mod campaign;
pub mod config;
pub mod run;

pub use aggregate::{aggregate, AggregateRow, Stat};
pub use campaign::{recompute_metrics, run_campaign, run_metrics, CampaignOptions, CampaignReport, CellReport, RunSummary};
pub use config::{load_config, DelaySpec, ExperimentConfig, InterfaceConfig, LinkConfig, LinkEvent, SwitchDirection};
pub use run::{run_once, FaultPlan, RunOptions, RunResult, RunSpec};
