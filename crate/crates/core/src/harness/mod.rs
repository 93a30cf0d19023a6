//! Experiment orchestration: configs, rollouts, condition tables and figures.

pub mod config;
pub mod experiments;
pub mod plot;
pub mod rollout;

pub use config::{trial_seed, ExperimentConfig, PlantSpec, TrajectoryKind};
pub use experiments::{
    family, run_ablation, run_adaptation_sweep, run_baseline_comparison, run_interchangeability_matrix, BaselineConfig,
    BaselineReport, Report, ReportRow, DEFAULT_SWITCH_STEPS, TAIL_STEPS,
};
pub use plot::{emit_plots, error_band, workspace_cloud, ErrorBand};
pub use rollout::{load_config_weights, pooled_metric, run_rollout, run_trial, tail_mean, RolloutResult};
