use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::baseline::{angle_trajectory, grid_sweep, ArmHybrid, ArmParams, ArmSetup, CcConfig, GridReport};
use crate::domain::{Metric, RolloutLog};
use crate::error::{invalid, Result};
use crate::hybrid::{ControllerSpec, HybridConfig};
use crate::lstm::{LstmSpec, LstmWeights, TrainConfig};
use crate::par;

use super::config::{ExperimentConfig, PlantSpec, TrajectoryKind};
use super::rollout::{pooled_metric, run_rollout, tail_mean};

/// Steps at the end of each rollout used for the oscillation check.
pub const TAIL_STEPS: usize = 50;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub condition: String,
    pub trajectory: String,
    pub rollouts: usize,
    pub metric: Metric,
    /// Mean error over the last `TAIL_STEPS` of every rollout.
    pub tail_mean: f64,
}

/// One table of conditions, with the logs behind each row kept for plotting.
#[derive(Clone, Debug)]
pub struct Report {
    pub name: String,
    pub config_hash: String,
    pub rows: Vec<ReportRow>,
    pub logs: Vec<Vec<RolloutLog>>,
}

impl Report {
    pub fn row(&self, condition: &str, trajectory: &str) -> Option<&ReportRow> {
        self.rows
            .iter()
            .find(|r| r.condition == condition && r.trajectory == trajectory)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("config_hash,condition,trajectory,rollouts,mean_error,std_error,max_error,tail_mean\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{}",
                self.config_hash,
                r.condition,
                r.trajectory,
                r.rollouts,
                r.metric.mean_error,
                r.metric.std_error,
                r.metric.max_error,
                r.tail_mean
            );
        }
        s
    }
}

/// A labelled set of configs pooled into one report row.
struct Cell {
    condition: String,
    trajectory: TrajectoryKind,
    configs: Vec<ExperimentConfig>,
}

fn run_cells(name: &str, base: &ExperimentConfig, cells: Vec<Cell>, weights: Option<&LstmWeights>) -> Result<Report> {
    base.validate()?;
    let jobs: Vec<(usize, &ExperimentConfig)> = cells
        .iter()
        .enumerate()
        .flat_map(|(i, c)| c.configs.iter().map(move |cfg| (i, cfg)))
        .collect();
    let results = par::map(&jobs, |&(_, cfg)| run_rollout(cfg, weights))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let mut grouped: Vec<Vec<RolloutLog>> = vec![Vec::new(); cells.len()];
    for ((i, _), r) in jobs.iter().zip(results) {
        grouped[*i].extend(r.logs);
    }
    let rows = cells
        .iter()
        .zip(&grouped)
        .map(|(c, logs)| {
            Ok(ReportRow {
                condition: c.condition.clone(),
                trajectory: c.trajectory.label().to_string(),
                rollouts: logs.len(),
                metric: pooled_metric(logs)?,
                tail_mean: tail_mean(logs, TAIL_STEPS),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Report {
        name: name.to_string(),
        config_hash: base.hash(),
        rows,
        logs: grouped,
    })
}

/// Robot families: rotated configurations and perturbed units.
pub fn family(base: &ExperimentConfig, name: &str) -> Result<Vec<PlantSpec>> {
    match name {
        "alpha0" => Ok(vec![PlantSpec::Nominal]),
        "alpha*" => Ok((1..=3).map(|turns| PlantSpec::Rotated { turns }).collect()),
        "beta*" => Ok(base
            .unit_seeds
            .iter()
            .map(|&seed| PlantSpec::Perturbed {
                severity: base.severity,
                seed,
            })
            .collect()),
        _ => Err(invalid(format!("unknown robot family {name:?}"))),
    }
}

fn hybrid_of(base: &ExperimentConfig) -> ControllerSpec {
    match &base.controller {
        ControllerSpec::Hybrid(c) => ControllerSpec::Hybrid(c.clone()),
        _ => ControllerSpec::Hybrid(HybridConfig::default()),
    }
}

fn variant(base: &ExperimentConfig, plant: &PlantSpec, controller: &ControllerSpec, traj: TrajectoryKind) -> ExperimentConfig {
    ExperimentConfig {
        plant: plant.clone(),
        controller: controller.clone(),
        trajectory: traj,
        ..base.clone()
    }
}

const TRAJECTORIES: [TrajectoryKind; 2] = [TrajectoryKind::A, TrajectoryKind::B];

/// LSTM-only and hybrid on every family member and trajectory. Rows are
/// `<family>-LSTM` and `<family>-Hybrid`; the nominal family is included
/// as a reference.
pub fn run_interchangeability_matrix(base: &ExperimentConfig, weights: &LstmWeights) -> Result<Report> {
    let controllers = [("LSTM", ControllerSpec::LstmOnly), ("Hybrid", hybrid_of(base))];
    let mut cells = Vec::new();
    for fam in ["alpha0", "alpha*", "beta*"] {
        let plants = family(base, fam)?;
        for (label, ctl) in &controllers {
            for traj in TRAJECTORIES {
                cells.push(Cell {
                    condition: format!("{fam}-{label}"),
                    trajectory: traj,
                    configs: plants.iter().map(|p| variant(base, p, ctl, traj)).collect(),
                });
            }
        }
    }
    run_cells("matrix", base, cells, Some(weights))
}

/// Control periods for the 4 Hz and 2.5 Hz variants.
pub const FAST_PERIOD: f64 = 0.25;
pub const SLOW_PERIOD: f64 = 0.4;

/// Hybrid under changed control frequency and trajectory speed, per family.
/// Rows are `<family>-<variant>` with variants `nominal`, `4Hz`, `2.5Hz`,
/// `300` and `500`.
pub fn run_adaptation_sweep(base: &ExperimentConfig, weights: &LstmWeights) -> Result<Report> {
    let ctl = hybrid_of(base);
    let variants: [(&str, f64, usize); 5] = [
        ("nominal", base.control_period, base.step_count),
        ("4Hz", FAST_PERIOD, base.step_count),
        ("2.5Hz", SLOW_PERIOD, base.step_count),
        ("300", base.control_period, 300),
        ("500", base.control_period, 500),
    ];
    let mut cells = Vec::new();
    for fam in ["alpha*", "beta*"] {
        let plants = family(base, fam)?;
        for (label, period, steps) in variants {
            for traj in TRAJECTORIES {
                let configs = plants
                    .iter()
                    .map(|p| ExperimentConfig {
                        control_period: period,
                        step_count: steps,
                        ..variant(base, p, &ctl, traj)
                    })
                    .collect();
                cells.push(Cell {
                    condition: format!("{fam}-{label}"),
                    trajectory: traj,
                    configs,
                });
            }
        }
    }
    run_cells("sweep", base, cells, Some(weights))
}

pub const DEFAULT_SWITCH_STEPS: [usize; 4] = [100, 200, 300, 350];
pub const ABLATION_PLANT: PlantSpec = PlantSpec::Rotated { turns: 1 };

/// Hybrid until each switch step, kinematics-only afterwards, on the first
/// rotated configuration and trajectory B. Rows are `switch-<step>` plus
/// `never` for the unswitched hybrid.
pub fn run_ablation(base: &ExperimentConfig, weights: &LstmWeights, switch_steps: &[usize]) -> Result<Report> {
    if switch_steps.is_empty() {
        return Err(invalid("no switch steps given"));
    }
    let w0 = match &base.controller {
        ControllerSpec::Hybrid(c) => c.weight,
        _ => HybridConfig::default().weight,
    };
    let traj = TrajectoryKind::B;
    let mut cells: Vec<Cell> = switch_steps
        .iter()
        .map(|&s| Cell {
            condition: format!("switch-{s}"),
            trajectory: traj,
            configs: vec![variant(
                base,
                &ABLATION_PLANT,
                &ControllerSpec::Hybrid(HybridConfig::switch_at(w0, s, 1.0)),
                traj,
            )],
        })
        .collect();
    cells.push(Cell {
        condition: "never".into(),
        trajectory: traj,
        configs: vec![variant(
            base,
            &ABLATION_PLANT,
            &ControllerSpec::Hybrid(HybridConfig::constant(w0)),
            traj,
        )],
    });
    run_cells("ablation", base, cells, Some(weights))
}

/// Settings for the arm comparison.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaselineConfig {
    pub setup: ArmSetup,
    pub spec: LstmSpec,
    pub train: TrainConfig,
    pub samples: usize,
    pub seed: u64,
}

impl BaselineConfig {
    pub fn new(seed: u64) -> Self {
        BaselineConfig {
            setup: ArmSetup::default(),
            spec: LstmSpec::for_dim(1, 1, 10, 32, 0.0).with_lead(3),
            train: TrainConfig {
                max_epochs: 60,
                patience: 8,
                batch_size: 32,
                learning_rate: 3e-3,
                seed,
                ..TrainConfig::default()
            },
            samples: 1000,
            seed,
        }
    }

    pub fn hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let json = serde_json::to_string(self).expect("config serializes");
        Sha256::digest(json.as_bytes()).iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}

#[derive(Clone, Debug)]
pub struct BaselineReport {
    pub config_hash: String,
    pub grid: GridReport,
    pub cc_aggregate: Metric,
    pub hybrid_aggregate: Metric,
}

impl BaselineReport {
    /// One row per robot, then one aggregate row per controller.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("config_hash,row,youngs_modulus,poisson_ratio,cc_mean,cc_std,hybrid_mean,hybrid_std\n");
        for r in &self.grid.rows {
            let _ = writeln!(
                s,
                "{},robot,{},{},{},{},{},{}",
                self.config_hash,
                r.youngs_modulus,
                r.poisson_ratio,
                r.cc.mean_error,
                r.cc.std_error,
                r.hybrid.mean_error,
                r.hybrid.std_error
            );
        }
        let (c, h) = (&self.cc_aggregate, &self.hybrid_aggregate);
        let _ = writeln!(s, "{},aggregate-cc,,,{},{},,", self.config_hash, c.mean_error, c.std_error);
        let _ = writeln!(s, "{},aggregate-hybrid,,,,,{},{}", self.config_hash, h.mean_error, h.std_error);
        s
    }
}

/// Aggregate over robots: mean and population std of the per-robot means.
fn across(means: &[f64]) -> Result<Metric> {
    crate::domain::score_errors(means)
}

/// Both controllers tuned on the center robot, evaluated on the whole grid.
pub fn run_baseline_comparison(cfg: &BaselineConfig) -> Result<BaselineReport> {
    let center = ArmParams::center();
    let hybrid = ArmHybrid::train(&cfg.setup, &center, &cfg.spec, &cfg.train, cfg.samples, cfg.seed)?;
    let cc = CcConfig::tuned_on_center();
    let traj = angle_trajectory(cfg.setup.step_count, cfg.setup.control_period);
    let grid = grid_sweep(&cfg.setup, &hybrid, &cc, &traj)?;
    let cc_means: Vec<f64> = grid.rows.iter().map(|r| r.cc.mean_error).collect();
    let hy_means: Vec<f64> = grid.rows.iter().map(|r| r.hybrid.mean_error).collect();
    Ok(BaselineReport {
        config_hash: cfg.hash(),
        cc_aggregate: across(&cc_means)?,
        hybrid_aggregate: across(&hy_means)?,
        grid,
    })
}
