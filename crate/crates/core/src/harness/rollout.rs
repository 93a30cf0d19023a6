use crate::domain::{score_errors, Actuation2, Metric, Position2, RolloutLog, StepDiagnostics, StepRecord};
use crate::error::{invalid, Error, Result};
use crate::hybrid::{Controller, Diagnostics, History};
use crate::kincontrol::KinematicsState;
use crate::lstm::{load_weights, LstmWeights};
use crate::par;
use crate::plant::Plant;

use super::config::{trial_seed, ExperimentConfig};

#[derive(Clone, Debug)]
pub struct RolloutResult {
    pub logs: Vec<RolloutLog>,
    /// Over every trial's per-step errors.
    pub metric: Metric,
}

/// Weights named by the config, if any.
pub fn load_config_weights(cfg: &ExperimentConfig) -> Result<Option<LstmWeights>> {
    match &cfg.weights {
        Some(p) => Ok(Some(load_weights(p, None)?)),
        None => Ok(None),
    }
}

fn to_diag(d: &Diagnostics) -> StepDiagnostics {
    let pair = |v: &Option<Vec<f64>>| v.as_ref().map(|a| [a[0], a[1]]);
    StepDiagnostics {
        k: [d.k[0], d.k[1], d.k[2], d.k[3]],
        a_k: pair(&d.a_k),
        a_lstm: pair(&d.a_lstm),
        weight: d.weight,
    }
}

/// Warm-up length in control steps.
pub fn warmup_steps(history_len: usize, plant: &Plant) -> usize {
    history_len + plant.params.delay_queue_len(plant.dt)
}

/// One trial: fresh plant, zero-command warm-up, then closed-loop tracking.
///
/// The history row pushed before step `k` pairs the sensed position with the
/// command that preceded it. The controller aims at the waypoint one step
/// short of the LSTM lead, and the record for step `k` compares the position
/// sensed after the command with waypoint `k`.
pub fn run_trial(cfg: &ExperimentConfig, weights: Option<&LstmWeights>, trial: usize) -> Result<RolloutLog> {
    let params = cfg.plant.build(trial_seed(cfg.seed, trial))?;
    let traj = cfg.trajectory.build(cfg.step_count, cfg.workspace_length, cfg.control_period)?;
    let mut plant = Plant::new(params, cfg.control_period)?;
    let weights = if cfg.controller.needs_weights() { weights } else { None };
    if let Some(w) = weights {
        if w.spec.dim() != 2 {
            return Err(Error::Incompatible(format!("planar rollout needs dim 2 weights, got {}", w.spec.dim())));
        }
    }
    let kin = KinematicsState::new(2, cfg.kin_window, cfg.kin_ridge);
    let mut controller = Controller::new(cfg.controller.clone(), weights, kin)?;
    let history_len = weights.map_or(cfg.history_len, |w| w.spec.history_len);
    let lookahead = weights.map_or(1, |w| w.spec.target_lead.saturating_sub(1));
    let mut history = History::new(2, history_len.max(1));

    let mut p = Position2::ORIGIN;
    let mut a_prev = Actuation2::ZERO;
    for _ in 0..warmup_steps(history_len, &plant) {
        history.push(&p.to_array(), &a_prev.to_array());
        p = plant.step(Actuation2::ZERO);
    }

    let n = traj.waypoints.len();
    let mut records = Vec::with_capacity(n);
    let mut diagnostics = Vec::new();
    for k in 0..n {
        history.push(&p.to_array(), &a_prev.to_array());
        let target = traj.waypoints[(k + lookahead) % n];
        let (raw, diag) = controller.step(k, &target.to_array(), &history)?;
        if raw.iter().any(|v| !v.is_finite()) {
            return Err(Error::AbortedRollout {
                step: k,
                reason: format!("non-finite command {raw:?}"),
            });
        }
        let cmd = Actuation2::new(raw[0], raw[1]).clamped();
        p = plant.step(cmd);
        if !p.is_sane(cfg.workspace_length) {
            return Err(Error::AbortedRollout {
                step: k,
                reason: format!("position {p:?} left the workspace"),
            });
        }
        records.push(StepRecord::new(k, cmd, p, traj.waypoints[k], cfg.workspace_length));
        if let Some(d) = diag {
            diagnostics.push(to_diag(&d));
        }
        a_prev = cmd;
    }
    Ok(RolloutLog {
        trajectory: traj,
        records,
        plant_id: cfg.plant.label(),
        controller_id: cfg.controller.label(),
        seed: cfg.seed,
        diagnostics,
    })
}

/// All trials of one condition, run concurrently.
pub fn run_rollout(cfg: &ExperimentConfig, weights: Option<&LstmWeights>) -> Result<RolloutResult> {
    cfg.validate()?;
    if cfg.controller.needs_weights() && weights.is_none() {
        let path = cfg.weights.clone().unwrap_or_default();
        return Err(Error::MissingWeights(path));
    }
    let logs = par::map_range(cfg.trials, |t| run_trial(cfg, weights, t))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let metric = pooled_metric(&logs)?;
    Ok(RolloutResult { logs, metric })
}

pub fn pooled_metric(logs: &[RolloutLog]) -> Result<Metric> {
    if logs.is_empty() {
        return Err(invalid("no rollouts to score"));
    }
    let all: Vec<f64> = logs.iter().flat_map(|l| l.errors()).collect();
    score_errors(&all)
}

/// Mean per-step error over the last `n` steps of each log.
pub fn tail_mean(logs: &[RolloutLog], n: usize) -> f64 {
    let tail: Vec<f64> = logs
        .iter()
        .flat_map(|l| {
            let e = l.errors();
            let start = e.len().saturating_sub(n);
            e[start..].to_vec()
        })
        .collect();
    tail.iter().sum::<f64>() / tail.len().max(1) as f64
}
