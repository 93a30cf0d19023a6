//! Blending of the kinematics and LSTM estimates, weight schedules, and the
//! per-step controller used by rollouts.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::kincontrol::KinematicsState;
use crate::lstm::{predict_actuation, LstmWeights};

pub const DEFAULT_WEIGHT: f64 = 0.1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HybridConfig {
    /// Share of the kinematics estimate in the command.
    pub weight: f64,
    /// `(step_index, new_weight)` pairs with strictly increasing steps.
    #[serde(default)]
    pub schedule: Vec<(usize, f64)>,
}

impl Default for HybridConfig {
    fn default() -> Self {
        HybridConfig {
            weight: DEFAULT_WEIGHT,
            schedule: Vec::new(),
        }
    }
}

impl HybridConfig {
    pub fn constant(weight: f64) -> Self {
        HybridConfig {
            weight,
            schedule: Vec::new(),
        }
    }

    /// Base weight until `step`, then `after`.
    pub fn switch_at(weight: f64, step: usize, after: f64) -> Self {
        HybridConfig {
            weight,
            schedule: vec![(step, after)],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |w: f64| (0.0..=1.0).contains(&w);
        if !ok(self.weight) || self.schedule.iter().any(|&(_, w)| !ok(w)) {
            return Err(invalid("hybrid weights must lie in [0, 1]"));
        }
        if self.schedule.windows(2).any(|p| p[0].0 >= p[1].0) {
            return Err(invalid("schedule steps must be strictly increasing"));
        }
        Ok(())
    }
}

/// `w a_k + (1 - w) a_lstm`, clamped. The end points return the chosen input
/// untouched.
pub fn blend(a_k: &[f64], a_lstm: &[f64], w: f64) -> Result<Vec<f64>> {
    if !(0.0..=1.0).contains(&w) {
        return Err(invalid(format!("weight {w} not in [0, 1]")));
    }
    if a_k.len() != a_lstm.len() {
        return Err(invalid("actuation dimensions differ"));
    }
    if w == 0.0 {
        return Ok(a_lstm.to_vec());
    }
    if w == 1.0 {
        return Ok(a_k.to_vec());
    }
    Ok(a_k
        .iter()
        .zip(a_lstm)
        .map(|(k, l)| (w * k + (1.0 - w) * l).clamp(-1.0, 1.0))
        .collect())
}

/// Weight in force at `step`: the latest schedule entry at or before it.
pub fn effective_weight(cfg: &HybridConfig, step: usize) -> f64 {
    cfg.schedule
        .iter()
        .take_while(|(s, _)| *s <= step)
        .last()
        .map_or(cfg.weight, |&(_, w)| w)
}

/// Rolling `[position, actuation]` rows, oldest first. Each position is the
/// one sensed right after the actuation in the same row.
#[derive(Clone, Debug, PartialEq)]
pub struct History {
    dim: usize,
    capacity: usize,
    rows: VecDeque<Vec<f64>>,
}

impl History {
    pub fn new(dim: usize, capacity: usize) -> Self {
        History {
            dim,
            capacity: capacity.max(1),
            rows: VecDeque::with_capacity(capacity + 1),
        }
    }

    pub fn push(&mut self, position: &[f64], actuation: &[f64]) {
        debug_assert_eq!(position.len(), self.dim);
        debug_assert_eq!(actuation.len(), self.dim);
        let mut row = Vec::with_capacity(2 * self.dim);
        row.extend_from_slice(position);
        row.extend_from_slice(actuation);
        self.rows.push_back(row);
        while self.rows.len() > self.capacity {
            self.rows.pop_front();
        }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.rows.len() == self.capacity
    }

    /// Newest `(position, actuation)` pair.
    pub fn latest(&self) -> Option<(&[f64], &[f64])> {
        self.rows.back().map(|r| r.split_at(self.dim))
    }

    /// Newest `n` rows flattened, oldest first.
    pub fn flat_tail(&self, n: usize) -> Option<Vec<f64>> {
        if self.rows.len() < n {
            return None;
        }
        Some(self.rows.iter().skip(self.rows.len() - n).flatten().copied().collect())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Diagnostics {
    pub a_k: Option<Vec<f64>>,
    pub a_lstm: Option<Vec<f64>>,
    /// Row-major K after this step's update.
    pub k: Vec<f64>,
    pub weight: f64,
    pub k_updated: bool,
}

fn lstm_estimate(weights: &LstmWeights, target: &[f64], history: &History) -> Result<Vec<f64>> {
    let h = weights.spec.history_len;
    let flat = history
        .flat_tail(h)
        .ok_or_else(|| invalid(format!("history holds {} rows, LSTM needs {h}", history.len())))?;
    predict_actuation(weights, target, &flat)
}

/// Push the newest observation, refresh K and solve for the command.
fn kinematics_estimate(kin: &mut KinematicsState, target: &[f64], history: &History) -> Result<(Vec<f64>, bool)> {
    let (p, a) = history.latest().ok_or_else(|| invalid("empty history"))?;
    kin.push_observation(p, a);
    let updated = match kin.update_k() {
        Ok(_) => true,
        Err(Error::InsufficientData(_)) => false,
        Err(e) => return Err(e),
    };
    Ok((kin.solve_actuation(target), updated))
}

/// One hybrid control step. The kinematics window always advances so a
/// later schedule change finds it warm; the LSTM is skipped when the weight
/// leaves it no share of the command.
pub fn hybrid_step(
    weights: &LstmWeights,
    kin: &mut KinematicsState,
    cfg: &HybridConfig,
    step: usize,
    target_next: &[f64],
    history: &History,
) -> Result<(Vec<f64>, Diagnostics)> {
    let w = effective_weight(cfg, step);
    let (a_k, k_updated) = kinematics_estimate(kin, target_next, history)?;
    let a_lstm = if w < 1.0 {
        Some(lstm_estimate(weights, target_next, history)?)
    } else {
        None
    };
    let cmd = match &a_lstm {
        Some(l) => blend(&a_k, l, w)?,
        None => a_k.clone(),
    };
    Ok((
        cmd,
        Diagnostics {
            a_k: Some(a_k),
            a_lstm,
            k: kin.k_row_major(),
            weight: w,
            k_updated,
        },
    ))
}

/// Standalone LSTM controller.
pub fn lstm_step(weights: &LstmWeights, target_next: &[f64], history: &History) -> Result<Vec<f64>> {
    lstm_estimate(weights, target_next, history)
}

/// Standalone kinematics controller.
pub fn kinematics_step(kin: &mut KinematicsState, target_next: &[f64], history: &History) -> Result<Vec<f64>> {
    Ok(kinematics_estimate(kin, target_next, history)?.0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ControllerSpec {
    LstmOnly,
    KinematicsOnly,
    Hybrid(HybridConfig),
}

impl ControllerSpec {
    pub fn needs_weights(&self) -> bool {
        !matches!(self, ControllerSpec::KinematicsOnly)
    }

    pub fn label(&self) -> String {
        match self {
            ControllerSpec::LstmOnly => "lstm".into(),
            ControllerSpec::KinematicsOnly => "kinematics".into(),
            ControllerSpec::Hybrid(c) if c.schedule.is_empty() => format!("hybrid-w{}", c.weight),
            ControllerSpec::Hybrid(c) => {
                let parts: Vec<String> = c.schedule.iter().map(|(s, w)| format!("{s}:{w}")).collect();
                format!("hybrid-w{}-{}", c.weight, parts.join("-"))
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ControllerSpec::Hybrid(c) => c.validate(),
            _ => Ok(()),
        }
    }
}

/// A controller instance owning its per-rollout state.
#[derive(Clone, Debug)]
pub struct Controller<'w> {
    pub spec: ControllerSpec,
    weights: Option<&'w LstmWeights>,
    pub kin: KinematicsState,
}

impl<'w> Controller<'w> {
    pub fn new(spec: ControllerSpec, weights: Option<&'w LstmWeights>, kin: KinematicsState) -> Result<Self> {
        spec.validate()?;
        if spec.needs_weights() && weights.is_none() {
            return Err(invalid(format!("controller {} needs LSTM weights", spec.label())));
        }
        Ok(Controller { spec, weights, kin })
    }

    pub fn step(&mut self, step: usize, target_next: &[f64], history: &History) -> Result<(Vec<f64>, Option<Diagnostics>)> {
        match &self.spec {
            ControllerSpec::LstmOnly => Ok((lstm_step(self.weights.unwrap(), target_next, history)?, None)),
            ControllerSpec::KinematicsOnly => {
                let (a, updated) = kinematics_estimate(&mut self.kin, target_next, history)?;
                let d = Diagnostics {
                    a_k: Some(a.clone()),
                    a_lstm: None,
                    k: self.kin.k_row_major(),
                    weight: 1.0,
                    k_updated: updated,
                };
                Ok((a, Some(d)))
            }
            ControllerSpec::Hybrid(cfg) => {
                let (a, d) = hybrid_step(self.weights.unwrap(), &mut self.kin, cfg, step, target_next, history)?;
                Ok((a, Some(d)))
            }
        }
    }
}
