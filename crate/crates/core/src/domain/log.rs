use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::trajectory::TrajectorySpec;
use super::types::{Actuation2, Position2};
use crate::error::{invalid, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step_index: usize,
    pub commanded: Actuation2,
    pub achieved: Position2,
    pub target: Position2,
    /// Euclidean miss divided by workspace length.
    pub per_step_error: f64,
}

impl StepRecord {
    pub fn new(
        step_index: usize,
        commanded: Actuation2,
        achieved: Position2,
        target: Position2,
        workspace_length: f64,
    ) -> Self {
        StepRecord {
            step_index,
            commanded,
            achieved,
            target,
            per_step_error: achieved.distance(target) / workspace_length,
        }
    }
}

/// Per-step internals of a controller that uses the kinematics estimate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepDiagnostics {
    /// Row-major estimate of K after this step's update.
    pub k: [f64; 4],
    pub a_k: Option<[f64; 2]>,
    pub a_lstm: Option<[f64; 2]>,
    pub weight: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RolloutLog {
    pub trajectory: TrajectorySpec,
    pub records: Vec<StepRecord>,
    pub plant_id: String,
    pub controller_id: String,
    pub seed: u64,
    /// Either empty or one entry per record.
    pub diagnostics: Vec<StepDiagnostics>,
}

impl RolloutLog {
    pub fn errors(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.per_step_error).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("step,target_x,target_y,achieved_x,achieved_y,u1,u2,error");
        let diag = self.diagnostics.len() == self.records.len() && !self.records.is_empty();
        if diag {
            s.push_str(",k11,k12,k21,k22,a_k1,a_k2,a_lstm1,a_lstm2,w");
        }
        s.push('\n');
        for (i, r) in self.records.iter().enumerate() {
            let _ = write!(
                s,
                "{},{},{},{},{},{},{},{}",
                r.step_index,
                r.target.x,
                r.target.y,
                r.achieved.x,
                r.achieved.y,
                r.commanded.u1,
                r.commanded.u2,
                r.per_step_error
            );
            if diag {
                let d = &self.diagnostics[i];
                let _ = write!(s, ",{},{},{},{}", d.k[0], d.k[1], d.k[2], d.k[3]);
                push_opt_pair(&mut s, d.a_k);
                push_opt_pair(&mut s, d.a_lstm);
                let _ = write!(s, ",{}", d.weight);
            }
            s.push('\n');
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

fn push_opt_pair(s: &mut String, v: Option<[f64; 2]>) {
    match v {
        Some([a, b]) => {
            let _ = write!(s, ",{a},{b}");
        }
        None => s.push_str(",,"),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metric {
    pub mean_error: f64,
    pub std_error: f64,
    pub max_error: f64,
}

/// Mean, population standard deviation and max of a list of errors.
pub fn score_errors(errors: &[f64]) -> Result<Metric> {
    if errors.is_empty() {
        return Err(invalid("cannot score an empty log"));
    }
    let n = errors.len() as f64;
    let mean = errors.iter().sum::<f64>() / n;
    let var = errors.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / n;
    let max = errors.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(Metric {
        mean_error: mean,
        std_error: var.sqrt(),
        max_error: max,
    })
}

pub fn score(log: &RolloutLog) -> Result<Metric> {
    score_errors(&log.errors())
}
