//! Shared value types, reference trajectories, and rollout logs.

mod log;
mod trajectory;
mod types;

pub use log::{score, score_errors, Metric, RolloutLog, StepDiagnostics, StepRecord};
pub use trajectory::{
    closed_arc_length, make_trajectory_a, make_trajectory_b, TrajectorySpec, NOMINAL_PERIOD,
};
pub use types::{Actuation2, Position2, WORKSPACE_LENGTH};
