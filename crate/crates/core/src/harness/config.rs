use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::domain::{make_trajectory_a, make_trajectory_b, TrajectorySpec, NOMINAL_PERIOD, WORKSPACE_LENGTH};
use crate::error::{invalid, Error, Result};
use crate::hybrid::{ControllerSpec, HybridConfig};
use crate::kincontrol::{check_config, DEFAULT_RIDGE, DEFAULT_WINDOW};
use crate::plant::{nominal_plant, perturb_unit, rotate_configuration, PlantParams};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum PlantSpec {
    Nominal,
    Rotated { turns: u8 },
    Perturbed { severity: f64, seed: u64 },
}

impl PlantSpec {
    /// Parameters with the given noise seed.
    pub fn build(&self, noise_seed: u64) -> Result<PlantParams> {
        let base = nominal_plant(noise_seed);
        match *self {
            PlantSpec::Nominal => Ok(base),
            PlantSpec::Rotated { turns } => rotate_configuration(&base, turns),
            PlantSpec::Perturbed { severity, seed } => perturb_unit(&base, severity, seed),
        }
    }

    pub fn label(&self) -> String {
        match self {
            PlantSpec::Nominal => "alpha0".into(),
            PlantSpec::Rotated { turns } => format!("alpha{turns}"),
            PlantSpec::Perturbed { severity, seed } => format!("beta-s{severity}-u{seed}"),
        }
    }

    /// Parse `nominal`, `rotated:K` or `perturbed:SEVERITY:SEED`.
    pub fn parse(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(':').collect();
        let bad = || invalid(format!("cannot parse plant spec {s:?}"));
        match parts.as_slice() {
            ["nominal"] => Ok(PlantSpec::Nominal),
            ["rotated", k] => Ok(PlantSpec::Rotated { turns: k.parse().map_err(|_| bad())? }),
            ["perturbed", sev, seed] => Ok(PlantSpec::Perturbed {
                severity: sev.parse().map_err(|_| bad())?,
                seed: seed.parse().map_err(|_| bad())?,
            }),
            _ => Err(bad()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum TrajectoryKind {
    A,
    B,
}

impl TrajectoryKind {
    pub fn build(self, step_count: usize, workspace_length: f64, control_period: f64) -> Result<TrajectorySpec> {
        let t = match self {
            TrajectoryKind::A => make_trajectory_a(step_count, workspace_length)?,
            TrajectoryKind::B => make_trajectory_b(step_count, workspace_length)?,
        };
        Ok(t.with_period(control_period))
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "A" | "a" => Ok(TrajectoryKind::A),
            "B" | "b" => Ok(TrajectoryKind::B),
            _ => Err(invalid(format!("unknown trajectory {s:?}"))),
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            TrajectoryKind::A => "A",
            TrajectoryKind::B => "B",
        }
    }
}

fn default_trials() -> usize {
    3
}
fn default_steps() -> usize {
    400
}
fn default_period() -> f64 {
    NOMINAL_PERIOD
}
fn default_workspace() -> f64 {
    WORKSPACE_LENGTH
}
fn default_window() -> usize {
    DEFAULT_WINDOW
}
fn default_ridge() -> f64 {
    DEFAULT_RIDGE
}
fn default_severity() -> f64 {
    0.15
}
fn default_units() -> Vec<u64> {
    vec![1, 2, 3]
}
fn default_history() -> usize {
    10
}

/// One experiment. Matrix, sweep and ablation runs use it as the base and
/// override the plant, controller or trajectory per condition.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub plant: PlantSpec,
    pub controller: ControllerSpec,
    pub trajectory: TrajectoryKind,
    #[serde(default = "default_steps")]
    pub step_count: usize,
    #[serde(default = "default_period")]
    pub control_period: f64,
    #[serde(default = "default_trials")]
    pub trials: usize,
    pub seed: u64,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub weights: Option<PathBuf>,
    #[serde(default = "default_workspace")]
    pub workspace_length: f64,
    #[serde(default = "default_window")]
    pub kin_window: usize,
    #[serde(default = "default_ridge")]
    pub kin_ridge: f64,
    /// Perturbation severity for the unit family in matrix and sweep runs.
    #[serde(default = "default_severity")]
    pub severity: f64,
    /// Unit seeds for the perturbed family.
    #[serde(default = "default_units")]
    pub unit_seeds: Vec<u64>,
    /// History rows for warm-up when no LSTM sets it.
    #[serde(default = "default_history")]
    pub history_len: usize,
}

impl ExperimentConfig {
    pub fn new(plant: PlantSpec, controller: ControllerSpec, trajectory: TrajectoryKind, seed: u64) -> Self {
        ExperimentConfig {
            plant,
            controller,
            trajectory,
            step_count: default_steps(),
            control_period: default_period(),
            trials: default_trials(),
            seed,
            output_dir: None,
            weights: None,
            workspace_length: default_workspace(),
            kin_window: default_window(),
            kin_ridge: default_ridge(),
            severity: default_severity(),
            unit_seeds: default_units(),
            history_len: default_history(),
        }
    }

    pub fn hybrid_default(seed: u64) -> Self {
        Self::new(
            PlantSpec::Nominal,
            ControllerSpec::Hybrid(HybridConfig::default()),
            TrajectoryKind::A,
            seed,
        )
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials < 1 {
            return Err(invalid("trials must be at least 1"));
        }
        if !(self.control_period > 0.0) {
            return Err(invalid("control_period must be positive"));
        }
        if self.unit_seeds.is_empty() {
            return Err(invalid("unit_seeds must not be empty"));
        }
        check_config(self.kin_window, self.kin_ridge)?;
        self.controller.validate()?;
        self.plant.build(0)?.validate()
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: ExperimentConfig = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// First 16 hex digits of the SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(json.as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}

/// Deterministic per-trial seed.
pub fn trial_seed(seed: u64, trial: usize) -> u64 {
    let mut z = seed.wrapping_add((trial as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
