//! 1-DOF pseudo-rigid-body arm `B q'' + C q' + K q = tau`, a constant-curvature
//! model-based controller with integral action, and the 5 x 5
//! modulus/Poisson-ratio robot grid for comparing it against the hybrid
//! controller.

use std::f64::consts::PI;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::dataset::{DEFAULT_FRACTIONS, DEFAULT_MAX_DELTA};
use crate::domain::{score_errors, Metric};
use crate::error::{invalid, Result};
use crate::hybrid::{blend, effective_weight, HybridConfig, History};
use crate::kincontrol::{KinematicsState, DEFAULT_RIDGE, DEFAULT_WINDOW};
use crate::lstm::{predict_actuation, train_seq, LstmSpec, LstmWeights, SeqData, TrainConfig, TrainReport};
use crate::par;
use crate::plant::random_walk;

/// Bending range, rad.
pub const Q_MAX: f64 = 2.4;
pub const GRID_MODULI: [f64; 5] = [5.0, 7.5, 10.0, 12.5, 15.0];
pub const GRID_POISSON: [f64; 5] = [0.25, 0.375, 0.5, 0.625, 0.75];
pub const CENTER: (f64, f64) = (10.0, 0.5);

/// Material-to-dynamics rule: `B = inertia`, `K = stiffness_per_kpa * E`,
/// `C = damping_coeff * E / (1 + nu)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArmMapping {
    pub inertia: f64,
    pub stiffness_per_kpa: f64,
    pub damping_coeff: f64,
}

impl Default for ArmMapping {
    fn default() -> Self {
        ArmMapping {
            inertia: 1.0,
            stiffness_per_kpa: 1.0,
            damping_coeff: 0.6,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArmParams {
    pub b: f64,
    pub c: f64,
    pub k_stiff: f64,
    pub youngs_modulus: f64,
    pub poisson_ratio: f64,
    pub mapping: ArmMapping,
}

impl ArmParams {
    pub fn from_material(youngs_modulus: f64, poisson_ratio: f64, mapping: ArmMapping) -> Result<Self> {
        if !(5.0..=15.0).contains(&youngs_modulus) || !(0.25..=0.75).contains(&poisson_ratio) {
            return Err(invalid(format!("material ({youngs_modulus} kPa, {poisson_ratio}) outside the grid range")));
        }
        let p = ArmParams {
            b: mapping.inertia,
            c: mapping.damping_coeff * youngs_modulus / (1.0 + poisson_ratio),
            k_stiff: mapping.stiffness_per_kpa * youngs_modulus,
            youngs_modulus,
            poisson_ratio,
            mapping,
        };
        if !(p.b > 0.0 && p.c > 0.0 && p.k_stiff > 0.0) {
            return Err(invalid("arm coefficients must be positive"));
        }
        Ok(p)
    }

    pub fn center() -> Self {
        Self::from_material(CENTER.0, CENTER.1, ArmMapping::default()).expect("center is on the grid")
    }

    pub fn energy(&self, s: &ArmState) -> f64 {
        0.5 * self.b * s.q_dot * s.q_dot + 0.5 * self.k_stiff * s.q * s.q
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ArmState {
    pub q: f64,
    pub q_dot: f64,
    pub integral_error: f64,
}

/// Semi-implicit Euler: velocity first from the current angle, then the angle
/// from the new velocity. Hitting either end stop zeroes the velocity.
pub fn arm_step(state: &ArmState, params: &ArmParams, torque: f64, dt: f64) -> Result<ArmState> {
    if !(dt > 0.0) {
        return Err(invalid(format!("dt {dt} must be positive")));
    }
    let acc = (torque - params.c * state.q_dot - params.k_stiff * state.q) / params.b;
    let mut q_dot = state.q_dot + dt * acc;
    let mut q = state.q + dt * q_dot;
    if q < 0.0 {
        q = 0.0;
        q_dot = 0.0;
    } else if q > Q_MAX {
        q = Q_MAX;
        q_dot = 0.0;
    }
    Ok(ArmState {
        q,
        q_dot,
        integral_error: state.integral_error,
    })
}

/// Desired angle and its rates at one instant.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct RefPoint {
    pub q: f64,
    pub q_dot: f64,
    pub q_ddot: f64,
}

/// Feedforward inverse dynamics of the model at `ff` plus integral feedback
/// on the error against `q_now`, the reference at the current instant.
/// Updates the accumulated error in `state` before computing the torque.
pub fn cc_control(state: &mut ArmState, model: &ArmParams, q_now: f64, ff: RefPoint, gain_i: f64, dt: f64) -> Result<f64> {
    if !(gain_i >= 0.0) {
        return Err(invalid("gain_i must be nonnegative"));
    }
    state.integral_error += (q_now - state.q) * dt;
    Ok(model.b * ff.q_ddot + model.c * ff.q_dot + model.k_stiff * ff.q + gain_i * state.integral_error)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArmSetup {
    /// Control period, seconds.
    pub control_period: f64,
    /// Integration substeps per control period.
    pub substeps: usize,
    /// Torque at unit command; both controllers saturate here.
    pub torque_max: f64,
    pub step_count: usize,
    pub mapping: ArmMapping,
}

impl Default for ArmSetup {
    fn default() -> Self {
        ArmSetup {
            control_period: 0.1,
            substeps: 10,
            torque_max: 40.0,
            step_count: 400,
            mapping: ArmMapping::default(),
        }
    }
}

impl ArmSetup {
    fn advance(&self, s: &ArmState, p: &ArmParams, torque: f64) -> ArmState {
        let dt = self.control_period / self.substeps as f64;
        let tau = torque.clamp(-self.torque_max, self.torque_max);
        let mut s = *s;
        for _ in 0..self.substeps {
            s = arm_step(&s, p, tau, dt).expect("positive dt");
        }
        s
    }
}

/// Seconds over which the reference rises from rest.
pub const RAMP_TIME: f64 = 3.0;

/// Smooth reference bending angle sampled at `t_k = k * control_period` for
/// `k = 0..=step_count`: two sines around mid-range, faded in from rest with
/// a quintic smoothstep so it starts where the arm starts.
pub fn angle_trajectory(step_count: usize, control_period: f64) -> Vec<f64> {
    (0..=step_count)
        .map(|k| {
            let t = k as f64 * control_period;
            let r = (t / RAMP_TIME).min(1.0);
            let fade = r * r * r * (10.0 - 15.0 * r + 6.0 * r * r);
            fade * (1.2 + 0.6 * (2.0 * PI * t / 8.0).sin() + 0.3 * (2.0 * PI * t / 3.1).sin())
        })
        .collect()
}

/// Central-difference first and second derivatives, one-sided at the ends.
pub fn derivatives(q: &[f64], dt: f64) -> (Vec<f64>, Vec<f64>) {
    let n = q.len();
    let at = |i: isize| q[i.clamp(0, n as isize - 1) as usize];
    let d1 = (0..n as isize).map(|i| (at(i + 1) - at(i - 1)) / (2.0 * dt)).collect();
    let d2 = (0..n as isize).map(|i| (at(i + 1) - 2.0 * at(i) + at(i - 1)) / (dt * dt)).collect();
    (d1, d2)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CcConfig {
    /// Model the controller was tuned with.
    pub model: ArmParams,
    pub gain_i: f64,
}

impl CcConfig {
    /// Integral gain equal to the model stiffness: the integrator removes a
    /// static offset with a one-second time constant.
    pub fn tuned_on_center() -> Self {
        let model = ArmParams::center();
        CcConfig {
            gain_i: model.k_stiff,
            model,
        }
    }
}

/// Per-step errors (fraction of the bending range) for the CC controller.
/// Entry `k` scores the state reached at `t_{k+1}`. The feedforward targets
/// the midpoint of the interval ahead.
pub fn run_cc(setup: &ArmSetup, plant: &ArmParams, cc: &CcConfig, traj: &[f64]) -> Vec<f64> {
    let dt = setup.control_period;
    let (_, d2) = derivatives(traj, dt);
    let mut s = ArmState::default();
    let steps = traj.len().saturating_sub(1);
    let mut errs = Vec::with_capacity(steps);
    for k in 0..steps {
        let ff = RefPoint {
            q: 0.5 * (traj[k] + traj[k + 1]),
            q_dot: (traj[k + 1] - traj[k]) / dt,
            q_ddot: 0.5 * (d2[k] + d2[k + 1]),
        };
        let tau = cc_control(&mut s, &cc.model, traj[k], ff, cc.gain_i, dt).expect("valid gain");
        let integral = s.integral_error;
        s = setup.advance(&s, plant, tau);
        s.integral_error = integral;
        errs.push((s.q - traj[k + 1]).abs() / Q_MAX);
    }
    errs
}

/// The hybrid controller specialised to one angle and one torque channel.
#[derive(Clone, Debug)]
pub struct ArmHybrid {
    pub weights: LstmWeights,
    pub cfg: HybridConfig,
    pub report: TrainReport,
}

impl ArmHybrid {
    /// Train the 1-D inverse model on a random-walk excitation of `plant`.
    pub fn train(setup: &ArmSetup, plant: &ArmParams, spec: &LstmSpec, cfg: &TrainConfig, samples: usize, seed: u64) -> Result<Self> {
        let data = excite_arm(setup, plant, samples, seed);
        let n = data.len();
        let a = (DEFAULT_FRACTIONS.0 * n as f64).round() as usize;
        let b = ((DEFAULT_FRACTIONS.0 + DEFAULT_FRACTIONS.1) * n as f64).round() as usize;
        let split = crate::dataset::Split { train: 0..a, val: a..b, test: b..n };
        let (weights, report) = train_seq(&data, &split, spec, cfg)?;
        Ok(ArmHybrid {
            weights,
            cfg: HybridConfig::default(),
            report,
        })
    }

    /// Per-step errors on `plant`. Warm-up holds zero torque to fill the history.
    pub fn run(&self, setup: &ArmSetup, plant: &ArmParams, traj: &[f64]) -> Result<Vec<f64>> {
        let spec = &self.weights.spec;
        let look = spec.target_lead - 1;
        let mut hist = History::new(1, spec.history_len);
        let mut kin = KinematicsState::new(1, DEFAULT_WINDOW, DEFAULT_RIDGE);
        let mut s = ArmState::default();
        for _ in 0..spec.history_len {
            s = setup.advance(&s, plant, 0.0);
            hist.push(&[s.q], &[0.0]);
        }
        let n = traj.len();
        let steps = n.saturating_sub(1);
        let mut errs = Vec::with_capacity(steps);
        for k in 0..steps {
            let target = [traj[(k + 1 + look).min(n - 1)]];
            let (p, a) = hist.latest().expect("warm history");
            kin.push_observation(p, a);
            let _ = kin.update_k();
            let a_k = kin.solve_actuation(&target);
            let w = effective_weight(&self.cfg, k);
            let cmd = if w < 1.0 {
                let a_l = predict_actuation(&self.weights, &target, &hist.flat_tail(spec.history_len).unwrap())?;
                blend(&a_k, &a_l, w)?
            } else {
                a_k
            };
            s = setup.advance(&s, plant, cmd[0] * setup.torque_max);
            hist.push(&[s.q], &cmd);
            errs.push((s.q - traj[k + 1]).abs() / Q_MAX);
        }
        Ok(errs)
    }
}

/// Random-walk torque excitation of the arm. The walk in [-1, 1] is mapped
/// onto the commands that hold `plant` statically across the bending range,
/// so the data covers the region the reference lives in.
pub fn excite_arm(setup: &ArmSetup, plant: &ArmParams, n: usize, seed: u64) -> SeqData {
    let span = (plant.k_stiff * Q_MAX / setup.torque_max).min(1.0);
    let walk = random_walk(n, DEFAULT_MAX_DELTA, seed);
    let mut s = ArmState::default();
    let mut act = Vec::with_capacity(n);
    let mut pos = Vec::with_capacity(n);
    for c in walk {
        let u = 0.5 * span * (c.u1 + 1.0);
        s = setup.advance(&s, plant, u * setup.torque_max);
        act.push(u);
        pos.push(s.q);
    }
    SeqData { dim: 1, act, pos }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub youngs_modulus: f64,
    pub poisson_ratio: f64,
    pub cc: Metric,
    pub hybrid: Metric,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridReport {
    pub rows: Vec<GridRow>,
    pub cc_mean: f64,
    pub hybrid_mean: f64,
}

impl GridReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("youngs_modulus,poisson_ratio,cc_mean,cc_std,hybrid_mean,hybrid_std\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{}",
                r.youngs_modulus, r.poisson_ratio, r.cc.mean_error, r.cc.std_error, r.hybrid.mean_error, r.hybrid.std_error
            );
        }
        s
    }

    /// Off-center robots where the hybrid error is strictly lower.
    pub fn hybrid_wins_off_center(&self) -> (usize, usize) {
        let off: Vec<_> = self
            .rows
            .iter()
            .filter(|r| (r.youngs_modulus, r.poisson_ratio) != CENTER)
            .collect();
        let wins = off.iter().filter(|r| r.hybrid.mean_error < r.cc.mean_error).count();
        (wins, off.len())
    }
}

/// Run both controllers on every grid robot against the same reference.
pub fn grid_sweep(setup: &ArmSetup, hybrid: &ArmHybrid, cc: &CcConfig, traj: &[f64]) -> Result<GridReport> {
    let cells: Vec<(f64, f64)> = GRID_MODULI
        .iter()
        .flat_map(|&e| GRID_POISSON.iter().map(move |&nu| (e, nu)))
        .collect();
    let rows = par::map(&cells, |&(e, nu)| -> Result<GridRow> {
        let plant = ArmParams::from_material(e, nu, setup.mapping)?;
        let cc_err = run_cc(setup, &plant, cc, traj);
        let hy_err = hybrid.run(setup, &plant, traj)?;
        Ok(GridRow {
            youngs_modulus: e,
            poisson_ratio: nu,
            cc: score_errors(&cc_err)?,
            hybrid: score_errors(&hy_err)?,
        })
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let n = rows.len() as f64;
    let cc_mean = rows.iter().map(|r| r.cc.mean_error).sum::<f64>() / n;
    let hybrid_mean = rows.iter().map(|r| r.hybrid.mean_error).sum::<f64>() / n;
    Ok(GridReport { rows, cc_mean, hybrid_mean })
}
