//! Simulated planar soft robot.
//!
//! Command path: pure delay queue, signed channel-to-axis permutation
//! (actuation configuration), direction-dependent gains, optional chamber
//! misalignment rotation, per-axis tanh saturation, first-order lag, additive
//! Gaussian sensor noise.

use std::collections::VecDeque;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::domain::{Actuation2, Position2, NOMINAL_PERIOD, WORKSPACE_LENGTH};
use crate::error::{invalid, Result};

pub const PARAMS_VERSION: u32 = 1;

/// Indices into [`PlantParams::asymmetry`].
pub const RIGHT: usize = 0;
pub const LEFT: usize = 1;
pub const FRONT: usize = 2;
pub const BACK: usize = 3;

const NOMINAL_SOFTNESS: f64 = 1.25;
/// Fraction of the half-length reached at full command on an unhindered axis.
const NOMINAL_REACH: f64 = 0.95;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlantParams {
    pub version: u32,
    /// mm per unit command before saturation.
    pub gain_x: f64,
    pub gain_y: f64,
    /// Per-direction gain multipliers, ordered right, left, front, back.
    pub asymmetry: [f64; 4],
    /// First-order lag, seconds.
    pub time_constant: f64,
    /// Command delay in steps of `nominal_period`.
    pub delay_steps: u32,
    /// Saturation level as a multiple of the workspace half-length.
    pub saturation_softness: f64,
    pub noise_std: f64,
    pub pressure_cap: f64,
    pub seed: u64,
    /// Angular misalignment of the chamber layout, radians.
    #[serde(default)]
    pub twist: f64,
    /// Quarter turns of the robot against the valve hookup, 0..4.
    #[serde(default)]
    pub config_turns: u8,
    pub workspace_length: f64,
    /// Control period at which `delay_steps` is expressed.
    pub nominal_period: f64,
}

impl PlantParams {
    pub fn validate(&self) -> Result<()> {
        if self.version != PARAMS_VERSION {
            return Err(invalid(format!("unsupported plant params version {}", self.version)));
        }
        if !(self.gain_x > 0.0 && self.gain_y > 0.0) {
            return Err(invalid("gains must be positive"));
        }
        if self.asymmetry.iter().any(|a| !(0.5..=1.5).contains(a)) {
            return Err(invalid("asymmetry components must lie in [0.5, 1.5]"));
        }
        if self.delay_steps > 3 {
            return Err(invalid("delay_steps must be at most 3"));
        }
        if !(self.noise_std >= 0.0) {
            return Err(invalid("noise_std must be nonnegative"));
        }
        if !(self.time_constant > 0.0 && self.saturation_softness > 0.0) {
            return Err(invalid("time_constant and saturation_softness must be positive"));
        }
        if !(self.workspace_length > 0.0 && self.nominal_period > 0.0) {
            return Err(invalid("workspace_length and nominal_period must be positive"));
        }
        if self.config_turns > 3 || !self.twist.is_finite() {
            return Err(invalid("config_turns must be 0..=3 and twist finite"));
        }
        Ok(())
    }

    /// Saturation level per axis, mm.
    pub fn saturation(&self) -> f64 {
        self.saturation_softness * self.workspace_length / 2.0
    }

    /// Queue length at control period `dt`, keeping the physical delay fixed.
    pub fn delay_queue_len(&self, dt: f64) -> usize {
        (self.delay_steps as f64 * self.nominal_period / dt).round() as usize
    }

    /// Hard bound on the noise-free position components.
    pub fn position_bound(&self) -> f64 {
        let amax = self.asymmetry.iter().copied().fold(0.0, f64::max);
        let gmax = self.gain_x.max(self.gain_y) * amax;
        let drive = if self.twist == 0.0 { gmax } else { gmax * 2f64.sqrt() };
        drive.min(self.saturation())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let p: PlantParams = serde_json::from_str(s)?;
        p.validate()?;
        Ok(p)
    }
}

/// Reference unit: 60.94 mm workspace, left and front directions slightly
/// harder to reach, one step of delay, 0.15 s lag, 0.25 mm sensor noise.
pub fn nominal_plant(seed: u64) -> PlantParams {
    let l = WORKSPACE_LENGTH;
    let s = NOMINAL_SOFTNESS * l / 2.0;
    // Full command on a unit-multiplier axis settles at NOMINAL_REACH of the half-length.
    let gain = s * (NOMINAL_REACH * (l / 2.0) / s).atanh();
    PlantParams {
        version: PARAMS_VERSION,
        gain_x: gain,
        gain_y: gain,
        asymmetry: [1.0, 0.9, 0.9, 1.0],
        time_constant: 0.15,
        delay_steps: 1,
        saturation_softness: NOMINAL_SOFTNESS,
        noise_std: 0.25,
        pressure_cap: 0.5,
        seed,
        twist: 0.0,
        config_turns: 0,
        workspace_length: l,
        nominal_period: NOMINAL_PERIOD,
    }
}

/// Rotate the robot by `quarter_turns` x 90 degrees counter-clockwise against
/// fixed valves. Directional properties travel with the body, so the gains
/// swap on odd turns, the asymmetry vector rotates right -> front -> left ->
/// back, and each channel now drives a rotated world axis.
pub fn rotate_configuration(params: &PlantParams, quarter_turns: u8) -> Result<PlantParams> {
    if !(1..=3).contains(&quarter_turns) {
        return Err(invalid(format!("quarter_turns {quarter_turns} not in 1..=3")));
    }
    let mut p = params.clone();
    for _ in 0..quarter_turns {
        let a = p.asymmetry;
        p.asymmetry[FRONT] = a[RIGHT];
        p.asymmetry[LEFT] = a[FRONT];
        p.asymmetry[BACK] = a[LEFT];
        p.asymmetry[RIGHT] = a[BACK];
        std::mem::swap(&mut p.gain_x, &mut p.gain_y);
        p.config_turns = (p.config_turns + 1) % 4;
    }
    Ok(p)
}

/// Another unit from the same mold. Gains and asymmetry get independent
/// factors in [1 - severity, 1 + severity]; the lag grows by up to
/// 4 x severity; with probability severity / 0.3 the delay grows by one step;
/// the chamber layout twists by up to 2 x severity radians.
pub fn perturb_unit(params: &PlantParams, severity: f64, seed: u64) -> Result<PlantParams> {
    if !(0.0..=0.5).contains(&severity) {
        return Err(invalid(format!("severity {severity} not in [0, 0.5]")));
    }
    if severity == 0.0 {
        return Ok(params.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let factor = Uniform::new_inclusive(1.0 - severity, 1.0 + severity).expect("valid range");
    let mut p = params.clone();
    p.gain_x *= factor.sample(&mut rng);
    p.gain_y *= factor.sample(&mut rng);
    for a in p.asymmetry.iter_mut() {
        *a = (*a * factor.sample(&mut rng)).clamp(0.5, 1.5);
    }
    let unit = Uniform::new(0.0, 1.0).expect("valid range");
    p.time_constant *= 1.0 + 4.0 * severity * unit.sample(&mut rng);
    if unit.sample(&mut rng) < severity / 0.3 {
        p.delay_steps = (p.delay_steps + 1).min(3);
    }
    p.twist += 2.0 * severity * (2.0 * unit.sample(&mut rng) - 1.0);
    Ok(p)
}

/// Map a channel command to world axes for the given configuration.
fn route(turns: u8, a: [f64; 2]) -> [f64; 2] {
    match turns % 4 {
        0 => a,
        1 => [-a[1], a[0]],
        2 => [-a[0], -a[1]],
        _ => [a[1], -a[0]],
    }
}

/// Noise-free steady state for a held command.
pub fn equilibrium(params: &PlantParams, command: Actuation2) -> Position2 {
    let c = command.clamped();
    let w = route(params.config_turns, c.to_array());
    let mx = if w[0] >= 0.0 { params.asymmetry[RIGHT] } else { params.asymmetry[LEFT] };
    let my = if w[1] >= 0.0 { params.asymmetry[FRONT] } else { params.asymmetry[BACK] };
    let ux = params.gain_x * mx * w[0];
    let uy = params.gain_y * my * w[1];
    let (vx, vy) = if params.twist == 0.0 {
        (ux, uy)
    } else {
        let (s, co) = params.twist.sin_cos();
        (co * ux - s * uy, s * ux + co * uy)
    };
    let sat = params.saturation();
    Position2::new(sat * (vx / sat).tanh(), sat * (vy / sat).tanh())
}

#[derive(Clone, Debug)]
pub struct PlantState {
    pub lag: Position2,
    pub queue: VecDeque<Actuation2>,
    rng: ChaCha8Rng,
}

impl PlantState {
    /// Rest state with a zero-filled command queue sized for period `dt`.
    pub fn new(params: &PlantParams, dt: f64) -> Self {
        PlantState {
            lag: Position2::ORIGIN,
            queue: std::iter::repeat_n(Actuation2::ZERO, params.delay_queue_len(dt)).collect(),
            rng: ChaCha8Rng::seed_from_u64(params.seed),
        }
    }
}

/// Advance one control period and return the sensed position.
pub fn step(
    state: &mut PlantState,
    params: &PlantParams,
    command: Actuation2,
    dt: f64,
) -> Result<Position2> {
    if !(dt > 0.0) {
        return Err(invalid(format!("dt {dt} must be positive")));
    }
    let command = command.clamped();
    let applied = match state.queue.pop_front() {
        Some(old) => {
            state.queue.push_back(command);
            old
        }
        None => command,
    };
    let e = equilibrium(params, applied);
    let alpha = 1.0 - (-dt / params.time_constant).exp();
    state.lag.x += alpha * (e.x - state.lag.x);
    state.lag.y += alpha * (e.y - state.lag.y);
    let nx: f64 = StandardNormal.sample(&mut state.rng);
    let ny: f64 = StandardNormal.sample(&mut state.rng);
    Ok(Position2::new(
        state.lag.x + params.noise_std * nx,
        state.lag.y + params.noise_std * ny,
    ))
}

/// Stateful convenience wrapper pairing parameters with their state.
#[derive(Clone, Debug)]
pub struct Plant {
    pub params: PlantParams,
    pub state: PlantState,
    pub dt: f64,
}

impl Plant {
    pub fn new(params: PlantParams, dt: f64) -> Result<Self> {
        params.validate()?;
        if !(dt > 0.0) {
            return Err(invalid(format!("dt {dt} must be positive")));
        }
        let state = PlantState::new(&params, dt);
        Ok(Plant { params, state, dt })
    }

    pub fn step(&mut self, command: Actuation2) -> Position2 {
        step(&mut self.state, &self.params, command, self.dt).expect("dt checked at construction")
    }
}

/// Open-loop replay of a command sequence with noise disabled.
pub fn replay_noise_free(params: &PlantParams, commands: &[Actuation2], dt: f64) -> Vec<Position2> {
    let mut p = params.clone();
    p.noise_std = 0.0;
    let mut plant = Plant::new(p, dt).expect("valid params");
    commands.iter().map(|&c| plant.step(c)).collect()
}

/// Mean pointwise distance between two replays of the same command sequence.
pub fn open_loop_divergence(a: &PlantParams, b: &PlantParams, commands: &[Actuation2], dt: f64) -> f64 {
    let pa = replay_noise_free(a, commands, dt);
    let pb = replay_noise_free(b, commands, dt);
    pa.iter().zip(&pb).map(|(x, y)| x.distance(*y)).sum::<f64>() / commands.len().max(1) as f64
}

/// Bounded random-walk command sequence used for excitation and for
/// calibration replays.
pub fn random_walk(n: usize, max_delta: f64, seed: u64) -> Vec<Actuation2> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut a = [0.0f64; 2];
    let d = if max_delta > 0.0 {
        Some(Uniform::new_inclusive(-max_delta, max_delta).expect("valid range"))
    } else {
        None
    };
    (0..n)
        .map(|_| {
            if let Some(d) = &d {
                for v in a.iter_mut() {
                    *v = (*v + d.sample(&mut rng)).clamp(-1.0, 1.0);
                }
            }
            Actuation2::from_array(a)
        })
        .collect()
}
