//! Online kinematics controller: sliding-window estimate of the linear map
//! `p ~ K a` and a box-constrained least-squares solve for the next command.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};

use crate::error::{invalid, Error, Result};

pub const DEFAULT_WINDOW: usize = 5;
pub const DEFAULT_RIDGE: f64 = 1e-6;

/// Damping used when the window cannot pin down K on its own.
const FALLBACK_RIDGE: f64 = 1e-9;
/// Relative tolerance for objective ties in the box solve.
const TIE_TOL: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct KinematicsState {
    pub k: DMatrix<f64>,
    /// Newest first: column 0 is `p_t`.
    p_window: VecDeque<DVector<f64>>,
    /// Newest first: column 0 is `a_{t-1}`, paired with `p_t`.
    a_window: VecDeque<DVector<f64>>,
    pub ridge: f64,
    pub window: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UpdateInfo {
    /// `||P - K A||_F^2` before and after the update.
    pub residual_before: f64,
    pub residual_after: f64,
    /// Damping actually used.
    pub ridge_used: f64,
}

/// Planar state: K = I, empty windows, default ridge and width.
pub fn init_state() -> KinematicsState {
    KinematicsState::new(2, DEFAULT_WINDOW, DEFAULT_RIDGE)
}

impl KinematicsState {
    pub fn new(dim: usize, window: usize, ridge: f64) -> Self {
        KinematicsState {
            k: DMatrix::identity(dim, dim),
            p_window: VecDeque::with_capacity(window + 1),
            a_window: VecDeque::with_capacity(window + 1),
            ridge,
            window: window.max(1),
        }
    }

    pub fn dim(&self) -> usize {
        self.k.nrows()
    }

    pub fn columns(&self) -> usize {
        self.p_window.len()
    }

    /// Insert the newest (position, prior actuation) pair, dropping the oldest
    /// once the window is full.
    pub fn push_observation(&mut self, position: &[f64], prior_actuation: &[f64]) {
        assert_eq!(position.len(), self.dim(), "position dimension");
        assert_eq!(prior_actuation.len(), self.dim(), "actuation dimension");
        self.p_window.push_front(DVector::from_column_slice(position));
        self.a_window.push_front(DVector::from_column_slice(prior_actuation));
        self.p_window.truncate(self.window);
        self.a_window.truncate(self.window);
    }

    /// `dim x columns`, newest column first.
    pub fn p_matrix(&self) -> DMatrix<f64> {
        stack(&self.p_window, self.dim())
    }

    pub fn a_matrix(&self) -> DMatrix<f64> {
        stack(&self.a_window, self.dim())
    }

    /// Minimize `||P - K A||^2 + ridge ||K - K_prev||^2`, warm-started at the
    /// current K. The quadratic is solved exactly in one Gauss-Newton step;
    /// if the normal matrix is singular the damping is raised.
    pub fn update_k(&mut self) -> Result<UpdateInfo> {
        if self.columns() < 2 {
            return Err(Error::InsufficientData(format!("{} window columns, need 2", self.columns())));
        }
        let p = self.p_matrix();
        let a = self.a_matrix();
        let n = self.dim();
        let k_prev = self.k.clone();
        let before = (&p - &k_prev * &a).norm_squared();
        let aat = &a * a.transpose();
        let pat = &p * a.transpose();
        let mut ridge = self.ridge;
        let mut k_new = None;
        for _ in 0..8 {
            let m = &aat + DMatrix::identity(n, n) * ridge;
            if well_conditioned(&m) {
                if let Some(ch) = m.clone().cholesky() {
                    // K M = P A^T + ridge K_prev  =>  M K^T = (P A^T + ridge K_prev)^T
                    let rhs = (&pat + &k_prev * ridge).transpose();
                    k_new = Some(ch.solve(&rhs).transpose());
                    break;
                }
            }
            let scale = aat.trace().abs().max(1.0);
            ridge = if ridge == 0.0 { FALLBACK_RIDGE * scale } else { ridge * 1e3 };
        }
        let Some(k_new) = k_new else {
            return Ok(UpdateInfo {
                residual_before: before,
                residual_after: before,
                ridge_used: ridge,
            });
        };
        let after = (&p - &k_new * &a).norm_squared();
        let objective = |k: &DMatrix<f64>, r: f64| -> f64 {
            (&p - k * &a).norm_squared() + r * (k - &k_prev).norm_squared()
        };
        // The damped solution can only lower the objective; guard against
        // rounding by keeping the warm start if it does not.
        if !k_new.iter().all(|v| v.is_finite()) || objective(&k_new, ridge) > objective(&k_prev, ridge) || after > before {
            return Ok(UpdateInfo {
                residual_before: before,
                residual_after: before,
                ridge_used: ridge,
            });
        }
        self.k = k_new;
        Ok(UpdateInfo {
            residual_before: before,
            residual_after: after,
            ridge_used: ridge,
        })
    }

    /// Minimize `||target - K a||` over the box `[-1, 1]^n`, ties broken by
    /// smallest `||a||`.
    pub fn solve_actuation(&self, target: &[f64]) -> Vec<f64> {
        solve_box(&self.k, target)
    }

    /// Row-major copy of K.
    pub fn k_row_major(&self) -> Vec<f64> {
        let n = self.dim();
        (0..n * n).map(|i| self.k[(i / n, i % n)]).collect()
    }
}

fn stack(cols: &VecDeque<DVector<f64>>, dim: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(dim, cols.len());
    for (j, c) in cols.iter().enumerate() {
        m.set_column(j, c);
    }
    m
}

fn well_conditioned(m: &DMatrix<f64>) -> bool {
    let eig = m.clone().symmetric_eigen();
    let hi = eig.eigenvalues.iter().copied().fold(0.0f64, f64::max);
    let lo = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    hi > 0.0 && lo > 1e-12 * hi
}

/// Exact box-constrained least squares for small n: every coordinate is free,
/// pinned at -1 or pinned at +1; each of the 3^n faces is solved with a
/// minimum-norm pseudo-inverse and the best feasible candidate wins.
pub fn solve_box(k: &DMatrix<f64>, target: &[f64]) -> Vec<f64> {
    let n = k.ncols();
    let m = k.nrows();
    assert_eq!(target.len(), m, "target dimension");
    let t = DVector::from_column_slice(target);
    let faces = 3usize.pow(n as u32);
    let mut best: Option<(f64, f64, DVector<f64>)> = None;
    for code in 0..faces {
        let mut state = vec![0u8; n];
        let mut c = code;
        for s in state.iter_mut() {
            *s = (c % 3) as u8;
            c /= 3;
        }
        let free: Vec<usize> = (0..n).filter(|&i| state[i] == 0).collect();
        let mut a = DVector::zeros(n);
        let mut r = t.clone();
        for i in 0..n {
            if state[i] != 0 {
                let v = if state[i] == 1 { -1.0 } else { 1.0 };
                a[i] = v;
                r -= k.column(i) * v;
            }
        }
        if !free.is_empty() {
            let kf = k.select_columns(&free);
            let Ok(pinv) = kf.pseudo_inverse(1e-12) else { continue };
            let sol = pinv * &r;
            if sol.iter().any(|v| !v.is_finite() || v.abs() > 1.0 + 1e-12) {
                continue;
            }
            for (j, &i) in free.iter().enumerate() {
                a[i] = sol[j].clamp(-1.0, 1.0);
            }
        }
        let obj = (&t - k * &a).norm();
        let norm = a.norm();
        let better = match &best {
            None => true,
            Some((bo, bn, _)) => {
                let tol = TIE_TOL * (1.0 + bo.abs());
                obj < bo - tol || ((obj - bo).abs() <= tol && norm < *bn)
            }
        };
        if better {
            best = Some((obj, norm, a));
        }
    }
    best.expect("the all-pinned vertices are always feasible").2.iter().copied().collect()
}

/// Validate a ridge/window pair from configuration.
pub fn check_config(window: usize, ridge: f64) -> Result<()> {
    if window < 2 {
        return Err(invalid("kinematics window must hold at least 2 columns"));
    }
    if !(ridge >= 0.0) {
        return Err(invalid("ridge must be nonnegative"));
    }
    Ok(())
}
