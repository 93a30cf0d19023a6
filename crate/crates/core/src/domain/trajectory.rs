use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::types::Position2;
use crate::error::{invalid, Result};

/// Control period of the reference rig, seconds (about 3.3 Hz).
pub const NOMINAL_PERIOD: f64 = 0.3;

/// Max spacing between consecutive waypoints as a fraction of workspace length.
const MAX_SPACING: f64 = 0.05;

/// Dense sampling used for curved pieces before equal-arc resampling.
const CURVE_SEGMENTS: usize = 4096;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySpec {
    pub name: String,
    pub waypoints: Vec<Position2>,
    pub step_count: usize,
    pub control_period: f64,
}

impl TrajectorySpec {
    /// Build a trajectory from explicit waypoints, checking length and spacing.
    pub fn custom(
        name: impl Into<String>,
        waypoints: Vec<Position2>,
        control_period: f64,
        workspace_length: f64,
    ) -> Result<Self> {
        let spec = TrajectorySpec {
            name: name.into(),
            step_count: waypoints.len(),
            waypoints,
            control_period,
        };
        spec.validate(workspace_length)?;
        Ok(spec)
    }

    pub fn validate(&self, workspace_length: f64) -> Result<()> {
        if self.step_count == 0 || self.waypoints.len() != self.step_count {
            return Err(invalid(format!(
                "trajectory {} has {} waypoints for step_count {}",
                self.name,
                self.waypoints.len(),
                self.step_count
            )));
        }
        if !(self.control_period > 0.0) {
            return Err(invalid("control_period must be positive"));
        }
        let lim = MAX_SPACING * workspace_length;
        for (i, w) in self.waypoints.windows(2).enumerate() {
            let d = w[0].distance(w[1]);
            if !(d <= lim) {
                return Err(invalid(format!(
                    "waypoints {i} and {} are {d:.3} mm apart (limit {lim:.3})",
                    i + 1
                )));
            }
        }
        Ok(())
    }

    pub fn with_period(mut self, control_period: f64) -> Self {
        self.control_period = control_period;
        self
    }

    /// Length of the closed polyline through all waypoints.
    pub fn arc_length(&self) -> f64 {
        closed_arc_length(&self.waypoints)
    }
}

pub fn closed_arc_length(points: &[Position2]) -> f64 {
    if points.len() < 2 {
        return 0.0;
    }
    let open: f64 = points.windows(2).map(|w| w[0].distance(w[1])).sum();
    open + points[points.len() - 1].distance(points[0])
}

/// Circle of diameter 0.45 L followed by a square of side 0.45 L, both centred
/// on the rest pose. Starts at (r, 0) and runs counter-clockwise.
pub fn make_trajectory_a(step_count: usize, workspace_length: f64) -> Result<TrajectorySpec> {
    check_args(step_count, workspace_length)?;
    let r = 0.225 * workspace_length;
    let mut poly: Vec<Position2> = (0..=CURVE_SEGMENTS)
        .map(|i| {
            let t = 2.0 * PI * i as f64 / CURVE_SEGMENTS as f64;
            Position2::new(r * t.cos(), r * t.sin())
        })
        .collect();
    // Back at (r, 0); the square continues upward from there.
    poly.extend([
        Position2::new(r, r),
        Position2::new(-r, r),
        Position2::new(-r, -r),
        Position2::new(r, -r),
        Position2::new(r, 0.0),
    ]);
    finish("A", &poly, step_count, workspace_length)
}

/// Equilateral triangle of side 0.45 L whose base is replaced by a downward
/// half-sine bulge. The apex is 60 degrees; the two base junctions are obtuse.
pub fn make_trajectory_b(step_count: usize, workspace_length: f64) -> Result<TrajectorySpec> {
    check_args(step_count, workspace_length)?;
    let side = 0.45 * workspace_length;
    let base_y = -0.2 * workspace_length;
    let amp = 0.09 * workspace_length;
    let v0 = Position2::new(-side / 2.0, base_y);
    let v2 = Position2::new(0.0, base_y + side * 3f64.sqrt() / 2.0);
    let mut poly: Vec<Position2> = (0..=CURVE_SEGMENTS)
        .map(|i| {
            let u = i as f64 / CURVE_SEGMENTS as f64;
            Position2::new(v0.x + u * side, base_y - amp * (PI * u).sin())
        })
        .collect();
    poly.extend([v2, v0]);
    finish("B", &poly, step_count, workspace_length)
}

fn check_args(step_count: usize, workspace_length: f64) -> Result<()> {
    if step_count < 100 {
        return Err(invalid(format!("step_count {step_count} < 100")));
    }
    if !(workspace_length > 0.0) || !workspace_length.is_finite() {
        return Err(invalid("workspace_length must be positive"));
    }
    Ok(())
}

fn finish(
    name: &str,
    poly: &[Position2],
    step_count: usize,
    workspace_length: f64,
) -> Result<TrajectorySpec> {
    let waypoints = resample(poly, step_count);
    TrajectorySpec::custom(name, waypoints, NOMINAL_PERIOD, workspace_length)
}

/// Equal-arc-length resampling of a polyline that ends where it starts:
/// point k sits at arc distance k * total / n.
fn resample(poly: &[Position2], n: usize) -> Vec<Position2> {
    let mut cum = Vec::with_capacity(poly.len());
    cum.push(0.0);
    for w in poly.windows(2) {
        let last = *cum.last().unwrap();
        cum.push(last + w[0].distance(w[1]));
    }
    let total = *cum.last().unwrap();
    let mut out = Vec::with_capacity(n);
    let mut seg = 0;
    for k in 0..n {
        let d = k as f64 * total / n as f64;
        while seg + 2 < cum.len() && cum[seg + 1] <= d {
            seg += 1;
        }
        let len = cum[seg + 1] - cum[seg];
        let f = if len > 0.0 { (d - cum[seg]) / len } else { 0.0 };
        let (a, b) = (poly[seg], poly[seg + 1]);
        out.push(Position2::new(a.x + f * (b.x - a.x), a.y + f * (b.y - a.y)));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::WORKSPACE_LENGTH;

    fn turning_angle_deg(w: &[Position2], at: Position2, span: usize) -> f64 {
        let n = w.len();
        let (i, _) = w
            .iter()
            .enumerate()
            .map(|(i, p)| (i, p.distance(at)))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap();
        let prev = w[(i + n - span) % n];
        let next = w[(i + span) % n];
        let (ax, ay) = (prev.x - at.x, prev.y - at.y);
        let (bx, by) = (next.x - at.x, next.y - at.y);
        let c = (ax * bx + ay * by) / (ax.hypot(ay) * bx.hypot(by));
        c.clamp(-1.0, 1.0).acos().to_degrees()
    }

    #[test]
    fn a_has_requested_count_and_closes() {
        let t = make_trajectory_a(400, WORKSPACE_LENGTH).unwrap();
        assert_eq!(t.waypoints.len(), 400);
        assert_eq!(t.step_count, 400);
        let spacing = t.waypoints[0].distance(t.waypoints[1]);
        assert!(t.waypoints[399].distance(t.waypoints[0]) <= spacing * 1.0001);
    }

    #[test]
    fn arc_length_is_resolution_independent() {
        for make in [make_trajectory_a, make_trajectory_b] {
            let base = make(400, WORKSPACE_LENGTH).unwrap().arc_length();
            for n in [300, 500] {
                let other = make(n, WORKSPACE_LENGTH).unwrap().arc_length();
                assert!((other - base).abs() / base < 0.005, "{n}: {other} vs {base}");
            }
        }
    }

    #[test]
    fn a_arc_length_matches_geometry() {
        let r = 0.225 * WORKSPACE_LENGTH;
        let exact = 2.0 * PI * r + 8.0 * r;
        let got = make_trajectory_a(400, WORKSPACE_LENGTH).unwrap().arc_length();
        // corner cutting by resampling only shortens the path
        assert!(got <= exact && got > 0.995 * exact, "{got} vs {exact}");
    }

    #[test]
    fn b_has_acute_and_obtuse_corners() {
        let l = WORKSPACE_LENGTH;
        let t = make_trajectory_b(400, l).unwrap();
        let side = 0.45 * l;
        let apex = Position2::new(0.0, -0.2 * l + side * 3f64.sqrt() / 2.0);
        let corner = Position2::new(side / 2.0, -0.2 * l);
        let apex_angle = turning_angle_deg(&t.waypoints, apex, 3);
        let corner_angle = turning_angle_deg(&t.waypoints, corner, 3);
        assert!(apex_angle < 90.0, "apex {apex_angle}");
        assert!(corner_angle > 90.0, "corner {corner_angle}");
    }

    #[test]
    fn waypoints_stay_in_central_band() {
        let l = WORKSPACE_LENGTH;
        for t in [make_trajectory_a(400, l).unwrap(), make_trajectory_b(400, l).unwrap()] {
            for w in &t.waypoints {
                assert!(w.x.abs() <= 0.3 * l + 1e-9 && w.y.abs() <= 0.3 * l + 1e-9, "{w:?}");
            }
        }
    }

    #[test]
    fn generators_are_pure() {
        let a = make_trajectory_b(437, 50.0).unwrap();
        let b = make_trajectory_b(437, 50.0).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn short_step_count_rejected() {
        assert!(make_trajectory_a(99, WORKSPACE_LENGTH).is_err());
        assert!(make_trajectory_b(10, WORKSPACE_LENGTH).is_err());
    }

    #[test]
    fn custom_rejects_sparse_waypoints() {
        let w = vec![Position2::ORIGIN, Position2::new(10.0, 0.0)];
        assert!(TrajectorySpec::custom("c", w, 0.3, WORKSPACE_LENGTH).is_err());
    }
}
