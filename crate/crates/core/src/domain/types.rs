use serde::{Deserialize, Serialize};

/// Side of the square reachable workspace, mm.
pub const WORKSPACE_LENGTH: f64 = 60.94;

/// Planar end position in mm relative to the unactuated rest pose.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Position2 {
    pub x: f64,
    pub y: f64,
}

impl Position2 {
    pub const ORIGIN: Position2 = Position2 { x: 0.0, y: 0.0 };

    pub fn new(x: f64, y: f64) -> Self {
        Position2 { x, y }
    }

    pub fn from_array(a: [f64; 2]) -> Self {
        Position2 { x: a[0], y: a[1] }
    }

    pub fn to_array(self) -> [f64; 2] {
        [self.x, self.y]
    }

    pub fn distance(self, other: Position2) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    /// Finite and within 1.5 workspace half-lengths on each axis.
    pub fn is_sane(self, workspace_length: f64) -> bool {
        let lim = 0.75 * workspace_length;
        self.x.is_finite() && self.y.is_finite() && self.x.abs() <= lim && self.y.abs() <= lim
    }
}

/// Two signed chamber-pair commands. The sign picks the chamber, the magnitude
/// scales the pressure cap.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Actuation2 {
    pub u1: f64,
    pub u2: f64,
}

impl Actuation2 {
    pub const ZERO: Actuation2 = Actuation2 { u1: 0.0, u2: 0.0 };

    pub fn new(u1: f64, u2: f64) -> Self {
        Actuation2 { u1, u2 }
    }

    pub fn from_array(a: [f64; 2]) -> Self {
        Actuation2 { u1: a[0], u2: a[1] }
    }

    pub fn to_array(self) -> [f64; 2] {
        [self.u1, self.u2]
    }

    pub fn clamped(self) -> Self {
        Actuation2 {
            u1: self.u1.clamp(-1.0, 1.0),
            u2: self.u2.clamp(-1.0, 1.0),
        }
    }
}
