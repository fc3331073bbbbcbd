//! Kinematic bicycle car on an L-shaped corridor: continuous dynamics
//! discretized with Euler substeps, a bang-bang steering controller, and the
//! reference-error task map.

use serde::{Deserialize, Serialize};

use crate::geometry::Segment;
use crate::{Error, Result};

pub const C_A: f64 = 1.633;
pub const C_M: f64 = 0.2;
pub const C_H: f64 = 4.0;
pub const L_F: f64 = 0.225;
pub const L_R: f64 = 0.225;
pub const THROTTLE: f64 = 16.0;
/// Steering saturation: 15 degrees.
pub const DELTA_MAX: f64 = 15.0 * std::f64::consts::PI / 180.0;
/// Controller sampling period (10 Hz).
pub const PERIOD: f64 = 0.1;
/// Euler substeps per control period.
pub const SUBSTEPS: usize = 5;

/// L-shaped corridor: a vertical leg along `x = 0` from `y = start_y` up to
/// the corner, then a horizontal leg along `y = corner[1]` out to `end_x`.
/// Walls run parallel to the centerline at `half_width`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Track {
    pub corner: [f64; 2],
    pub start_y: f64,
    pub end_x: f64,
    pub half_width: f64,
    /// Mode-switch height: states with `y <= guard_y` track the vertical
    /// leg. Must sit at least one full-steering turn radius
    /// (`(l_f+l_r)/tan(delta_max)` ~ 1.68 m) below the outer wall or the
    /// bang-bang turn cannot clear it.
    pub guard_y: f64,
}

impl Default for Track {
    fn default() -> Self {
        // guard_y near corner_y - pi/2: where the horizontal-leg error
        // (corner_y - y) - theta crosses zero for a north-heading car, so
        // the mode handoff does not jerk the steering.
        Self {
            corner: [0.0, 7.0],
            start_y: 0.0,
            end_x: 6.0,
            half_width: 0.75,
            guard_y: 5.4,
        }
    }
}

impl Track {
    /// Vertical then horizontal centerline segment.
    pub fn segments(&self) -> [Segment; 2] {
        [
            Segment {
                a: [self.corner[0], self.start_y],
                b: self.corner,
            },
            Segment {
                a: self.corner,
                b: [self.end_x, self.corner[1]],
            },
        ]
    }

    /// Corridor walls: outer left + top, inner right + corner shelf.
    pub fn walls(&self) -> Vec<Segment> {
        let w = self.half_width;
        let [cx, cy] = self.corner;
        vec![
            Segment {
                a: [cx - w, self.start_y],
                b: [cx - w, cy + w],
            },
            Segment {
                a: [cx - w, cy + w],
                b: [self.end_x, cy + w],
            },
            Segment {
                a: [cx + w, self.start_y],
                b: [cx + w, cy - w],
            },
            Segment {
                a: [cx + w, cy - w],
                b: [self.end_x, cy - w],
            },
        ]
    }

    /// Combined tracking error `e_theta + e_d` using the axis-aligned mode
    /// guard; affine in the state within each mode, which is what both the
    /// dataset generator and the verifier abstract.
    pub fn task(&self, state: &[f64]) -> f64 {
        let (x, y, theta) = (state[0], state[1], state[3]);
        if y <= self.guard_y {
            (x - self.corner[0]) + (std::f64::consts::FRAC_PI_2 - theta)
        } else {
            (self.corner[1] - y) - theta
        }
    }
}

fn wrap_angle(a: f64) -> f64 {
    let mut a = a % std::f64::consts::TAU;
    if a > std::f64::consts::PI {
        a -= std::f64::consts::TAU;
    } else if a <= -std::f64::consts::PI {
        a += std::f64::consts::TAU;
    }
    a
}

/// Signed heading and lateral errors against the geometrically nearest
/// centerline segment. Lateral sign: left of travel negative. Heading sign:
/// positive when a positive (left) steering command reduces the error.
pub fn reference_error(state: &[f64], track: &Track) -> Result<(f64, f64)> {
    let (x, y, theta) = (state[0], state[1], state[3]);
    if y < track.start_y - 1e-9 || x > track.end_x + 1e-9 {
        return Err(Error::Lookup(format!(
            "pose ({x}, {y}) beyond track extent"
        )));
    }
    let [seg_v, seg_h] = track.segments();
    let dv = seg_v.distance_to_point([x, y]);
    let dh = seg_h.distance_to_point([x, y]);
    if dv <= dh {
        Ok((wrap_angle(std::f64::consts::FRAC_PI_2 - theta), x - track.corner[0]))
    } else {
        Ok((wrap_angle(-theta), track.corner[1] - y))
    }
}

/// `delta = delta_max * sign(e)` with `sign(0) = +1`.
pub fn bang_bang_controller(e: f64) -> f64 {
    if e >= 0.0 {
        DELTA_MAX
    } else {
        -DELTA_MAX
    }
}

/// Velocity derivative: `-c_a v + c_a c_m (u - c_h)`.
pub fn v_dot(v: f64) -> f64 {
    -C_A * v + C_A * C_M * (THROTTLE - C_H)
}

/// Advances one 0.1 s control period with `SUBSTEPS` explicit-Euler substeps
/// under a constant (saturated) steering input. State is `(x, y, v, theta)`.
pub fn car_step(state: &[f64], delta: f64) -> Vec<f64> {
    let delta = delta.clamp(-DELTA_MAX, DELTA_MAX);
    let k = delta.tan() / (L_F + L_R);
    let dt = PERIOD / SUBSTEPS as f64;
    let (mut x, mut y, mut v, mut theta) = (state[0], state[1], state[2], state[3]);
    for _ in 0..SUBSTEPS {
        let (nx, ny, nv, nt) = (
            x + dt * v * theta.cos(),
            y + dt * v * theta.sin(),
            v + dt * v_dot(v),
            theta + dt * k * v,
        );
        (x, y, v, theta) = (nx, ny, nv, nt);
    }
    vec![x, y, v, theta]
}
