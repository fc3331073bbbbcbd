//! Mountain Car: discrete-time dynamics, smooth position-feedback controller,
//! and the position task map.

use serde::{Deserialize, Serialize};

use crate::geometry::HyperBox;

pub const P_MIN: f64 = -1.2;
pub const P_MAX: f64 = 0.6;
pub const V_MIN: f64 = -0.07;
pub const V_MAX: f64 = 0.07;
pub const GOAL: f64 = 0.6;

/// Mountain Car with a smooth surrogate controller
/// `u = tanh(kappa_v * v + kappa_p * (y + 0.52))` acting on the noisy
/// position estimate `y` and the true velocity `v`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MountainCar {
    pub kappa_v: f64,
    pub kappa_p: f64,
}

impl Default for MountainCar {
    fn default() -> Self {
        // Tuned so the zero-noise closed loop from p0 in [-0.55, -0.45]
        // pumps up the left slope once and reaches the goal without ever
        // touching the position/velocity clamps inside a 90-step window
        // (clamping would break the unclamped symbolic abstraction).
        Self {
            kappa_v: 40.0,
            kappa_p: -1.0,
        }
    }
}

impl MountainCar {
    pub fn domain() -> HyperBox {
        HyperBox::from_bounds(&[(P_MIN, P_MAX), (V_MIN, V_MAX)]).unwrap()
    }

    /// One discrete step with standard environment clamping.
    pub fn step(&self, state: &[f64], u: f64) -> Vec<f64> {
        let (p, v) = (state[0], state[1]);
        let v_next = (v + 0.0015 * u - 0.0025 * (3.0 * p).cos()).clamp(V_MIN, V_MAX);
        let p_next = (p + v).clamp(P_MIN, P_MAX);
        vec![p_next, v_next]
    }

    pub fn controller(&self, y: f64, v: f64) -> f64 {
        (self.kappa_v * v + self.kappa_p * (y + 0.52)).tanh()
    }

    /// Perceived quantity: the position.
    pub fn task(state: &[f64]) -> Vec<f64> {
        vec![state[0]]
    }
}
