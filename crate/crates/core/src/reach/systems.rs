//! Taylor-model abstractions of the case-study systems.

use std::f64::consts::{FRAC_PI_2, PI};

use crate::geometry::{HyperBox, Interval};
use crate::models::kinematic_car::{
    bang_bang_controller, car_step, Track, C_A, C_M, C_H, DELTA_MAX, L_F, L_R, PERIOD, SUBSTEPS,
    THROTTLE,
};
use crate::models::mountain_car::MountainCar;
use crate::reach::{ControllerKind, HybridSystemModel};
use crate::taylor::{Elementary, TaylorModel};
use crate::{Error, Result};

/// Range enclosure of sin over an interval: endpoint values plus any
/// extremum of the form pi/2 + k*pi inside the interval.
pub fn sin_interval(iv: &Interval) -> Interval {
    if iv.width() >= std::f64::consts::TAU {
        return Interval { lo: -1.0, hi: 1.0 };
    }
    let (mut lo, mut hi) = (iv.lo.sin().min(iv.hi.sin()), iv.lo.sin().max(iv.hi.sin()));
    // Smallest k with pi/2 + k*pi >= iv.lo, then walk extrema inside.
    let mut k = ((iv.lo - FRAC_PI_2) / PI).ceil() as i64;
    loop {
        let x = FRAC_PI_2 + k as f64 * PI;
        if x > iv.hi {
            break;
        }
        if k.rem_euclid(2) == 0 {
            hi = 1.0;
        } else {
            lo = -1.0;
        }
        k += 1;
    }
    Interval { lo, hi }
}

pub fn cos_interval(iv: &Interval) -> Interval {
    sin_interval(&Interval {
        lo: iv.lo + FRAC_PI_2,
        hi: iv.hi + FRAC_PI_2,
    })
}

/// Mountain Car closed loop: smooth tanh controller over the noisy position
/// estimate and the true velocity. The symbolic step is the unclamped
/// update; the controller is tuned so the clamps stay inactive over the
/// verified envelope (see the model's tests).
pub struct MountainCarSystem {
    pub mc: MountainCar,
}

impl Default for MountainCarSystem {
    fn default() -> Self {
        Self {
            mc: MountainCar::default(),
        }
    }
}

impl HybridSystemModel for MountainCarSystem {
    fn state_dim(&self) -> usize {
        2
    }

    fn output_dim(&self) -> usize {
        1
    }

    fn domain(&self) -> HyperBox {
        MountainCar::domain()
    }

    fn controller_kind(&self) -> ControllerKind {
        ControllerKind::Smooth
    }

    fn task_tm(&self, x: &[TaylorModel], _bbox: &HyperBox) -> Result<Vec<TaylorModel>> {
        Ok(vec![x[0].clone()])
    }

    fn controller_tm(&self, x: &[TaylorModel], y: &[TaylorModel]) -> Result<TaylorModel> {
        // tanh(kv * v + kp * (y + 0.52))
        let arg = x[1]
            .scale(self.mc.kappa_v)
            .add(&y[0].scale(self.mc.kappa_p))?
            .add_const(self.mc.kappa_p * 0.52);
        arg.compose_elementary(Elementary::Tanh)
    }

    fn step_tm(&self, x: &[TaylorModel], u: &TaylorModel) -> Result<Vec<TaylorModel>> {
        let (p, v) = (&x[0], &x[1]);
        let cos3p = p.scale(3.0).compose_elementary(Elementary::Cos)?;
        let v_next = v.add(&u.scale(0.0015))?.sub(&cos3p.scale(0.0025))?;
        let p_next = p.add(v)?;
        Ok(vec![p_next, v_next])
    }

    fn task_concrete(&self, x: &[f64]) -> Vec<f64> {
        MountainCar::task(x)
    }

    fn controller_concrete(&self, y: &[f64], x: &[f64]) -> f64 {
        self.mc.controller(y[0], x[1])
    }

    fn step_concrete(&self, x: &[f64], u: f64) -> Vec<f64> {
        self.mc.step(x, u)
    }
}

/// Kinematic car on the L-shaped track: bang-bang steering on the perceived
/// tracking error, fixed throttle, explicit-Euler substeps with an interval
/// bound on the local truncation error added to the remainders.
pub struct KinematicCarSystem {
    pub track: Track,
    pub domain: HyperBox,
}

impl Default for KinematicCarSystem {
    fn default() -> Self {
        let track = Track::default();
        // (x, y, v, theta): the corridor's bounding box, terminal-velocity
        // headroom, and headings from slightly past south-east chatter up to
        // north overshoot.
        let domain = HyperBox::from_bounds(&[
            (track.corner[0] - track.half_width, track.end_x),
            (track.start_y, track.corner[1] + track.half_width),
            (0.0, 3.0),
            (-1.2, 2.8),
        ])
        .unwrap();
        Self { track, domain }
    }
}

impl HybridSystemModel for KinematicCarSystem {
    fn state_dim(&self) -> usize {
        4
    }

    fn output_dim(&self) -> usize {
        1
    }

    fn domain(&self) -> HyperBox {
        self.domain.clone()
    }

    fn controller_kind(&self) -> ControllerKind {
        ControllerKind::SignSwitching
    }

    fn task_guards(&self) -> Vec<(usize, f64)> {
        vec![(1, self.track.guard_y)]
    }

    fn task_tm(&self, x: &[TaylorModel], bbox: &HyperBox) -> Result<Vec<TaylorModel>> {
        let y_iv = bbox.dims[1];
        // Guard splits clip onto the guard plane through an affine re-wrap,
        // which can overshoot it by a few ulps; absorb that into the mode
        // decision rather than reporting a straddle.
        let tol = 1e-9 * (1.0 + self.track.guard_y.abs());
        let e = if y_iv.hi <= self.track.guard_y + tol {
            // Vertical leg: (x - corner_x) + (pi/2 - theta).
            x[0].sub(&x[3])?
                .add_const(FRAC_PI_2 - self.track.corner[0])
        } else if y_iv.lo > self.track.guard_y - tol {
            // Horizontal leg: (corner_y - y) - theta.
            x[1].neg().sub(&x[3])?.add_const(self.track.corner[1])
        } else {
            return Err(Error::Validation(format!(
                "task-map guard straddled by y range {y_iv:?}"
            )));
        };
        Ok(vec![e])
    }

    fn switch_tm(&self, y: &[TaylorModel]) -> Result<TaylorModel> {
        Ok(y[0].clone())
    }

    fn control_for_sign(&self, positive: bool) -> f64 {
        if positive {
            DELTA_MAX
        } else {
            -DELTA_MAX
        }
    }

    fn step_tm(&self, x: &[TaylorModel], u: &TaylorModel) -> Result<Vec<TaylorModel>> {
        // The steering input is piecewise constant by construction.
        if u.coeffs.keys().any(|e| e.iter().any(|&p| p > 0)) || u.remainder.width() > 0.0 {
            return Err(Error::Validation(
                "car steering must be a constant model".into(),
            ));
        }
        let delta = u
            .coeffs
            .first_key_value()
            .map(|(_, &c)| c)
            .unwrap_or(0.0)
            .clamp(-DELTA_MAX, DELTA_MAX);
        let curvature = delta.tan() / (L_F + L_R);
        let dt = PERIOD / SUBSTEPS as f64;
        let accel = C_A * C_M * (THROTTLE - C_H);
        let mut s: Vec<TaylorModel> = x.to_vec();
        for _ in 0..SUBSTEPS {
            let (px, py, v, theta) = (&s[0], &s[1], &s[2], &s[3]);
            let cos_t = theta.compose_elementary(Elementary::Cos)?;
            let sin_t = theta.compose_elementary(Elementary::Sin)?;
            let mut nx = px.add(&v.mul(&cos_t)?.scale(dt))?;
            let mut ny = py.add(&v.mul(&sin_t)?.scale(dt))?;
            let mut nv = v.scale(1.0 - dt * C_A).add_const(dt * accel);
            let mut nt = theta.add(&v.scale(dt * curvature))?;

            // Explicit-Euler local truncation error: (dt^2 / 2) * x''
            // interval-evaluated over the hull of the pre/post substep
            // ranges. The hull stands in for the true flow over the substep
            // (declared fidelity boundary, not a verified integrator).
            // Hulled with zero so the enclosure covers both the continuous
            // flow and the Euler map itself, which is what the concrete
            // simulator (and hence the calibration data) uses.
            let v_iv = v.interval_eval().hull(&nv.interval_eval());
            let t_iv = theta.interval_eval().hull(&nt.interval_eval());
            let vdot_iv = v_iv.scale(-C_A).add(&Interval::point(accel));
            let cos_iv = cos_interval(&t_iv);
            let sin_iv = sin_interval(&t_iv);
            let v2k_iv = v_iv.mul(&v_iv).scale(curvature);
            let half_dt2 = 0.5 * dt * dt;
            let ltes = [
                vdot_iv.mul(&cos_iv).sub(&v2k_iv.mul(&sin_iv)).scale(half_dt2),
                vdot_iv.mul(&sin_iv).add(&v2k_iv.mul(&cos_iv)).scale(half_dt2),
                vdot_iv.scale(-C_A).scale(half_dt2),
                vdot_iv.scale(curvature).scale(half_dt2),
            ];
            for (tm, lte) in [&mut nx, &mut ny, &mut nv, &mut nt].into_iter().zip(&ltes) {
                let covering = Interval {
                    lo: lte.lo.min(0.0),
                    hi: lte.hi.max(0.0),
                };
                tm.remainder = tm.remainder.add(&covering);
            }
            s = vec![nx, ny, nv, nt];
        }
        Ok(s)
    }

    fn task_concrete(&self, x: &[f64]) -> Vec<f64> {
        vec![self.track.task(x)]
    }

    fn controller_concrete(&self, y: &[f64], _x: &[f64]) -> f64 {
        bang_bang_controller(y[0])
    }

    fn step_concrete(&self, x: &[f64], u: f64) -> Vec<f64> {
        car_step(x, u)
    }
}
