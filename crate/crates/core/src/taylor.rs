//! Taylor models: sparse polynomials with guaranteed remainder intervals.
//!
//! Every model lives over the implicit normalized domain `[-1, 1]^nvars`;
//! affine maps onto concrete state ranges are baked into the polynomial
//! coefficients. Arithmetic truncates at `max_degree`, folding overflow into
//! the remainder via monomial range bounds, and every derived remainder is
//! padded by a few ulps so plain round-to-nearest arithmetic stays sound.

use std::collections::BTreeMap;

use crate::geometry::Interval;
use crate::{Error, Result};

/// Remainder width below which shrink-wrapping is never triggered.
pub const SHRINK_EPS: f64 = 1e-6;
/// Remainder share of the total range above which shrink-wrapping triggers.
pub const SHRINK_FRAC: f64 = 0.1;

/// Elementary functions admitted in compositions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Elementary {
    Sin,
    Cos,
    Tan,
    Tanh,
    Exp,
}

/// A polynomial plus remainder interval over `[-1, 1]^nvars`.
#[derive(Debug, Clone)]
pub struct TaylorModel {
    pub nvars: usize,
    pub max_degree: u32,
    /// Exponent vector (length `nvars`) -> coefficient; zero coefficients are
    /// dropped.
    pub coeffs: BTreeMap<Vec<u32>, f64>,
    pub remainder: Interval,
}

fn total_degree(expt: &[u32]) -> u32 {
    expt.iter().sum()
}

/// Range of a monomial over `[-1, 1]^n`: `[1,1]` for the constant, `[0,1]`
/// when every exponent is even, `[-1,1]` otherwise.
fn monomial_range(expt: &[u32]) -> Interval {
    if expt.iter().all(|&e| e == 0) {
        Interval::point(1.0)
    } else if expt.iter().all(|&e| e % 2 == 0) {
        Interval { lo: 0.0, hi: 1.0 }
    } else {
        Interval { lo: -1.0, hi: 1.0 }
    }
}

impl TaylorModel {
    pub fn constant(c: f64, nvars: usize, max_degree: u32) -> Self {
        let mut coeffs = BTreeMap::new();
        if c != 0.0 {
            coeffs.insert(vec![0; nvars], c);
        }
        Self {
            nvars,
            max_degree,
            coeffs,
            remainder: Interval::point(0.0),
        }
    }

    /// The model of the i-th normalized variable.
    pub fn var(i: usize, nvars: usize, max_degree: u32) -> Result<Self> {
        if i >= nvars {
            return Err(Error::Validation(format!(
                "variable {i} out of range for {nvars} variables"
            )));
        }
        if max_degree == 0 {
            return Err(Error::Validation("max_degree must be at least 1".into()));
        }
        let mut expt = vec![0u32; nvars];
        expt[i] = 1;
        let mut coeffs = BTreeMap::new();
        coeffs.insert(expt, 1.0);
        Ok(Self {
            nvars,
            max_degree,
            coeffs,
            remainder: Interval::point(0.0),
        })
    }

    /// `c0 + sum_i lin[i] * x_i` with zero remainder.
    pub fn affine(c0: f64, lin: &[f64], max_degree: u32) -> Result<Self> {
        let nvars = lin.len();
        let mut tm = Self::constant(c0, nvars, max_degree);
        if max_degree == 0 && lin.iter().any(|&l| l != 0.0) {
            return Err(Error::Validation("max_degree must be at least 1".into()));
        }
        for (i, &l) in lin.iter().enumerate() {
            if l != 0.0 {
                let mut expt = vec![0u32; nvars];
                expt[i] = 1;
                tm.coeffs.insert(expt, l);
            }
        }
        Ok(tm)
    }

    /// Affine model `mid + rad * x_i` covering `iv` over the i-th variable.
    pub fn from_interval(iv: &Interval, i: usize, nvars: usize, max_degree: u32) -> Result<Self> {
        let mut lin = vec![0.0; nvars];
        if i >= nvars {
            return Err(Error::Validation(format!(
                "variable {i} out of range for {nvars} variables"
            )));
        }
        lin[i] = iv.radius();
        Self::affine(iv.mid(), &lin, max_degree)
    }

    fn check_compat(&self, other: &Self) -> Result<()> {
        if self.nvars != other.nvars || self.max_degree != other.max_degree {
            return Err(Error::DomainMismatch(format!(
                "incompatible models: {} vars deg {} vs {} vars deg {}",
                self.nvars, self.max_degree, other.nvars, other.max_degree
            )));
        }
        Ok(())
    }

    fn insert_acc(coeffs: &mut BTreeMap<Vec<u32>, f64>, expt: Vec<u32>, c: f64) {
        use std::collections::btree_map::Entry;
        if c == 0.0 {
            return;
        }
        match coeffs.entry(expt) {
            Entry::Occupied(mut o) => {
                *o.get_mut() += c;
                if *o.get() == 0.0 {
                    o.remove();
                }
            }
            Entry::Vacant(v) => {
                v.insert(c);
            }
        }
    }

    /// Absolute rounding slack for derived remainders, proportional to the
    /// coefficient mass involved.
    fn rounding_slack(&self) -> f64 {
        let mass: f64 = self.coeffs.values().map(|c| c.abs()).sum();
        8.0 * f64::EPSILON * (mass + self.remainder.lo.abs() + self.remainder.hi.abs())
    }

    fn widen(mut self, slack: f64) -> Self {
        self.remainder = Interval {
            lo: self.remainder.lo - slack,
            hi: self.remainder.hi + slack,
        };
        self
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.check_compat(other)?;
        let mut out = self.clone();
        for (e, &c) in &other.coeffs {
            Self::insert_acc(&mut out.coeffs, e.clone(), c);
        }
        out.remainder = out.remainder.add(&other.remainder);
        let slack = out.rounding_slack();
        Ok(out.widen(slack))
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.add(&other.neg())
    }

    pub fn neg(&self) -> Self {
        let mut out = self.clone();
        for c in out.coeffs.values_mut() {
            *c = -*c;
        }
        out.remainder = out.remainder.scale(-1.0);
        out
    }

    pub fn scale(&self, c: f64) -> Self {
        let mut out = self.clone();
        if c == 0.0 {
            out.coeffs.clear();
        }
        for v in out.coeffs.values_mut() {
            *v *= c;
        }
        out.remainder = out.remainder.scale(c);
        let slack = out.rounding_slack();
        out.widen(slack)
    }

    pub fn add_const(&self, c: f64) -> Self {
        let mut out = self.clone();
        Self::insert_acc(&mut out.coeffs, vec![0; self.nvars], c);
        let slack = out.rounding_slack();
        out.widen(slack)
    }

    /// Truncated product. Terms beyond `max_degree` and the remainder cross
    /// terms are folded into the result remainder.
    pub fn mul(&self, other: &Self) -> Result<Self> {
        self.check_compat(other)?;
        let mut coeffs = BTreeMap::new();
        let mut overflow = Interval::point(0.0);
        for (ea, &ca) in &self.coeffs {
            for (eb, &cb) in &other.coeffs {
                let expt: Vec<u32> = ea.iter().zip(eb).map(|(a, b)| a + b).collect();
                let c = ca * cb;
                if total_degree(&expt) <= self.max_degree {
                    Self::insert_acc(&mut coeffs, expt, c);
                } else {
                    overflow = overflow.add(&monomial_range(&expt).scale(c));
                }
            }
        }
        // I_a * B(p_b) + I_b * B(p_a) + I_a * I_b.
        let pa = self.poly_range();
        let pb = other.poly_range();
        let cross = self
            .remainder
            .mul(&pb)
            .add(&other.remainder.mul(&pa))
            .add(&self.remainder.mul(&other.remainder));
        let out = Self {
            nvars: self.nvars,
            max_degree: self.max_degree,
            coeffs,
            remainder: overflow.add(&cross).pad_ulps(),
        };
        let slack = out.rounding_slack();
        Ok(out.widen(slack))
    }

    /// Interval bound on the polynomial part via per-monomial range bounds.
    pub fn poly_range(&self) -> Interval {
        let mut acc = Interval::point(0.0);
        for (e, &c) in &self.coeffs {
            acc = acc.add(&monomial_range(e).scale(c));
        }
        acc
    }

    /// Guaranteed enclosure of the model's range over `[-1, 1]^nvars`.
    pub fn interval_eval(&self) -> Interval {
        self.poly_range().add(&self.remainder).pad_ulps()
    }

    /// Polynomial value at a point (remainder excluded); test/plot helper.
    pub fn eval_poly(&self, x: &[f64]) -> f64 {
        assert_eq!(x.len(), self.nvars);
        self.coeffs
            .iter()
            .map(|(e, &c)| {
                c * e
                    .iter()
                    .zip(x)
                    .map(|(&p, &v)| v.powi(p as i32))
                    .product::<f64>()
            })
            .sum()
    }

    /// Re-embeds the model over a larger variable set (new variables unused).
    pub fn extend_vars(&self, new_nvars: usize) -> Result<Self> {
        if new_nvars < self.nvars {
            return Err(Error::Validation(format!(
                "cannot shrink variable count {} -> {new_nvars}",
                self.nvars
            )));
        }
        let coeffs = self
            .coeffs
            .iter()
            .map(|(e, &c)| {
                let mut ne = e.clone();
                ne.resize(new_nvars, 0);
                (ne, c)
            })
            .collect();
        Ok(Self {
            nvars: new_nvars,
            max_degree: self.max_degree,
            coeffs,
            remainder: self.remainder,
        })
    }

    /// True when the remainder is both non-negligible and a significant
    /// fraction of the total range.
    pub fn needs_shrink_wrap(&self) -> bool {
        let rw = self.remainder.width();
        rw > SHRINK_EPS && rw > SHRINK_FRAC * self.interval_eval().width()
    }

    /// Composes an elementary function onto the model: Taylor expansion of
    /// order `max_degree` at the range midpoint plus a Lagrange remainder
    /// from a derivative bound over the full range.
    pub fn compose_elementary(&self, f: Elementary) -> Result<Self> {
        let j = self.interval_eval();
        if !j.lo.is_finite() || !j.hi.is_finite() {
            return Err(Error::Validation(
                "cannot compose onto a model with unbounded range".into(),
            ));
        }
        let k = self.max_degree as usize;
        if k == 0 {
            return Err(Error::Validation("max_degree must be at least 1".into()));
        }
        let c = j.mid();
        let (derivs, bound) = taylor_data(f, c, &j, k)?;
        let u = self.add_const(-c);
        let mut out = Self::constant(derivs[0], self.nvars, self.max_degree);
        let mut u_pow = Self::constant(1.0, self.nvars, self.max_degree);
        let mut fact = 1.0;
        for (n, &d) in derivs.iter().enumerate().skip(1) {
            u_pow = u_pow.mul(&u)?;
            fact *= n as f64;
            out = out.add(&u_pow.scale(d / fact))?;
        }
        fact *= (k + 1) as f64;
        let umax = (j.lo - c).abs().max((j.hi - c).abs());
        let lagrange = bound / fact * umax.powi(k as i32 + 1);
        if !lagrange.is_finite() {
            return Err(Error::RangeViolation(format!(
                "unbounded Taylor remainder for {f:?} over [{}, {}]",
                j.lo, j.hi
            )));
        }
        out.remainder = out
            .remainder
            .add(&Interval {
                lo: -lagrange,
                hi: lagrange,
            })
            .pad_ulps();
        Ok(out)
    }
}

/// Derivative of a dense univariate polynomial (ascending coefficients).
fn poly_deriv(p: &[f64]) -> Vec<f64> {
    p.iter()
        .enumerate()
        .skip(1)
        .map(|(i, &c)| i as f64 * c)
        .collect()
}

/// `p(t) * (1 + s * t^2)` with `s = +-1`.
fn poly_mul_one_plus_st2(p: &[f64], s: f64) -> Vec<f64> {
    let mut out = vec![0.0; p.len() + 2];
    for (i, &c) in p.iter().enumerate() {
        out[i] += c;
        out[i + 2] += s * c;
    }
    out
}

fn poly_eval(p: &[f64], t: f64) -> f64 {
    p.iter().rev().fold(0.0, |acc, &c| acc * t + c)
}

fn poly_eval_interval(p: &[f64], t: &Interval) -> Interval {
    p.iter().rev().fold(Interval::point(0.0), |acc, &c| {
        acc.mul(t).add(&Interval::point(c))
    })
}

/// Derivatives `f^(0..=k)(c)` and a bound on `|f^(k+1)|` over `range`.
fn taylor_data(f: Elementary, c: f64, range: &Interval, k: usize) -> Result<(Vec<f64>, f64)> {
    match f {
        Elementary::Sin | Elementary::Cos => {
            let phase = if f == Elementary::Sin { 0 } else { 1 };
            let cycle = [c.sin(), c.cos(), -c.sin(), -c.cos()];
            let derivs = (0..=k).map(|n| cycle[(n + phase) % 4]).collect();
            Ok((derivs, 1.0))
        }
        Elementary::Exp => {
            let e = c.exp();
            Ok((vec![e; k + 1], range.hi.exp()))
        }
        Elementary::Tanh | Elementary::Tan => {
            // f^(n) = P_n(t) with t = f(x); P_{n+1} = P_n'(t) (1 + s t^2),
            // s = -1 for tanh, +1 for tan.
            let s = if f == Elementary::Tanh { -1.0 } else { 1.0 };
            let (t0, t_range) = if f == Elementary::Tanh {
                (
                    c.tanh(),
                    Interval {
                        lo: range.lo.tanh(),
                        hi: range.hi.tanh(),
                    },
                )
            } else {
                let margin = std::f64::consts::FRAC_PI_2;
                if range.lo <= -margin || range.hi >= margin {
                    return Err(Error::RangeViolation(format!(
                        "tan composed over [{}, {}], which leaves (-pi/2, pi/2)",
                        range.lo, range.hi
                    )));
                }
                (
                    c.tan(),
                    Interval {
                        lo: range.lo.tan(),
                        hi: range.hi.tan(),
                    }
                    .pad_ulps(),
                )
            };
            let mut p = vec![0.0, 1.0]; // P_0(t) = t
            let mut derivs = Vec::with_capacity(k + 1);
            for _ in 0..=k {
                derivs.push(poly_eval(&p, t0));
                p = poly_mul_one_plus_st2(&poly_deriv(&p), s);
            }
            let b = poly_eval_interval(&p, &t_range).pad_ulps();
            Ok((derivs, b.lo.abs().max(b.hi.abs())))
        }
    }
}

/// Coefficient-wise average of compatible models, with zero remainder; the
/// members' remainders must be re-accounted by the caller (see
/// [`union_enclosure`]).
pub fn average_tm(tms: &[TaylorModel]) -> Result<TaylorModel> {
    let first = tms
        .first()
        .ok_or_else(|| Error::Validation("average of no models".into()))?;
    let inv = 1.0 / tms.len() as f64;
    let mut coeffs: BTreeMap<Vec<u32>, f64> = BTreeMap::new();
    for t in tms {
        first.check_compat(t)?;
        for (e, &c) in &t.coeffs {
            *coeffs.entry(e.clone()).or_insert(0.0) += c * inv;
        }
    }
    coeffs.retain(|_, c| *c != 0.0);
    Ok(TaylorModel {
        nvars: first.nvars,
        max_degree: first.max_degree,
        coeffs,
        remainder: Interval::point(0.0),
    })
}

/// Single model enclosing the union of the given models' sets: the average
/// polynomial, with the remainder inflated to absorb each member's deviation
/// (and anchored to contain zero).
pub fn union_enclosure(tms: &[TaylorModel]) -> Result<TaylorModel> {
    let mut out = average_tm(tms)?;
    let mut lo = 0.0f64;
    let mut hi = 0.0f64;
    for t in tms {
        let d = t.sub(&out)?.interval_eval();
        lo = lo.min(d.lo);
        hi = hi.max(d.hi);
    }
    out.remainder = Interval { lo, hi }.pad_ulps();
    Ok(out)
}

/// Replaces each model with an affine model `mid + rad * x_i` over a fresh
/// variable per component, zero remainder, covering at least the original
/// range. Trades dependency information for a clean polynomial.
pub fn shrink_wrap(tms: &[TaylorModel], max_degree: u32) -> Result<Vec<TaylorModel>> {
    let n = tms.len();
    tms.iter()
        .enumerate()
        .map(|(i, t)| {
            let j = t.interval_eval();
            if !j.lo.is_finite() || !j.hi.is_finite() {
                return Err(Error::Validation(
                    "cannot shrink-wrap a model with unbounded range".into(),
                ));
            }
            let mid = j.mid();
            let rad = (j.hi - mid).max(mid - j.lo).max(0.0) * (1.0 + 4.0 * f64::EPSILON);
            let mut lin = vec![0.0; n];
            lin[i] = rad;
            TaylorModel::affine(mid, &lin, max_degree)
        })
        .collect()
}
