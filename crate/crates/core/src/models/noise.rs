//! Region-dependent surrogate perception noise.
//!
//! Each profile region pairs a state-space box with a noise scale; the scale
//! is the standard deviation of the drawn error regardless of distribution
//! (uniform draws use half-width `sqrt(3) * sigma`, truncated gaussians are
//! clipped at `3 * sigma` by rejection).

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::HyperBox;
use crate::{Error, Result};

/// Hard clipping point for truncated-gaussian draws, in standard deviations.
pub const GAUSS_TRUNC: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseDist {
    Uniform,
    TruncatedGaussian,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NoiseRegion {
    pub region: HyperBox,
    pub sigma: f64,
    pub dist: NoiseDist,
}

/// State-dependent noise specification; the first region containing a state
/// (half-open membership) wins.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NoiseProfile {
    pub regions: Vec<NoiseRegion>,
}

impl NoiseProfile {
    pub fn uniform_everywhere(domain: &HyperBox, sigma: f64) -> Self {
        Self {
            regions: vec![NoiseRegion {
                region: domain.clone(),
                sigma,
                dist: NoiseDist::Uniform,
            }],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.regions.is_empty() {
            return Err(Error::Validation("noise profile has no regions".into()));
        }
        for r in &self.regions {
            if !(r.sigma >= 0.0) {
                return Err(Error::Validation(format!(
                    "negative noise sigma {}",
                    r.sigma
                )));
            }
        }
        Ok(())
    }

    pub fn region_at(&self, x: &[f64], domain: &HyperBox) -> Result<&NoiseRegion> {
        self.regions
            .iter()
            .find(|r| r.region.contains_half_open(x, domain))
            .ok_or_else(|| Error::Lookup(format!("state {x:?} outside every noise region")))
    }

    /// Draws one error vector of length `dim` for the region containing `x`.
    pub fn sample<R: Rng>(
        &self,
        x: &[f64],
        domain: &HyperBox,
        dim: usize,
        rng: &mut R,
    ) -> Result<Vec<f64>> {
        let r = self.region_at(x, domain)?;
        Ok((0..dim).map(|_| draw(r, rng)).collect())
    }
}

fn draw<R: Rng>(r: &NoiseRegion, rng: &mut R) -> f64 {
    match r.dist {
        NoiseDist::Uniform => {
            let half = 3.0f64.sqrt() * r.sigma;
            if half == 0.0 {
                0.0
            } else {
                rng.random_range(-half..=half)
            }
        }
        NoiseDist::TruncatedGaussian => {
            if r.sigma == 0.0 {
                return 0.0;
            }
            loop {
                // Box-Muller; one variate per pair keeps the stream simple.
                let u1: f64 = rng.random::<f64>();
                let u2: f64 = rng.random::<f64>();
                let z = (-2.0 * (1.0 - u1).ln()).sqrt() * (std::f64::consts::TAU * u2).cos();
                if z.abs() <= GAUSS_TRUNC {
                    return r.sigma * z;
                }
            }
        }
    }
}
