//! TOML pipeline configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::geometry::HyperBox;
use crate::models::noise::NoiseProfile;
use crate::partition_opt::GaConfig;
use crate::reach::ReachConfig;
use crate::taylor::{SHRINK_EPS, SHRINK_FRAC};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    MountainCar,
    KinematicCar,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Splits {
    pub n_reg: usize,
    pub n_conf: usize,
    pub n_test: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct GaSection {
    pub population: usize,
    pub generations: usize,
    pub p_c_cut: f64,
    pub p_c_alpha: f64,
    pub p_m_cut: f64,
    pub p_m_alpha: f64,
    pub gamma: f64,
    pub alpha_min: f64,
    pub cut_budget: Vec<usize>,
    pub dynamic_confidence: bool,
}

impl Default for GaSection {
    fn default() -> Self {
        Self {
            population: 1000,
            generations: 100,
            p_c_cut: 0.5,
            p_c_alpha: 0.5,
            p_m_cut: 0.3,
            p_m_alpha: 0.3,
            gamma: 0.9,
            alpha_min: 0.001,
            cut_budget: vec![1],
            dynamic_confidence: false,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ReachSection {
    pub max_branches: usize,
    pub order: u32,
    pub initial_splits: usize,
    pub rebase_every: usize,
    pub hard_cap: usize,
}

impl Default for ReachSection {
    fn default() -> Self {
        Self {
            max_branches: 50,
            order: 3,
            initial_splits: 20,
            rebase_every: 10,
            hard_cap: 10_000,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub model: ModelKind,
    pub out_dir: PathBuf,
    pub alpha: f64,
    /// Control steps per trajectory (both for data and for verification).
    pub horizon: usize,
    pub seed: u64,
    /// Initial-set bounds, one `[lo, hi]` pair per state dimension.
    pub x0: Vec<[f64; 2]>,
    pub splits: Splits,
    pub noise: NoiseProfile,
    #[serde(default)]
    pub ga: GaSection,
    #[serde(default)]
    pub reach: ReachSection,
}

impl PipelineConfig {
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let cfg: PipelineConfig =
            toml::from_str(&text).map_err(|e| Error::Serde(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0 < self.alpha && self.alpha < 1.0) {
            return Err(Error::Validation(format!("alpha {} outside (0,1)", self.alpha)));
        }
        if self.horizon == 0 {
            return Err(Error::Validation("horizon must be positive".into()));
        }
        if self.splits.n_reg == 0 || self.splits.n_conf == 0 || self.splits.n_test == 0 {
            return Err(Error::Validation("split sizes must be positive".into()));
        }
        self.noise.validate()?;
        self.x0_box()?;
        Ok(())
    }

    pub fn x0_box(&self) -> Result<HyperBox> {
        let pairs: Vec<(f64, f64)> = self.x0.iter().map(|&[lo, hi]| (lo, hi)).collect();
        HyperBox::from_bounds(&pairs)
    }

    pub fn ga_config(&self) -> GaConfig {
        GaConfig {
            population: self.ga.population,
            generations: self.ga.generations,
            p_c_cut: self.ga.p_c_cut,
            p_c_alpha: self.ga.p_c_alpha,
            p_m_cut: self.ga.p_m_cut,
            p_m_alpha: self.ga.p_m_alpha,
            gamma: self.ga.gamma,
            alpha: self.alpha,
            alpha_min: self.ga.alpha_min,
            cut_budget: self.ga.cut_budget.clone(),
            dynamic_confidence: self.ga.dynamic_confidence,
            seed: self.seed,
        }
    }

    pub fn reach_config(&self) -> Result<ReachConfig> {
        Ok(ReachConfig {
            horizon: self.horizon,
            max_branches: self.reach.max_branches,
            order: self.reach.order,
            x0: self.x0_box()?,
            initial_splits: self.reach.initial_splits,
            rebase_every: self.reach.rebase_every,
            hard_cap: self.reach.hard_cap,
            shrink_eps: SHRINK_EPS,
            shrink_frac: SHRINK_FRAC,
            seed: self.seed,
        })
    }
}
