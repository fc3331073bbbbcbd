//! Conformal quantiles, region-based trajectory-wide noise bounds, the
//! piecewise global bound, the per-step union-bound baseline, and coverage
//! evaluation.
//!
//! Quantile convention: every bound computation augments its score set with a
//! single `+inf` score and applies the order-statistic index
//! `ceil((N+1)(1-alpha))` to the augmented multiset. This is the conservative
//! reading that keeps split-conformal coverage valid for trajectory-wide
//! scores. Perception-error vectors reduce to scalars via the max norm.

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::geometry::{HyperBox, Partition};
use crate::{Error, Result};

/// Maps a state to the perception target it should be compared against.
pub trait TaskMap: Sync {
    fn output_dim(&self) -> usize;
    fn extract(&self, state: &[f64]) -> Vec<f64>;
}

/// A task map backed by a plain function, handy in tests.
pub struct FnTaskMap<F: Fn(&[f64]) -> Vec<f64> + Sync> {
    pub dim: usize,
    pub f: F,
}

impl<F: Fn(&[f64]) -> Vec<f64> + Sync> TaskMap for FnTaskMap<F> {
    fn output_dim(&self) -> usize {
        self.dim
    }
    fn extract(&self, state: &[f64]) -> Vec<f64> {
        (self.f)(state)
    }
}

/// One recorded rollout: true states and perception outputs per step.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Trajectory {
    pub id: u64,
    pub states: Vec<Vec<f64>>,
    pub outputs: Vec<Vec<f64>>,
}

/// A fixed-horizon set of rollouts, the calibration substrate.
#[derive(Debug, Clone)]
pub struct TrajectoryDataset {
    pub trajectories: Vec<Trajectory>,
    /// Number of steps per trajectory beyond the initial state; every
    /// trajectory records `horizon + 1` (state, output) pairs.
    pub horizon: usize,
    pub state_dim: usize,
    pub output_dim: usize,
}

impl TrajectoryDataset {
    pub fn new(trajectories: Vec<Trajectory>) -> Result<Self> {
        let first = trajectories
            .first()
            .ok_or_else(|| Error::Validation("empty trajectory dataset".into()))?;
        let steps = first.states.len();
        if steps == 0 {
            return Err(Error::Validation("trajectory with no steps".into()));
        }
        let state_dim = first.states[0].len();
        let output_dim = first.outputs.first().map_or(0, Vec::len);
        for t in &trajectories {
            if t.states.len() != steps || t.outputs.len() != steps {
                return Err(Error::Validation(format!(
                    "trajectory {} has inconsistent horizon",
                    t.id
                )));
            }
            if t.states
                .iter()
                .any(|x| x.len() != state_dim || x.iter().any(|v| !v.is_finite()))
            {
                return Err(Error::Validation(format!(
                    "trajectory {} has malformed states",
                    t.id
                )));
            }
        }
        Ok(Self {
            trajectories,
            horizon: steps - 1,
            state_dim,
            output_dim,
        })
    }

    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    /// JSON-lines serialization: one record per trajectory.
    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(std::fs::File::create(path)?);
        for t in &self.trajectories {
            serde_json::to_writer(&mut w, t)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read_jsonl(path: &Path) -> Result<Self> {
        let r = BufReader::new(std::fs::File::open(path)?);
        let mut trajectories = Vec::new();
        for line in r.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            trajectories.push(serde_json::from_str(&line)?);
        }
        Self::new(trajectories)
    }
}

/// The split-conformal quantile: the k-th smallest score with
/// `k = ceil((N+1)(1-alpha))`, or `+inf` when k exceeds N.
pub fn cp_quantile(scores: &[f64], alpha: f64) -> Result<f64> {
    if scores.is_empty() {
        return Err(Error::Validation("empty score set".into()));
    }
    if !(0.0 < alpha && alpha < 1.0) {
        return Err(Error::Validation(format!("alpha {alpha} outside (0,1)")));
    }
    let n = scores.len();
    let k = ((n as f64 + 1.0) * (1.0 - alpha)).ceil() as usize;
    if k > n {
        return Ok(f64::INFINITY);
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(sorted[k - 1])
}

/// Smallest per-region confidence keeping the quantile index inside the
/// `+inf`-augmented multiset of `n` scores, with a 10% safety margin. A
/// confidence at this floor may still select the augmentation element;
/// callers treat an infinite bound as an infinitely bad (not invalid) region.
pub fn min_feasible_alpha(n: usize) -> f64 {
    assert!(n >= 1);
    1.1 / (n as f64 + 2.0)
}

fn inf_norm_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Per-trajectory nonconformity scores for one region: the maximum
/// perception error over the steps the trajectory spends inside the region
/// boxes (half-open membership). Trajectories that never visit contribute
/// nothing. The `+inf` augmentation is applied by [`regional_bounds`].
pub fn region_scores(
    dataset: &TrajectoryDataset,
    region: &[HyperBox],
    domain: &HyperBox,
    g: &dyn TaskMap,
) -> Vec<f64> {
    let mut scores = Vec::new();
    for traj in &dataset.trajectories {
        let mut max_err: Option<f64> = None;
        for (x, y) in traj.states.iter().zip(&traj.outputs) {
            if region.iter().any(|b| b.contains_half_open(x, domain)) {
                let err = inf_norm_diff(&g.extract(x), y);
                max_err = Some(max_err.map_or(err, |m: f64| m.max(err)));
            }
        }
        if let Some(e) = max_err {
            scores.push(e);
        }
    }
    scores
}

/// All per-region score multisets in one pass over the dataset, using the
/// partition's point location. Equivalent to calling [`region_scores`] per
/// region.
pub fn all_region_scores(
    dataset: &TrajectoryDataset,
    partition: &Partition,
    g: &dyn TaskMap,
) -> Result<Vec<Vec<f64>>> {
    let m = partition.num_regions();
    let mut scores = vec![Vec::new(); m];
    let mut per_traj = vec![f64::NEG_INFINITY; m];
    for traj in &dataset.trajectories {
        per_traj.fill(f64::NEG_INFINITY);
        for (x, y) in traj.states.iter().zip(&traj.outputs) {
            let id = partition.locate(x)?;
            let err = inf_norm_diff(&g.extract(x), y);
            per_traj[id] = per_traj[id].max(err);
        }
        for (i, &s) in per_traj.iter().enumerate() {
            if s > f64::NEG_INFINITY {
                scores[i].push(s);
            }
        }
    }
    Ok(scores)
}

/// Region-level conformal bound: noise level and confidence share.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RegionalBound {
    pub region: usize,
    pub eta: f64,
    pub alpha: f64,
    pub score_count: usize,
}

/// The piecewise-constant noise-bound function H over a partition.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GlobalBound {
    pub partition: Partition,
    pub bounds: Vec<RegionalBound>,
    pub alpha: f64,
}

impl GlobalBound {
    /// Noise bound at a state: the eta of the region containing it.
    pub fn eta_at(&self, state: &[f64]) -> Result<f64> {
        Ok(self.bounds[self.partition.locate(state)?].eta)
    }

    pub fn etas(&self) -> Vec<f64> {
        self.bounds.iter().map(|b| b.eta).collect()
    }

    pub fn has_infinite_region(&self) -> bool {
        self.bounds.iter().any(|b| b.eta.is_infinite())
    }
}

/// Per-step bounds from independent CP at level `1 - alpha/(T+1)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TimewiseBound {
    pub steps: Vec<f64>,
    pub alpha: f64,
    pub per_step_alpha: f64,
}

/// Source of the noise bound used for coverage or verification.
#[derive(Debug, Clone)]
pub enum NoiseBound {
    State(GlobalBound),
    Time(TimewiseBound),
}

/// Computes per-region conformal bounds over the partition: each region's
/// scores are augmented with `+inf` and quantiled at its confidence level.
/// A region with no visiting trajectories gets `eta = +inf` (flagged by the
/// caller, not fatal).
pub fn regional_bounds(
    dataset: &TrajectoryDataset,
    partition: &Partition,
    alphas: &[f64],
    g: &dyn TaskMap,
) -> Result<GlobalBound> {
    let m = partition.num_regions();
    if alphas.len() != m {
        return Err(Error::Validation(format!(
            "expected {m} confidences, got {}",
            alphas.len()
        )));
    }
    let scores = all_region_scores(dataset, partition, g)?;
    let mut bounds = Vec::with_capacity(m);
    for (i, (region_scores, &alpha_i)) in scores.iter().zip(alphas).enumerate() {
        let mut augmented = region_scores.clone();
        augmented.push(f64::INFINITY);
        let eta = if region_scores.is_empty() {
            f64::INFINITY
        } else {
            cp_quantile(&augmented, alpha_i)?
        };
        bounds.push(RegionalBound {
            region: i,
            eta,
            alpha: alpha_i,
            score_count: region_scores.len(),
        });
    }
    Ok(GlobalBound {
        partition: partition.clone(),
        bounds,
        alpha: alphas.iter().sum(),
    })
}

/// The union-bound baseline: independent CP per step at `1 - alpha/(T+1)`,
/// each step's scores augmented with `+inf`.
pub fn timewise_baseline(
    dataset: &TrajectoryDataset,
    alpha: f64,
    g: &dyn TaskMap,
) -> Result<TimewiseBound> {
    let steps = dataset.horizon + 1;
    let per_step_alpha = alpha / steps as f64;
    let mut bounds = Vec::with_capacity(steps);
    for k in 0..steps {
        let mut scores: Vec<f64> = dataset
            .trajectories
            .iter()
            .map(|t| inf_norm_diff(&g.extract(&t.states[k]), &t.outputs[k]))
            .collect();
        scores.push(f64::INFINITY);
        bounds.push(cp_quantile(&scores, per_step_alpha)?);
    }
    Ok(TimewiseBound {
        steps: bounds,
        alpha,
        per_step_alpha,
    })
}

/// Fraction of test trajectories whose perception error stays within the
/// bound at every step.
pub fn empirical_coverage(
    testset: &TrajectoryDataset,
    bound: &NoiseBound,
    g: &dyn TaskMap,
) -> Result<f64> {
    let mut covered = 0usize;
    for traj in &testset.trajectories {
        let mut ok = true;
        for (k, (x, y)) in traj.states.iter().zip(&traj.outputs).enumerate() {
            let err = inf_norm_diff(&g.extract(x), y);
            let b = match bound {
                NoiseBound::State(gb) => gb.eta_at(x)?,
                NoiseBound::Time(tb) => tb.steps[k],
            };
            if err > b {
                ok = false;
                break;
            }
        }
        if ok {
            covered += 1;
        }
    }
    Ok(covered as f64 / testset.len() as f64)
}
