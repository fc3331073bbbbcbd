//! High-confidence flowpipe computation for the abstracted closed loop:
//! Taylor-model propagation with region-guarded noise inflation, branching
//! on controller sign switches, and cluster-and-enclose consolidation.

pub mod kmeans;
pub mod metrics;
pub mod systems;

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::conformal::NoiseBound;
use crate::geometry::{HyperBox, Interval, Partition};
use crate::taylor::{shrink_wrap, union_enclosure, TaylorModel, SHRINK_EPS, SHRINK_FRAC};
use crate::{Error, Result};

/// How the control input enters the symbolic abstraction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ControllerKind {
    /// Propagated through Taylor models directly.
    Smooth,
    /// Piecewise constant in the sign of a switching surface; straddling
    /// branches are verified separately.
    SignSwitching,
}

/// Closed-loop system abstracted for reachability: symbolic dynamics, task
/// map, and controller, plus concrete counterparts for simulation oracles.
pub trait HybridSystemModel: Sync {
    fn state_dim(&self) -> usize;
    fn output_dim(&self) -> usize;
    fn domain(&self) -> HyperBox;
    fn controller_kind(&self) -> ControllerKind;

    /// Axis-aligned state hyperplanes `(dim, threshold)` where the task map
    /// switches mode; branches are split on these before perception.
    fn task_guards(&self) -> Vec<(usize, f64)> {
        Vec::new()
    }

    /// Task map applied to state models. `bbox` is the branch's bounding
    /// box, used to resolve the task-map mode; it never straddles a guard.
    fn task_tm(&self, x: &[TaylorModel], bbox: &HyperBox) -> Result<Vec<TaylorModel>>;

    /// Smooth controller through Taylor models (`Smooth` kind only). Takes
    /// both the state models (for directly measured components) and the
    /// noisy perception models.
    fn controller_tm(&self, _x: &[TaylorModel], _y: &[TaylorModel]) -> Result<TaylorModel> {
        Err(Error::Validation("system has no smooth controller".into()))
    }

    /// Switching surface over the perception models (`SignSwitching` only).
    fn switch_tm(&self, _y: &[TaylorModel]) -> Result<TaylorModel> {
        Err(Error::Validation("system has no switching controller".into()))
    }

    /// Constant control applied on each side of the switching surface
    /// (`sign(0) = +1` lives on the `positive` side).
    fn control_for_sign(&self, _positive: bool) -> f64 {
        0.0
    }

    /// One control period of the dynamics.
    fn step_tm(&self, x: &[TaylorModel], u: &TaylorModel) -> Result<Vec<TaylorModel>>;

    // Concrete counterparts, used by simulation oracles and rollouts.
    fn task_concrete(&self, x: &[f64]) -> Vec<f64>;
    fn controller_concrete(&self, y: &[f64], x: &[f64]) -> f64;
    fn step_concrete(&self, x: &[f64], u: f64) -> Vec<f64>;
}

/// One verification branch: state Taylor models over a shared symbolic
/// domain, at time step `k`.
#[derive(Debug, Clone)]
pub struct Branch {
    pub tms: Vec<TaylorModel>,
    pub k: usize,
    /// Noise-region ids visited, most recent last.
    pub regions: Vec<usize>,
    /// Number of seed branches merged into this one.
    pub weight: usize,
}

impl Branch {
    /// Interval bounding box of the state models.
    pub fn bbox(&self) -> HyperBox {
        HyperBox::new(self.tms.iter().map(TaylorModel::interval_eval).collect())
    }

    /// True when every component is affine with zero remainder, which is
    /// what subset removal requires of the enclosing branch.
    pub fn is_shrink_wrapped(&self) -> bool {
        self.tms.iter().all(|t| {
            t.remainder.lo == 0.0
                && t.remainder.hi == 0.0
                && t.coeffs.keys().all(|e| e.iter().sum::<u32>() <= 1)
        })
    }

    /// Replaces the models with per-dimension affine wraps over a fresh
    /// symbolic domain.
    fn rebase(&mut self, order: u32) -> Result<()> {
        self.tms = shrink_wrap(&self.tms, order)?;
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReachConfig {
    /// Number of control steps.
    pub horizon: usize,
    /// Branch budget per step (after consolidation).
    pub max_branches: usize,
    /// Taylor-model polynomial order.
    pub order: u32,
    /// Initial set, split uniformly along its widest dimension.
    pub x0: HyperBox,
    pub initial_splits: usize,
    /// Re-base all branches onto fresh symbolic domains this often.
    pub rebase_every: usize,
    /// Abort (rather than silently truncate) past this many raw branches.
    pub hard_cap: usize,
    /// Shrink-wrap trigger thresholds (absolute, fractional).
    pub shrink_eps: f64,
    pub shrink_frac: f64,
    /// Seed for k-means initialization during consolidation.
    pub seed: u64,
}

impl ReachConfig {
    pub fn new(horizon: usize, max_branches: usize, x0: HyperBox, seed: u64) -> Self {
        Self {
            horizon,
            max_branches,
            order: 3,
            x0,
            initial_splits: 20,
            rebase_every: 10,
            hard_cap: 10_000,
            shrink_eps: SHRINK_EPS,
            shrink_frac: SHRINK_FRAC,
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.horizon == 0 || self.max_branches == 0 {
            return Err(Error::Validation(
                "horizon and branch budget must be positive".into(),
            ));
        }
        if self.order == 0 {
            return Err(Error::Validation("order must be at least 1".into()));
        }
        Ok(())
    }
}

/// Per-step reachable boxes for all branches, plus bookkeeping.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Flowpipe {
    /// `steps[k]` are the branch bounding boxes at time step k (0..=T).
    pub steps: Vec<Vec<HyperBox>>,
    pub branch_counts: Vec<usize>,
    pub wall_clock: f64,
}

fn needs_wrap(tm: &TaylorModel, cfg: &ReachConfig) -> bool {
    let rw = tm.remainder.width();
    rw > cfg.shrink_eps && rw > cfg.shrink_frac * tm.interval_eval().width()
}

/// Affine branch covering `sub` over a fresh symbolic domain.
fn branch_from_box(sub: &HyperBox, order: u32) -> Result<Branch> {
    let n = sub.dim();
    let tms = sub
        .dims
        .iter()
        .enumerate()
        .map(|(i, iv)| TaylorModel::from_interval(iv, i, n, order))
        .collect::<Result<_>>()?;
    Ok(Branch {
        tms,
        k: 0,
        regions: Vec::new(),
        weight: 1,
    })
}

/// Clips a branch onto a sub-box of its bounding box by per-dimension
/// affine wrapping (conservative: inter-variable dependencies are dropped).
fn clip_to_box(branch: &Branch, target: &HyperBox, order: u32) -> Result<Branch> {
    let mut child = branch_from_box(target, order)?;
    child.k = branch.k;
    child.regions = branch.regions.clone();
    child.weight = branch.weight;
    Ok(child)
}

const BOX_SLACK: f64 = 1e-12;

fn box_contains_with_slack(outer: &HyperBox, inner: &HyperBox) -> bool {
    outer
        .dims
        .iter()
        .zip(&inner.dims)
        .all(|(o, i)| o.lo <= i.lo + BOX_SLACK && o.hi >= i.hi - BOX_SLACK)
}

/// Splits a branch by the noise regions its bounding box intersects. The
/// models stay unchanged when the box lies in a single region; otherwise
/// each child is clipped onto the intersection box. Children's boxes cover
/// the parent box.
pub fn split_on_regions(
    branch: &Branch,
    partition: &Partition,
    order: u32,
) -> Result<Vec<(usize, Branch)>> {
    let bbox = branch.bbox();
    // Fast path: the region of the midpoint contains the whole box.
    let mid_region = partition.locate(&bbox.midpoint())?;
    if partition.regions[mid_region]
        .boxes
        .iter()
        .any(|b| box_contains_with_slack(b, &bbox))
    {
        return Ok(vec![(mid_region, branch.clone())]);
    }
    let mut out = Vec::new();
    for region in &partition.regions {
        for rbox in &region.boxes {
            let Some(inter) = bbox.intersect(rbox) else {
                continue;
            };
            // Skip zero-measure touchings along dimensions where the branch
            // itself has extent.
            let degenerate = inter
                .dims
                .iter()
                .zip(&bbox.dims)
                .any(|(i, b)| i.width() == 0.0 && b.width() > 0.0);
            if degenerate {
                continue;
            }
            out.push((region.id, clip_to_box(branch, &inter, order)?));
        }
    }
    if out.is_empty() {
        return Err(Error::Verification(format!(
            "branch box {bbox:?} intersects no partition region"
        )));
    }
    Ok(out)
}

/// Splits a branch on the task-map guard hyperplanes so every child's box is
/// entirely on one side of each guard (states exactly on a guard stay with
/// the lower child, matching the `<=` mode convention).
fn split_on_guards(branch: Branch, guards: &[(usize, f64)], order: u32) -> Result<Vec<Branch>> {
    let mut work = vec![branch];
    for &(dim, threshold) in guards {
        let mut next = Vec::with_capacity(work.len());
        for b in work {
            let bbox = b.bbox();
            let iv = bbox.dims[dim];
            if iv.lo <= threshold && threshold < iv.hi {
                for part in [
                    Interval { lo: iv.lo, hi: threshold },
                    Interval { lo: threshold, hi: iv.hi },
                ] {
                    let mut sub = bbox.clone();
                    sub.dims[dim] = part;
                    next.push(clip_to_box(&b, &sub, order)?);
                }
            } else {
                next.push(b);
            }
        }
        work = next;
    }
    Ok(work)
}

/// Advances one branch by one control step: noise-region split, perception
/// with a fresh noise symbol per output, controller application (splitting
/// on the switching-surface sign when it straddles zero), dynamics, and
/// per-component shrink-wrapping.
pub fn step_branch(
    branch: &Branch,
    system: &dyn HybridSystemModel,
    bound: &NoiseBound,
    cfg: &ReachConfig,
    k: usize,
) -> Result<Vec<Branch>> {
    let domain = system.domain();
    let bbox = branch.bbox();
    if !box_contains_with_slack(&domain, &bbox) {
        return Err(Error::Verification(format!(
            "reachable set left the state domain at step {k}: {bbox:?}"
        )));
    }
    // Region-guarded noise bound.
    let noise_children: Vec<(Option<usize>, f64, Branch)> = match bound {
        NoiseBound::State(gb) => split_on_regions(branch, &gb.partition, cfg.order)?
            .into_iter()
            .map(|(rid, b)| (Some(rid), gb.bounds[rid].eta, b))
            .collect(),
        NoiseBound::Time(tb) => {
            let eta = *tb.steps.get(k).ok_or_else(|| {
                Error::Validation(format!("timewise bound covers {} steps, need {k}", tb.steps.len()))
            })?;
            vec![(None, eta, branch.clone())]
        }
    };
    let guards = system.task_guards();
    let mut out = Vec::new();
    for (rid, eta, child) in noise_children {
        if eta.is_infinite() {
            return Err(Error::Verification(format!(
                "unbounded noise region reached at step {k}"
            )));
        }
        for child in split_on_guards(child, &guards, cfg.order)? {
            let child_bbox = child.bbox();
            let nv = child.tms[0].nvars;
            let out_dim = system.output_dim();
            // Fresh symbolic noise variables keep the perception error
            // independent of the state symbols without fattening remainders.
            let (x_ext, noise_vars) = if eta > 0.0 {
                let ext: Vec<TaylorModel> = child
                    .tms
                    .iter()
                    .map(|t| t.extend_vars(nv + out_dim))
                    .collect::<Result<_>>()?;
                let vars: Vec<TaylorModel> = (0..out_dim)
                    .map(|j| {
                        TaylorModel::from_interval(
                            &Interval { lo: -eta, hi: eta },
                            nv + j,
                            nv + out_dim,
                            cfg.order,
                        )
                    })
                    .collect::<Result<_>>()?;
                (ext, vars)
            } else {
                (child.tms.clone(), Vec::new())
            };
            let g = system.task_tm(&x_ext, &child_bbox)?;
            let y: Vec<TaylorModel> = g
                .iter()
                .enumerate()
                .map(|(j, gj)| match noise_vars.get(j) {
                    Some(nv) => gj.add(nv),
                    None => Ok(gj.clone()),
                })
                .collect::<Result<_>>()?;
            // Controller: smooth propagation or sign split.
            let controls: Vec<TaylorModel> = match system.controller_kind() {
                ControllerKind::Smooth => vec![system.controller_tm(&x_ext, &y)?],
                ControllerKind::SignSwitching => {
                    let s = system.switch_tm(&y)?.interval_eval();
                    let nvars = x_ext[0].nvars;
                    let mut us = Vec::new();
                    if s.hi >= 0.0 {
                        us.push(TaylorModel::constant(
                            system.control_for_sign(true),
                            nvars,
                            cfg.order,
                        ));
                    }
                    if s.lo < 0.0 {
                        us.push(TaylorModel::constant(
                            system.control_for_sign(false),
                            nvars,
                            cfg.order,
                        ));
                    }
                    us
                }
            };
            for u in controls {
                let mut next = system.step_tm(&x_ext, &u)?;
                // Per-component shrink wrap, each onto its own fresh symbol.
                for i in 0..next.len() {
                    if needs_wrap(&next[i], cfg) {
                        let range = next[i].interval_eval();
                        let nvars = next[0].nvars + 1;
                        for t in next.iter_mut() {
                            *t = t.extend_vars(nvars)?;
                        }
                        next[i] =
                            TaylorModel::from_interval(&range, nvars - 1, nvars, cfg.order)?;
                    }
                }
                let mut regions = child.regions.clone();
                if let Some(rid) = rid {
                    regions.push(rid);
                }
                out.push(Branch {
                    tms: next,
                    k: k + 1,
                    regions,
                    weight: child.weight,
                });
            }
        }
    }
    Ok(out)
}

/// Drops branches whose bounding box is contained (closed intervals, 1e-12
/// slack) in the box of another, fully shrink-wrapped branch. Exactly equal
/// boxes keep the earlier branch.
pub fn remove_subsets(branches: Vec<Branch>) -> Vec<Branch> {
    let boxes: Vec<HyperBox> = branches.iter().map(Branch::bbox).collect();
    let wrapped: Vec<bool> = branches.iter().map(Branch::is_shrink_wrapped).collect();
    let mut keep = vec![true; branches.len()];
    for i in 0..branches.len() {
        for j in 0..branches.len() {
            if i == j || !keep[j] || !wrapped[j] {
                continue;
            }
            if box_contains_with_slack(&boxes[j], &boxes[i]) {
                // Mutual containment (identical boxes): drop the later one.
                let mutual = wrapped[i] && box_contains_with_slack(&boxes[i], &boxes[j]);
                if !mutual || j < i {
                    keep[i] = false;
                    break;
                }
            }
        }
    }
    branches
        .into_iter()
        .zip(keep)
        .filter_map(|(b, k)| k.then_some(b))
        .collect()
}

/// Consolidates branches down to at most `budget`: k-means over bounding-box
/// midpoints, multi-member clusters replaced per state dimension by a union
/// enclosure over shrink-wrapped members, then subset removal.
pub fn cluster_and_enclose(branches: Vec<Branch>, budget: usize, seed: u64) -> Result<Vec<Branch>> {
    if branches.len() <= budget {
        return Ok(remove_subsets(branches));
    }
    let mids: Vec<Vec<f64>> = branches.iter().map(|b| b.bbox().midpoint()).collect();
    let assign = kmeans::kmeans(&mids, budget, seed)?;
    let order = branches[0].tms[0].max_degree;
    let dim = branches[0].tms.len();
    let mut out = Vec::with_capacity(budget);
    for c in 0..budget {
        let members: Vec<&Branch> = branches
            .iter()
            .zip(&assign)
            .filter(|(_, &a)| a == c)
            .map(|(b, _)| b)
            .collect();
        match members.len() {
            0 => unreachable!("kmeans leaves no empty clusters"),
            1 => out.push(members[0].clone()),
            _ => {
                // Normalize members onto a common symbolic domain first.
                let wrapped: Vec<Vec<TaylorModel>> = members
                    .iter()
                    .map(|b| shrink_wrap(&b.tms, order))
                    .collect::<Result<_>>()?;
                let mut tms = Vec::with_capacity(dim);
                for i in 0..dim {
                    let comps: Vec<TaylorModel> =
                        wrapped.iter().map(|w| w[i].clone()).collect();
                    let mut enc = union_enclosure(&comps)?;
                    if enc.needs_shrink_wrap() {
                        enc = TaylorModel::from_interval(&enc.interval_eval(), i, dim, order)?;
                    }
                    tms.push(enc);
                }
                let heaviest = members
                    .iter()
                    .max_by_key(|b| b.weight)
                    .expect("non-empty cluster");
                out.push(Branch {
                    tms,
                    k: heaviest.k,
                    regions: heaviest.regions.clone(),
                    weight: members.iter().map(|b| b.weight).sum(),
                });
            }
        }
    }
    Ok(remove_subsets(out))
}

/// Computes the flowpipe over the configured horizon. Branch stepping is
/// parallel within a step; consolidation is a sequential barrier.
/// Deterministic per (config, seed).
pub fn reach(
    system: &dyn HybridSystemModel,
    bound: &NoiseBound,
    cfg: &ReachConfig,
) -> Result<Flowpipe> {
    cfg.validate()?;
    let domain = system.domain();
    if !box_contains_with_slack(&domain, &cfg.x0) {
        return Err(Error::Validation("initial set leaves the domain".into()));
    }
    let start = Instant::now();
    // Seed branches: uniform split along the widest initial dimension.
    let splits = cfg.initial_splits.max(1);
    let widest = (0..cfg.x0.dim())
        .max_by(|&a, &b| cfg.x0.dims[a].width().total_cmp(&cfg.x0.dims[b].width()))
        .expect("non-empty state");
    let mut branches = Vec::with_capacity(splits);
    let iv = cfg.x0.dims[widest];
    let n_splits = if iv.width() > 0.0 { splits } else { 1 };
    for s in 0..n_splits {
        let lo = iv.lo + iv.width() * s as f64 / n_splits as f64;
        let hi = iv.lo + iv.width() * (s + 1) as f64 / n_splits as f64;
        let mut sub = cfg.x0.clone();
        sub.dims[widest] = Interval { lo, hi };
        branches.push(branch_from_box(&sub, cfg.order)?);
    }
    let mut steps = Vec::with_capacity(cfg.horizon + 1);
    let mut counts = Vec::with_capacity(cfg.horizon + 1);
    let record = |branches: &[Branch], steps: &mut Vec<Vec<HyperBox>>, counts: &mut Vec<usize>| {
        steps.push(branches.iter().map(Branch::bbox).collect());
        counts.push(branches.len());
    };
    record(&branches, &mut steps, &mut counts);
    for k in 0..cfg.horizon {
        let stepped: Vec<Vec<Branch>> = branches
            .par_iter()
            .map(|b| step_branch(b, system, bound, cfg, k))
            .collect::<Result<_>>()?;
        let stepped: Vec<Branch> = stepped.into_iter().flatten().collect();
        if stepped.len() > cfg.hard_cap {
            return Err(Error::Verification(format!(
                "branch count {} exceeds the hard cap {} at step {k}",
                stepped.len(),
                cfg.hard_cap
            )));
        }
        branches = cluster_and_enclose(stepped, cfg.max_branches, cfg.seed.wrapping_add(k as u64))?;
        if cfg.rebase_every > 0 && (k + 1) % cfg.rebase_every == 0 {
            for b in branches.iter_mut() {
                b.rebase(cfg.order)?;
            }
        }
        record(&branches, &mut steps, &mut counts);
    }
    Ok(Flowpipe {
        steps,
        branch_counts: counts,
        wall_clock: start.elapsed().as_secs_f64(),
    })
}
