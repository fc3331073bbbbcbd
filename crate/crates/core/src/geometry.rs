//! Boxes, cut sets, partitions, and point location over the state space.
//!
//! A partition is induced by per-dimension axis-aligned cuts: the cuts tile
//! the domain into a grid of cells, and regions are the non-empty cells
//! (optionally completed into a full tiling by merging empty cells into
//! adjacent regions). Cells are half-open on their upper faces except at the
//! domain boundary, so every domain point lies in exactly one cell.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Tolerance under which two cut locations count as duplicates.
pub const CUT_DEDUP_TOL: f64 = 1e-9;

/// A closed real interval `[lo, hi]`. Infinite endpoints are permitted only
/// where a caller explicitly allows them (conformal bounds).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if lo.is_nan() || hi.is_nan() || lo > hi {
            return Err(Error::Validation(format!("invalid interval [{lo}, {hi}]")));
        }
        Ok(Self { lo, hi })
    }

    /// Point interval `[v, v]`.
    pub fn point(v: f64) -> Self {
        Self { lo: v, hi: v }
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn mid(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }

    pub fn radius(&self) -> f64 {
        0.5 * (self.hi - self.lo)
    }

    pub fn contains(&self, v: f64) -> bool {
        self.lo <= v && v <= self.hi
    }

    pub fn contains_interval(&self, other: &Interval) -> bool {
        self.lo <= other.lo && other.hi <= self.hi
    }

    pub fn intersect(&self, other: &Interval) -> Option<Interval> {
        let lo = self.lo.max(other.lo);
        let hi = self.hi.min(other.hi);
        (lo <= hi).then_some(Interval { lo, hi })
    }

    pub fn hull(&self, other: &Interval) -> Interval {
        Interval {
            lo: self.lo.min(other.lo),
            hi: self.hi.max(other.hi),
        }
    }

    pub fn add(&self, other: &Interval) -> Interval {
        Interval {
            lo: self.lo + other.lo,
            hi: self.hi + other.hi,
        }
    }

    pub fn sub(&self, other: &Interval) -> Interval {
        Interval {
            lo: self.lo - other.hi,
            hi: self.hi - other.lo,
        }
    }

    pub fn mul(&self, other: &Interval) -> Interval {
        let c = [
            self.lo * other.lo,
            self.lo * other.hi,
            self.hi * other.lo,
            self.hi * other.hi,
        ];
        Interval {
            lo: c.iter().cloned().fold(f64::INFINITY, f64::min),
            hi: c.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        }
    }

    pub fn scale(&self, c: f64) -> Interval {
        if c >= 0.0 {
            Interval {
                lo: c * self.lo,
                hi: c * self.hi,
            }
        } else {
            Interval {
                lo: c * self.hi,
                hi: c * self.lo,
            }
        }
    }

    /// Outward inflation by a few ulps, compensating for rounding in
    /// remainder arithmetic.
    pub fn pad_ulps(&self) -> Interval {
        const K: f64 = 4.0 * f64::EPSILON;
        let slack_lo = K * self.lo.abs().max(f64::MIN_POSITIVE);
        let slack_hi = K * self.hi.abs().max(f64::MIN_POSITIVE);
        Interval {
            lo: self.lo - slack_lo,
            hi: self.hi + slack_hi,
        }
    }
}

/// An axis-aligned box: one interval per state dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperBox {
    pub dims: Vec<Interval>,
}

impl HyperBox {
    pub fn new(dims: Vec<Interval>) -> Self {
        Self { dims }
    }

    pub fn from_bounds(bounds: &[(f64, f64)]) -> Result<Self> {
        let dims = bounds
            .iter()
            .map(|&(lo, hi)| Interval::new(lo, hi))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { dims })
    }

    pub fn dim(&self) -> usize {
        self.dims.len()
    }

    pub fn contains_point(&self, x: &[f64]) -> bool {
        self.dims.len() == x.len() && self.dims.iter().zip(x).all(|(iv, &v)| iv.contains(v))
    }

    pub fn contains_box(&self, other: &HyperBox) -> bool {
        self.dims
            .iter()
            .zip(&other.dims)
            .all(|(a, b)| a.contains_interval(b))
    }

    pub fn intersect(&self, other: &HyperBox) -> Option<HyperBox> {
        let mut dims = Vec::with_capacity(self.dims.len());
        for (a, b) in self.dims.iter().zip(&other.dims) {
            dims.push(a.intersect(b)?);
        }
        Some(HyperBox { dims })
    }

    pub fn midpoint(&self) -> Vec<f64> {
        self.dims.iter().map(Interval::mid).collect()
    }

    /// Membership under the half-open convention: upper faces are exclusive
    /// except where they coincide with the domain boundary.
    pub fn contains_half_open(&self, x: &[f64], domain: &HyperBox) -> bool {
        if x.len() != self.dims.len() {
            return false;
        }
        self.dims.iter().zip(&domain.dims).zip(x).all(|((iv, dom), &v)| {
            let upper_ok = if iv.hi >= dom.hi { v <= iv.hi } else { v < iv.hi };
            iv.lo <= v && upper_ok
        })
    }
}

/// A 2-D line segment, used for walls and reference paths.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub a: [f64; 2],
    pub b: [f64; 2],
}

impl Segment {
    /// Euclidean distance from a point to the segment.
    pub fn distance_to_point(&self, p: [f64; 2]) -> f64 {
        let d = [self.b[0] - self.a[0], self.b[1] - self.a[1]];
        let w = [p[0] - self.a[0], p[1] - self.a[1]];
        let len2 = d[0] * d[0] + d[1] * d[1];
        let t = if len2 == 0.0 {
            0.0
        } else {
            ((w[0] * d[0] + w[1] * d[1]) / len2).clamp(0.0, 1.0)
        };
        let q = [self.a[0] + t * d[0], self.a[1] + t * d[1]];
        ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt()
    }
}

/// Per-dimension sorted cut locations, strictly interior to the domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CutSet {
    pub cuts: Vec<Vec<f64>>,
}

impl CutSet {
    pub fn empty(dim: usize) -> Self {
        Self {
            cuts: vec![Vec::new(); dim],
        }
    }

    pub fn new(cuts: Vec<Vec<f64>>) -> Self {
        Self { cuts }
    }

    pub fn dim(&self) -> usize {
        self.cuts.len()
    }

    pub fn validate(&self, domain: &HyperBox) -> Result<()> {
        if self.cuts.len() != domain.dim() {
            return Err(Error::Validation(format!(
                "cut set has {} dimensions, domain has {}",
                self.cuts.len(),
                domain.dim()
            )));
        }
        for (u, (cs, dom)) in self.cuts.iter().zip(&domain.dims).enumerate() {
            for w in cs.windows(2) {
                if w[0] >= w[1] {
                    return Err(Error::Validation(format!(
                        "cuts in dimension {u} not strictly increasing"
                    )));
                }
            }
            for &c in cs {
                if c <= dom.lo || c >= dom.hi {
                    return Err(Error::Validation(format!(
                        "cut {c} in dimension {u} outside domain interior ({}, {})",
                        dom.lo, dom.hi
                    )));
                }
            }
        }
        Ok(())
    }

    /// Per-dimension cell count: `n_u + 1`.
    pub fn cells_per_dim(&self) -> Vec<usize> {
        self.cuts.iter().map(|c| c.len() + 1).collect()
    }

    pub fn total_cells(&self) -> usize {
        self.cells_per_dim().iter().product()
    }

    /// Grid index of `x` in dimension `u` under the half-open convention.
    fn axis_index(&self, u: usize, x: f64) -> usize {
        // partition_point returns the count of cuts <= x, which is exactly
        // the half-open cell index (a point on a cut belongs to the upper cell).
        self.cuts[u].partition_point(|&c| c <= x)
    }

    /// Flat cell index of a domain point; `None` if outside the domain.
    pub fn cell_of(&self, x: &[f64], domain: &HyperBox) -> Option<usize> {
        if !domain.contains_point(x) {
            return None;
        }
        let mut flat = 0usize;
        for (u, &v) in x.iter().enumerate() {
            flat = flat * (self.cuts[u].len() + 1) + self.axis_index(u, v);
        }
        Some(flat)
    }

    /// Box of the grid cell with the given multi-index.
    fn cell_box(&self, multi: &[usize], domain: &HyperBox) -> HyperBox {
        let dims = multi
            .iter()
            .enumerate()
            .map(|(u, &i)| {
                let cs = &self.cuts[u];
                let lo = if i == 0 { domain.dims[u].lo } else { cs[i - 1] };
                let hi = if i == cs.len() { domain.dims[u].hi } else { cs[i] };
                Interval { lo, hi }
            })
            .collect();
        HyperBox { dims }
    }
}

fn unflatten(mut flat: usize, shape: &[usize]) -> Vec<usize> {
    let mut multi = vec![0; shape.len()];
    for u in (0..shape.len()).rev() {
        multi[u] = flat % shape[u];
        flat /= shape[u];
    }
    multi
}

/// All grid cells induced by the cuts, in flat (lexicographic) index order.
pub fn cells_from_cuts(cuts: &CutSet, domain: &HyperBox) -> Result<Vec<HyperBox>> {
    cuts.validate(domain)?;
    let shape = cuts.cells_per_dim();
    let total: usize = shape.iter().product();
    Ok((0..total)
        .map(|flat| cuts.cell_box(&unflatten(flat, &shape), domain))
        .collect())
}

/// One region of a partition. A region is usually a single grid cell, but
/// absorbing empty cells during tiling completion can attach further boxes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionRegion {
    pub id: usize,
    pub boxes: Vec<HyperBox>,
}

/// A set of disjoint axis-aligned regions induced by cuts over a domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Partition {
    pub domain: HyperBox,
    pub cuts: CutSet,
    pub regions: Vec<PartitionRegion>,
    /// Flat grid cell -> region id; `None` marks an empty cell that has not
    /// been absorbed (only possible before tiling completion).
    cell_to_region: Vec<Option<usize>>,
}

impl Partition {
    /// Single-region partition covering the whole domain.
    pub fn trivial(domain: HyperBox) -> Self {
        let cuts = CutSet::empty(domain.dim());
        Self {
            regions: vec![PartitionRegion {
                id: 0,
                boxes: vec![domain.clone()],
            }],
            cell_to_region: vec![Some(0)],
            cuts,
            domain,
        }
    }

    pub fn num_regions(&self) -> usize {
        self.regions.len()
    }

    /// Builds the partition of non-empty cells with respect to the given
    /// data points. Region ids are dense and follow flat cell order.
    pub fn from_nonempty<'a, I>(cuts: CutSet, domain: HyperBox, points: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a [f64]>,
    {
        cuts.validate(&domain)?;
        let total = cuts.total_cells();
        let mut occupied = vec![false; total];
        for x in points {
            let cell = cuts.cell_of(x, &domain).ok_or_else(|| {
                Error::Validation(format!("data point {x:?} outside partition domain"))
            })?;
            occupied[cell] = true;
        }
        let shape = cuts.cells_per_dim();
        let mut cell_to_region = vec![None; total];
        let mut regions = Vec::new();
        for (flat, occ) in occupied.iter().enumerate() {
            if *occ {
                let id = regions.len();
                cell_to_region[flat] = Some(id);
                regions.push(PartitionRegion {
                    id,
                    boxes: vec![cuts.cell_box(&unflatten(flat, &shape), &domain)],
                });
            }
        }
        if regions.is_empty() {
            return Err(Error::Validation("no data points in domain".into()));
        }
        Ok(Self {
            domain,
            cuts,
            regions,
            cell_to_region,
        })
    }

    /// True when every grid cell is assigned to a region.
    pub fn is_complete(&self) -> bool {
        self.cell_to_region.iter().all(Option::is_some)
    }

    /// Absorbs every empty grid cell into a face-adjacent non-empty region,
    /// preferring the region with the lowest noise bound (ties break toward
    /// the lowest region id). Empty cells are processed in ascending flat
    /// index order, iterating until all cells are assigned.
    pub fn complete_tiling(&self, etas: &[f64]) -> Result<Partition> {
        if etas.len() != self.regions.len() {
            return Err(Error::Validation(format!(
                "expected {} noise bounds, got {}",
                self.regions.len(),
                etas.len()
            )));
        }
        let shape = self.cuts.cells_per_dim();
        let mut assign = self.cell_to_region.clone();
        let mut out = self.clone();
        while assign.iter().any(Option::is_none) {
            let mut progressed = false;
            for flat in 0..assign.len() {
                if assign[flat].is_some() {
                    continue;
                }
                let multi = unflatten(flat, &shape);
                let mut best: Option<(f64, usize)> = None;
                for u in 0..shape.len() {
                    for delta in [-1isize, 1] {
                        let ni = multi[u] as isize + delta;
                        if ni < 0 || ni as usize >= shape[u] {
                            continue;
                        }
                        let mut nm = multi.clone();
                        nm[u] = ni as usize;
                        let nflat = nm
                            .iter()
                            .zip(&shape)
                            .fold(0usize, |acc, (&i, &s)| acc * s + i);
                        if let Some(rid) = assign[nflat] {
                            let cand = (etas[rid], rid);
                            if best.map_or(true, |b| cand < b) {
                                best = Some(cand);
                            }
                        }
                    }
                }
                if let Some((_, rid)) = best {
                    assign[flat] = Some(rid);
                    out.regions[rid]
                        .boxes
                        .push(self.cuts.cell_box(&multi, &self.domain));
                    progressed = true;
                }
            }
            // A grid always chains empty cells to some occupied cell.
            assert!(progressed, "unreachable empty cell in grid tiling");
        }
        out.cell_to_region = assign;
        Ok(out)
    }

    /// Region id containing `state` under the half-open convention.
    pub fn locate(&self, state: &[f64]) -> Result<usize> {
        let cell = self
            .cuts
            .cell_of(state, &self.domain)
            .ok_or_else(|| Error::Lookup(format!("state {state:?} outside domain")))?;
        self.cell_to_region[cell]
            .ok_or_else(|| Error::Lookup(format!("state {state:?} in unassigned empty cell")))
    }
}

/// Sorts, deduplicates (within [`CUT_DEDUP_TOL`]), and clamps candidate cuts
/// strictly inside the domain, replacing dropped cuts with uniform-random
/// interior locations so each dimension keeps its cut budget.
pub fn repair_cuts<R: Rng>(candidate: &[Vec<f64>], domain: &HyperBox, rng: &mut R) -> CutSet {
    let mut out = Vec::with_capacity(candidate.len());
    for (cs, dom) in candidate.iter().zip(&domain.dims) {
        let budget = cs.len();
        let mut kept: Vec<f64> = Vec::with_capacity(budget);
        let mut sorted = cs.clone();
        sorted.sort_by(f64::total_cmp);
        for &c in &sorted {
            let interior = c > dom.lo && c < dom.hi;
            let dup = kept.last().is_some_and(|&k| (c - k).abs() <= CUT_DEDUP_TOL);
            if interior && !dup {
                kept.push(c);
            }
        }
        while kept.len() < budget {
            let c = rng.random_range(dom.lo..dom.hi);
            let interior = c > dom.lo && c < dom.hi;
            if interior && !kept.iter().any(|&k| (c - k).abs() <= CUT_DEDUP_TOL) {
                kept.push(c);
            }
        }
        kept.sort_by(f64::total_cmp);
        out.push(kept);
    }
    CutSet::new(out)
}
