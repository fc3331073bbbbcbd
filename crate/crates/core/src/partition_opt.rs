//! Genetic optimization of partition cuts and per-region confidences against
//! a reachability-informed loss.
//!
//! The loss prefers partitions whose heavily visited regions get tight noise
//! bounds early in the horizon. Individuals carry axis-aligned cuts and a
//! confidence allocation; crossover and mutation are followed by repairs that
//! restore sortedness, the per-dimension cut budget, and the exact
//! confidence-budget constraint.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::conformal::{regional_bounds, TaskMap, TrajectoryDataset};
use crate::geometry::{repair_cuts, CutSet, HyperBox, Partition};
use crate::{Error, Result};

/// One candidate partition with its confidence allocation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Individual {
    pub cuts: CutSet,
    pub partition: Partition,
    pub alphas: Vec<f64>,
    pub fitness: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GaConfig {
    pub population: usize,
    pub generations: usize,
    /// Probability of taking each cut from parent b.
    pub p_c_cut: f64,
    /// Probability of taking each confidence from parent b.
    pub p_c_alpha: f64,
    /// Probability of replacing each cut with a fresh random one.
    pub p_m_cut: f64,
    /// Probability of replacing each confidence with a fresh random one.
    pub p_m_alpha: f64,
    pub gamma: f64,
    /// Total confidence budget.
    pub alpha: f64,
    /// Per-region confidence floor.
    pub alpha_min: f64,
    /// Cut budget per state dimension.
    pub cut_budget: Vec<usize>,
    /// When false, confidences stay uniform `alpha / M` throughout.
    pub dynamic_confidence: bool,
    pub seed: u64,
}

impl GaConfig {
    pub fn validate(&self, domain: &HyperBox) -> Result<()> {
        if self.population < 2 || self.population % 2 != 0 {
            return Err(Error::Validation(format!(
                "population {} must be even and >= 2",
                self.population
            )));
        }
        if self.cut_budget.len() != domain.dim() {
            return Err(Error::Validation(format!(
                "cut budget has {} dimensions, domain has {}",
                self.cut_budget.len(),
                domain.dim()
            )));
        }
        if !(0.0 < self.alpha && self.alpha < 1.0) {
            return Err(Error::Validation(format!("alpha {} outside (0,1)", self.alpha)));
        }
        if !(0.0 < self.gamma && self.gamma <= 1.0) {
            return Err(Error::Validation(format!(
                "gamma {} outside (0,1]",
                self.gamma
            )));
        }
        let max_cells: usize = self.cut_budget.iter().map(|n| n + 1).product();
        if max_cells as f64 * self.alpha_min > self.alpha {
            return Err(Error::InfeasibleBudget(format!(
                "{} cells x alpha_min {} exceeds alpha {}",
                max_cells, self.alpha_min, self.alpha
            )));
        }
        Ok(())
    }
}

/// Per-generation GA trace entry.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GenStat {
    pub generation: usize,
    pub best_loss: f64,
    pub mean_loss: f64,
    pub m_best: usize,
}

#[derive(Debug, Clone)]
pub struct GaResult {
    pub best: Individual,
    pub trace: Vec<GenStat>,
}

/// Reachability-informed partition loss: for each region, its noise bound
/// times its visitation weight (point count) times the discounted sum of
/// visit times. Infinite if any visited region has an infinite bound.
pub fn loss(
    dataset: &TrajectoryDataset,
    partition: &Partition,
    etas: &[f64],
    gamma: f64,
) -> Result<f64> {
    let m = partition.num_regions();
    if etas.len() != m {
        return Err(Error::Validation(format!(
            "expected {m} bounds, got {}",
            etas.len()
        )));
    }
    let mut weight = vec![0usize; m];
    let mut discount = vec![0.0f64; m];
    for traj in &dataset.trajectories {
        for (t, x) in traj.states.iter().enumerate() {
            let i = partition.locate(x)?;
            weight[i] += 1;
            discount[i] += gamma.powi(t as i32);
        }
    }
    let mut total = 0.0;
    for i in 0..m {
        if weight[i] == 0 {
            continue;
        }
        if etas[i].is_infinite() {
            return Ok(f64::INFINITY);
        }
        total += etas[i] * weight[i] as f64 * discount[i];
    }
    Ok(total)
}

/// Clamps candidate confidences into `[alpha_min, alpha - (M-1) alpha_min]`
/// and rescales the slack above the floor so they sum exactly to `alpha`.
pub fn repair_confidences(candidate: &[f64], alpha: f64, alpha_min: f64) -> Result<Vec<f64>> {
    let m = candidate.len();
    if m == 0 {
        return Err(Error::Validation("no confidences to repair".into()));
    }
    if m as f64 * alpha_min > alpha {
        return Err(Error::InfeasibleBudget(format!(
            "{m} regions x alpha_min {alpha_min} exceeds alpha {alpha}"
        )));
    }
    let hi = alpha - (m as f64 - 1.0) * alpha_min;
    let clamped: Vec<f64> = candidate.iter().map(|c| c.clamp(alpha_min, hi)).collect();
    let budget = alpha - m as f64 * alpha_min;
    let slack: f64 = clamped.iter().map(|c| c - alpha_min).sum();
    let out = if slack <= 0.0 || budget <= 0.0 {
        vec![alpha / m as f64; m]
    } else {
        clamped
            .iter()
            .map(|c| alpha_min + budget * (c - alpha_min) / slack)
            .collect()
    };
    Ok(out)
}

fn uniform_alphas(m: usize, alpha: f64) -> Vec<f64> {
    vec![alpha / m as f64; m]
}

fn build_individual(
    cuts: CutSet,
    dataset: &TrajectoryDataset,
    domain: &HyperBox,
    alphas: Option<Vec<f64>>,
    cfg: &GaConfig,
) -> Result<Individual> {
    let partition = Partition::from_nonempty(
        cuts.clone(),
        domain.clone(),
        dataset
            .trajectories
            .iter()
            .flat_map(|t| t.states.iter().map(Vec::as_slice)),
    )?;
    let m = partition.num_regions();
    let alphas = match alphas {
        Some(a) if a.len() == m => repair_confidences(&a, cfg.alpha, cfg.alpha_min)?,
        _ => uniform_alphas(m, cfg.alpha),
    };
    Ok(Individual {
        cuts,
        partition,
        alphas,
        fitness: f64::INFINITY,
    })
}

fn evaluate(ind: &mut Individual, dataset: &TrajectoryDataset, g: &dyn TaskMap, gamma: f64) -> Result<()> {
    let gb = regional_bounds(dataset, &ind.partition, &ind.alphas, g)?;
    ind.fitness = loss(dataset, &ind.partition, &gb.etas(), gamma)?;
    Ok(())
}

/// Positional cut crossover followed by repairs; confidences cross over only
/// when the child's region count matches both parents'.
pub fn crossover<R: Rng>(
    a: &Individual,
    b: &Individual,
    cfg: &GaConfig,
    dataset: &TrajectoryDataset,
    domain: &HyperBox,
    rng: &mut R,
) -> Result<Individual> {
    let mut cuts = a.cuts.cuts.clone();
    for (u, dim_cuts) in cuts.iter_mut().enumerate() {
        let from_b = &b.cuts.cuts[u];
        for (i, c) in dim_cuts.iter_mut().enumerate() {
            if i < from_b.len() && rng.random::<f64>() < cfg.p_c_cut {
                *c = from_b[i];
            }
        }
    }
    let cuts = repair_cuts(&cuts, domain, rng);
    let alphas = if cfg.dynamic_confidence
        && a.alphas.len() == b.alphas.len()
    {
        let mixed: Vec<f64> = a
            .alphas
            .iter()
            .zip(&b.alphas)
            .map(|(&x, &y)| {
                if rng.random::<f64>() < cfg.p_c_alpha {
                    y
                } else {
                    x
                }
            })
            .collect();
        Some(mixed)
    } else {
        None
    };
    build_individual(cuts, dataset, domain, alphas, cfg)
}

/// Random cut resampling followed by repairs; confidences mutate only when
/// the region count is preserved.
pub fn mutate<R: Rng>(
    ind: &Individual,
    cfg: &GaConfig,
    dataset: &TrajectoryDataset,
    domain: &HyperBox,
    rng: &mut R,
) -> Result<Individual> {
    let mut cuts = ind.cuts.cuts.clone();
    for (u, dim_cuts) in cuts.iter_mut().enumerate() {
        let dom = &domain.dims[u];
        for c in dim_cuts.iter_mut() {
            if rng.random::<f64>() < cfg.p_m_cut {
                *c = rng.random_range(dom.lo..dom.hi);
            }
        }
    }
    let cuts = repair_cuts(&cuts, domain, rng);
    let alphas = if cfg.dynamic_confidence {
        let hi = cfg.alpha;
        let mutated: Vec<f64> = ind
            .alphas
            .iter()
            .map(|&a| {
                if rng.random::<f64>() < cfg.p_m_alpha {
                    rng.random_range(cfg.alpha_min..=hi)
                } else {
                    a
                }
            })
            .collect();
        Some(mutated)
    } else {
        None
    };
    build_individual(cuts, dataset, domain, alphas, cfg)
}

fn random_individual<R: Rng>(
    cfg: &GaConfig,
    dataset: &TrajectoryDataset,
    domain: &HyperBox,
    rng: &mut R,
) -> Result<Individual> {
    let candidate: Vec<Vec<f64>> = cfg
        .cut_budget
        .iter()
        .zip(&domain.dims)
        .map(|(&n, dom)| (0..n).map(|_| rng.random_range(dom.lo..dom.hi)).collect())
        .collect();
    let cuts = repair_cuts(&candidate, domain, rng);
    build_individual(cuts, dataset, domain, None, cfg)
}

/// Runs the GA: elitism keeps the best half each generation, the other half
/// is refilled by crossover + mutation over uniformly chosen elite parents.
/// Offspring are bred sequentially (cheap, keeps the RNG stream fixed) and
/// evaluated in parallel. Deterministic per seed.
pub fn run_ga(
    dataset: &TrajectoryDataset,
    domain: &HyperBox,
    g: &dyn TaskMap,
    cfg: &GaConfig,
) -> Result<GaResult> {
    cfg.validate(domain)?;
    let mut rng = ChaCha12Rng::seed_from_u64(cfg.seed);
    let mut pop: Vec<Individual> = (0..cfg.population)
        .map(|_| random_individual(cfg, dataset, domain, &mut rng))
        .collect::<Result<_>>()?;
    pop.par_iter_mut()
        .try_for_each(|ind| evaluate(ind, dataset, g, cfg.gamma))?;
    let mut trace = Vec::with_capacity(cfg.generations + 1);
    let mut record = |generation: usize, pop: &mut Vec<Individual>| {
        pop.sort_by(|a, b| a.fitness.total_cmp(&b.fitness));
        let mean = pop.iter().map(|i| i.fitness).sum::<f64>() / pop.len() as f64;
        trace.push(GenStat {
            generation,
            best_loss: pop[0].fitness,
            mean_loss: mean,
            m_best: pop[0].partition.num_regions(),
        });
    };
    record(0, &mut pop);
    let elite = cfg.population / 2;
    for gen in 1..=cfg.generations {
        let mut offspring: Vec<Individual> = (0..cfg.population - elite)
            .map(|_| {
                let pa = rng.random_range(0..elite);
                let pb = rng.random_range(0..elite);
                let child = crossover(&pop[pa], &pop[pb], cfg, dataset, domain, &mut rng)?;
                mutate(&child, cfg, dataset, domain, &mut rng)
            })
            .collect::<Result<_>>()?;
        offspring
            .par_iter_mut()
            .try_for_each(|ind| evaluate(ind, dataset, g, cfg.gamma))?;
        pop.truncate(elite);
        pop.append(&mut offspring);
        record(gen, &mut pop);
    }
    if pop[0].fitness.is_infinite() {
        return Err(Error::Optimization(format!(
            "no finite-loss individual after {} generations (best M = {}); \
             lower the cut budget or raise alpha",
            cfg.generations,
            pop[0].partition.num_regions()
        )));
    }
    Ok(GaResult {
        best: pop[0].clone(),
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conformal::{FnTaskMap, Trajectory};

    fn identity_map() -> FnTaskMap<impl Fn(&[f64]) -> Vec<f64> + Sync> {
        FnTaskMap {
            dim: 1,
            f: |x: &[f64]| vec![x[0]],
        }
    }

    /// 1-D dataset: state uniform on the domain, output = state + uniform
    /// noise whose scale switches at `threshold`.
    fn two_regime_dataset(
        n: usize,
        t: usize,
        threshold: f64,
        sigma_lo: f64,
        sigma_hi: f64,
        seed: u64,
    ) -> TrajectoryDataset {
        use rand::{Rng, SeedableRng};
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let trajectories = (0..n)
            .map(|id| {
                let mut states = Vec::with_capacity(t + 1);
                let mut outputs = Vec::with_capacity(t + 1);
                for _ in 0..=t {
                    let x: f64 = rng.random_range(-1.0..1.0);
                    let s = if x >= threshold { sigma_hi } else { sigma_lo };
                    let half = 3.0f64.sqrt() * s;
                    states.push(vec![x]);
                    outputs.push(vec![x + rng.random_range(-half..half)]);
                }
                Trajectory {
                    id: id as u64,
                    states,
                    outputs,
                }
            })
            .collect();
        TrajectoryDataset::new(trajectories).unwrap()
    }

    fn domain_1d() -> HyperBox {
        HyperBox::from_bounds(&[(-1.0, 1.0)]).unwrap()
    }

    /// Exhaustive oracle: best (loss, cut) over 200 uniformly spaced single
    /// cuts, evaluated with the same regional-bound + loss machinery.
    fn grid_search_1cut(
        ds: &TrajectoryDataset,
        domain: &HyperBox,
        g: &dyn TaskMap,
        cfg: &GaConfig,
    ) -> (f64, f64) {
        let mut best = (f64::INFINITY, f64::NAN);
        for i in 1..200 {
            let c = domain.dims[0].lo + domain.dims[0].width() * i as f64 / 200.0;
            let cuts = CutSet::new(vec![vec![c]]);
            let p = Partition::from_nonempty(
                cuts,
                domain.clone(),
                ds.trajectories
                    .iter()
                    .flat_map(|t| t.states.iter().map(Vec::as_slice)),
            )
            .unwrap();
            let alphas = uniform_alphas(p.num_regions(), cfg.alpha);
            let gb = regional_bounds(ds, &p, &alphas, g).unwrap();
            let l = loss(ds, &p, &gb.etas(), cfg.gamma).unwrap();
            if l < best.0 {
                best = (l, c);
            }
        }
        best
    }

    fn base_cfg() -> GaConfig {
        GaConfig {
            population: 40,
            generations: 15,
            p_c_cut: 0.5,
            p_c_alpha: 0.5,
            p_m_cut: 0.3,
            p_m_alpha: 0.3,
            gamma: 0.9,
            alpha: 0.05,
            alpha_min: 0.005,
            cut_budget: vec![1],
            dynamic_confidence: false,
            seed: 11,
        }
    }

    #[test]
    fn loss_hand_examples() {
        use crate::geometry::CutSet;
        // 1 region, one trajectory with 3 points all at t=0 is impossible;
        // use 3 single-step trajectories: w = 3, discounted sum = 3.
        let domain = domain_1d();
        let p = Partition::trivial(domain.clone());
        let ds = TrajectoryDataset::new(
            (0..3)
                .map(|id| Trajectory {
                    id,
                    states: vec![vec![0.0]],
                    outputs: vec![vec![0.0]],
                })
                .collect(),
        )
        .unwrap();
        assert!((loss(&ds, &p, &[0.5], 0.7).unwrap() - 4.5).abs() < 1e-12);
        assert_eq!(loss(&ds, &p, &[0.0], 0.7).unwrap(), 0.0);

        // 2 regions, one trajectory: t=0 in region 0, t=1 in region 1,
        // gamma = 0.9, etas (1, 2), weights (1, 1) -> 1 + 0.9 * 2 = 2.8.
        let cuts = CutSet::new(vec![vec![0.0]]);
        let ds2 = TrajectoryDataset::new(vec![Trajectory {
            id: 0,
            states: vec![vec![-0.5], vec![0.5]],
            outputs: vec![vec![-0.5], vec![0.5]],
        }])
        .unwrap();
        let pts: Vec<Vec<f64>> = vec![vec![-0.5], vec![0.5]];
        let p2 = Partition::from_nonempty(cuts, domain, pts.iter().map(Vec::as_slice)).unwrap();
        assert!((loss(&ds2, &p2, &[1.0, 2.0], 0.9).unwrap() - 2.8).abs() < 1e-12);

        // Infinite bound on a visited region poisons the loss.
        assert!(loss(&ds2, &p2, &[1.0, f64::INFINITY], 0.9)
            .unwrap()
            .is_infinite());
    }

    #[test]
    fn repair_confidences_examples() {
        // Feasible fixed point.
        let a = repair_confidences(&[0.03, 0.02], 0.05, 0.005).unwrap();
        assert!((a[0] - 0.03).abs() < 1e-12 && (a[1] - 0.02).abs() < 1e-12);
        // Hand-computed rescale.
        let a = repair_confidences(&[0.04, 0.04], 0.05, 0.01).unwrap();
        assert!((a[0] - 0.025).abs() < 1e-12 && (a[1] - 0.025).abs() < 1e-12);
        // Budget violation.
        assert!(matches!(
            repair_confidences(&[0.01; 6], 0.05, 0.01),
            Err(Error::InfeasibleBudget(_))
        ));
        // Idempotence and exact constraints on random candidates.
        use rand::{Rng, SeedableRng};
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        for _ in 0..500 {
            let m = rng.random_range(1..8);
            let cand: Vec<f64> = (0..m).map(|_| rng.random_range(0.0..0.1)).collect();
            let r = repair_confidences(&cand, 0.05, 0.004).unwrap();
            let sum: f64 = r.iter().sum();
            assert!((sum - 0.05).abs() < 1e-9);
            assert!(r.iter().all(|&a| a >= 0.004 - 1e-12));
            let r2 = repair_confidences(&r, 0.05, 0.004).unwrap();
            for (x, y) in r.iter().zip(&r2) {
                assert!((x - y).abs() <= 1e-12 * x.abs().max(1.0));
            }
        }
    }

    #[test]
    fn crossover_and_mutate_edges() {
        use rand::SeedableRng;
        let ds = two_regime_dataset(50, 5, 0.3, 0.01, 0.1, 1);
        let domain = domain_1d();
        let mut cfg = base_cfg();
        cfg.dynamic_confidence = true;
        let mut rng = ChaCha12Rng::seed_from_u64(2);
        let a = random_individual(&cfg, &ds, &domain, &mut rng).unwrap();
        let b = random_individual(&cfg, &ds, &domain, &mut rng).unwrap();

        let mut zero = cfg.clone();
        zero.p_c_cut = 0.0;
        zero.p_c_alpha = 0.0;
        let child = crossover(&a, &b, &zero, &ds, &domain, &mut rng).unwrap();
        assert_eq!(child.cuts, a.cuts);
        assert_eq!(child.alphas, a.alphas);

        let mut certain = cfg.clone();
        certain.p_c_cut = 1.0;
        let child = crossover(&a, &b, &certain, &ds, &domain, &mut rng).unwrap();
        assert_eq!(child.cuts, b.cuts);

        let mut still = cfg.clone();
        still.p_m_cut = 0.0;
        still.p_m_alpha = 0.0;
        let m = mutate(&a, &still, &ds, &domain, &mut rng).unwrap();
        assert_eq!(m.cuts, a.cuts);
        assert_eq!(m.alphas, a.alphas);

        let mut all = cfg.clone();
        all.p_m_cut = 1.0;
        let m = mutate(&a, &all, &ds, &domain, &mut rng).unwrap();
        m.cuts.validate(&domain).unwrap();
        assert_eq!(m.cuts.cuts[0].len(), 1);
    }

    #[test]
    fn offspring_invariants_fuzz() {
        use rand::SeedableRng;
        let ds = two_regime_dataset(40, 4, 0.3, 0.01, 0.1, 3);
        let domain = HyperBox::from_bounds(&[(-1.0, 1.0)]).unwrap();
        let mut cfg = base_cfg();
        cfg.cut_budget = vec![3];
        cfg.dynamic_confidence = true;
        let mut rng = ChaCha12Rng::seed_from_u64(4);
        for _ in 0..10_000 {
            let a = random_individual(&cfg, &ds, &domain, &mut rng).unwrap();
            let b = random_individual(&cfg, &ds, &domain, &mut rng).unwrap();
            let c = crossover(&a, &b, &cfg, &ds, &domain, &mut rng).unwrap();
            let c = mutate(&c, &cfg, &ds, &domain, &mut rng).unwrap();
            c.cuts.validate(&domain).unwrap();
            assert_eq!(c.alphas.len(), c.partition.num_regions());
            let sum: f64 = c.alphas.iter().sum();
            assert!((sum - cfg.alpha).abs() < 1e-9);
            assert!(c.alphas.iter().all(|&a| a >= cfg.alpha_min - 1e-12));
        }
    }

    #[test]
    fn elitism_monotonic_and_deterministic() {
        let ds = two_regime_dataset(150, 8, 0.3, 0.01, 0.1, 6);
        let domain = domain_1d();
        let cfg = base_cfg();
        let g = identity_map();
        let r1 = run_ga(&ds, &domain, &g, &cfg).unwrap();
        let r2 = run_ga(&ds, &domain, &g, &cfg).unwrap();
        assert_eq!(r1.trace.len(), cfg.generations + 1);
        for w in r1.trace.windows(2) {
            assert!(w[1].best_loss <= w[0].best_loss + 1e-12);
        }
        assert_eq!(r1.best.fitness, r2.best.fitness);
        assert_eq!(r1.best.cuts, r2.best.cuts);
    }

    #[test]
    fn zero_generations_returns_best_initial() {
        let ds = two_regime_dataset(100, 5, 0.3, 0.01, 0.1, 6);
        let domain = domain_1d();
        let mut cfg = base_cfg();
        cfg.generations = 0;
        let g = identity_map();
        let r = run_ga(&ds, &domain, &g, &cfg).unwrap();
        assert_eq!(r.trace.len(), 1);
        assert_eq!(r.trace[0].best_loss, r.best.fitness);
    }

    #[test]
    fn homoskedastic_noise_matches_grid_optimum() {
        // Uniform noise everywhere: with no regime to discover, the GA must
        // still land within 5% of the exhaustive grid optimum over the cut
        // location (the visitation-weighted loss favors a balanced split
        // even when the noise bounds are flat).
        let ds = two_regime_dataset(300, 8, -2.0, 0.05, 0.05, 8);
        let domain = domain_1d();
        let mut cfg = base_cfg();
        cfg.population = 100;
        cfg.generations = 30;
        let g = identity_map();
        let r = run_ga(&ds, &domain, &g, &cfg).unwrap();
        let grid_best = grid_search_1cut(&ds, &domain, &g, &cfg).0;
        assert!(
            r.best.fitness <= 1.05 * grid_best,
            "ga {} vs grid optimum {grid_best}",
            r.best.fitness
        );
    }

    #[test]
    fn two_regime_cut_matches_grid_search() {
        let threshold = 0.3;
        let ds = two_regime_dataset(400, 10, threshold, 0.01, 0.1, 12);
        let domain = domain_1d();
        let mut cfg = base_cfg();
        cfg.population = 200;
        cfg.generations = 50;
        let g = identity_map();
        let r = run_ga(&ds, &domain, &g, &cfg).unwrap();
        let found = r.best.cuts.cuts[0][0];
        let (grid_loss, grid_cut) = grid_search_1cut(&ds, &domain, &g, &cfg);
        // Within 10% of the domain width of the grid optimum.
        assert!(
            (found - grid_cut).abs() < 0.2,
            "found {found}, grid best {grid_cut} (loss {grid_loss})"
        );
    }
}
