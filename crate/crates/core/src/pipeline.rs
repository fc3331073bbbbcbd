//! Pipeline commands: data generation, partition optimization, calibration,
//! verification, and reporting. Each command reads/writes artifacts in the
//! configured output directory so stages can be rerun independently.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::{ModelKind, PipelineConfig};
use crate::conformal::{
    empirical_coverage, regional_bounds, timewise_baseline, GlobalBound, NoiseBound, TaskMap,
    TimewiseBound, TrajectoryDataset,
};
use crate::models::{generate_dataset, SimSetup};
use crate::partition_opt::{run_ga, Individual};
use crate::reach::metrics::{rss, safe_distance};
use crate::reach::systems::{KinematicCarSystem, MountainCarSystem};
use crate::reach::{reach, HybridSystemModel};
use crate::{Error, Result};

pub fn build_system(kind: ModelKind) -> Box<dyn HybridSystemModel> {
    match kind {
        ModelKind::MountainCar => Box::new(MountainCarSystem::default()),
        ModelKind::KinematicCar => Box::new(KinematicCarSystem::default()),
    }
}

/// Task map backed by a system's concrete task extractor.
pub struct SystemTask<'a>(pub &'a dyn HybridSystemModel);

impl TaskMap for SystemTask<'_> {
    fn output_dim(&self) -> usize {
        self.0.output_dim()
    }
    fn extract(&self, state: &[f64]) -> Vec<f64> {
        self.0.task_concrete(state)
    }
}

/// Which calibrated bound drives verification.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundsMode {
    State,
    Time,
}

impl BoundsMode {
    pub fn label(self) -> &'static str {
        match self {
            BoundsMode::State => "state",
            BoundsMode::Time => "time",
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct DataManifest {
    model: ModelKind,
    seed: u64,
    horizon: usize,
    files: Vec<String>,
    /// Trajectory id ranges `[start, end)` for reg/conf/test, in order.
    id_ranges: Vec<[u64; 2]>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct PartitionArtifact {
    pub model: ModelKind,
    pub seed: u64,
    pub dynamic_confidence: bool,
    pub individual: Individual,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct BoundsArtifact {
    pub model: ModelKind,
    pub seed: u64,
    pub alpha: f64,
    pub global: GlobalBound,
    pub timewise: TimewiseBound,
    pub coverage_state: f64,
    pub coverage_time: f64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct MetricsArtifact {
    pub label: String,
    pub model: ModelKind,
    pub seed: u64,
    pub bounds: String,
    pub max_branches: usize,
    pub rss: f64,
    pub max_rss: f64,
    pub safe_distance: Option<f64>,
    pub wall_clock: f64,
    pub test_coverage: f64,
    pub per_step_branch_counts: Vec<usize>,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n")?;
    Ok(())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Validation(format!("cannot read {}: {e}", path.display())))?;
    Ok(serde_json::from_str(&text)?)
}

fn dataset_path(cfg: &PipelineConfig, split: &str) -> PathBuf {
    cfg.out_dir.join(format!("d_{split}.jsonl"))
}

/// Simulates and writes the three data splits (JSON-lines) plus a manifest.
/// Trajectory ids are globally disjoint across splits and the generator uses
/// per-id RNG streams, so reruns are byte-identical.
pub fn cmd_gen_data(cfg: &PipelineConfig) -> Result<()> {
    let system = build_system(cfg.model);
    let task = SystemTask(system.as_ref());
    let control = |y: &[f64], x: &[f64]| system.controller_concrete(y, x);
    let step = |x: &[f64], u: f64| system.step_concrete(x, u);
    let setup = SimSetup {
        task: &task,
        control: &control,
        step: &step,
    };
    let domain = system.domain();
    let x0 = cfg.x0_box()?;
    fs::create_dir_all(&cfg.out_dir)?;
    let sizes = [cfg.splits.n_reg, cfg.splits.n_conf, cfg.splits.n_test];
    let names = ["reg", "conf", "test"];
    let mut offset = 0u64;
    let mut id_ranges = Vec::new();
    let mut files = Vec::new();
    for (n, name) in sizes.iter().zip(names) {
        let ds = generate_dataset(
            &setup,
            &cfg.noise,
            &domain,
            &x0,
            *n,
            cfg.horizon,
            cfg.seed,
            offset,
        )?;
        let path = dataset_path(cfg, name);
        ds.write_jsonl(&path)?;
        files.push(path.file_name().unwrap().to_string_lossy().into_owned());
        id_ranges.push([offset, offset + *n as u64]);
        offset += *n as u64;
    }
    write_json(
        &cfg.out_dir.join("manifest.json"),
        &DataManifest {
            model: cfg.model,
            seed: cfg.seed,
            horizon: cfg.horizon,
            files,
            id_ranges,
        },
    )
}

/// Runs the GA on the optimization split and writes the partition artifact
/// plus the per-generation trace CSV.
pub fn cmd_optimize(cfg: &PipelineConfig, dynamic_override: Option<bool>) -> Result<()> {
    let system = build_system(cfg.model);
    let task = SystemTask(system.as_ref());
    let d_reg = TrajectoryDataset::read_jsonl(&dataset_path(cfg, "reg"))?;
    let mut ga_cfg = cfg.ga_config();
    if let Some(dynamic) = dynamic_override {
        ga_cfg.dynamic_confidence = dynamic;
    }
    let result = run_ga(&d_reg, &system.domain(), &task, &ga_cfg)?;
    let mut trace = String::from("generation,best_loss,mean_loss,m_best\n");
    for row in &result.trace {
        writeln!(
            trace,
            "{},{},{},{}",
            row.generation, row.best_loss, row.mean_loss, row.m_best
        )
        .expect("string write");
    }
    fs::write(cfg.out_dir.join("ga_trace.csv"), trace)?;
    write_json(
        &cfg.out_dir.join("partition.json"),
        &PartitionArtifact {
            model: cfg.model,
            seed: ga_cfg.seed,
            dynamic_confidence: ga_cfg.dynamic_confidence,
            individual: result.best,
        },
    )
}

/// Calibrates regional bounds on the calibration split over the optimized
/// partition (completed to tile the whole domain), plus the timewise
/// baseline from the same data, and reports test coverage for both.
pub fn cmd_calibrate(cfg: &PipelineConfig) -> Result<()> {
    let system = build_system(cfg.model);
    let task = SystemTask(system.as_ref());
    let artifact: PartitionArtifact = read_json(&cfg.out_dir.join("partition.json"))?;
    let d_reg = TrajectoryDataset::read_jsonl(&dataset_path(cfg, "reg"))?;
    let d_conf = TrajectoryDataset::read_jsonl(&dataset_path(cfg, "conf"))?;
    let d_test = TrajectoryDataset::read_jsonl(&dataset_path(cfg, "test"))?;
    let ind = &artifact.individual;
    // Empty grid cells are absorbed into neighbors before calibration so
    // that any reachable (or test) state can be located; the absorber choice
    // uses preliminary bounds from the optimization split.
    let prelim = regional_bounds(&d_reg, &ind.partition, &ind.alphas, &task)?;
    let complete = ind.partition.complete_tiling(&prelim.etas())?;
    let global = regional_bounds(&d_conf, &complete, &ind.alphas, &task)?;
    let infeasible: Vec<usize> = global
        .bounds
        .iter()
        .filter(|b| b.eta.is_infinite())
        .map(|b| b.region)
        .collect();
    if !infeasible.is_empty() {
        return Err(Error::InfeasibleBudget(format!(
            "infinite noise bound in regions {infeasible:?}; raise the \
             confidence shares or the calibration sample size"
        )));
    }
    let timewise = timewise_baseline(&d_conf, cfg.alpha, &task)?;
    if timewise.steps.iter().any(|s| s.is_infinite()) {
        return Err(Error::InfeasibleBudget(format!(
            "timewise baseline infeasible at per-step alpha {}; raise the \
             calibration sample size",
            timewise.per_step_alpha
        )));
    }
    let coverage_state =
        empirical_coverage(&d_test, &NoiseBound::State(global.clone()), &task)?;
    let coverage_time =
        empirical_coverage(&d_test, &NoiseBound::Time(timewise.clone()), &task)?;
    write_json(
        &cfg.out_dir.join("bounds.json"),
        &BoundsArtifact {
            model: cfg.model,
            seed: cfg.seed,
            alpha: cfg.alpha,
            global,
            timewise,
            coverage_state,
            coverage_time,
        },
    )
}

/// Runs the reachability engine under the selected bound and writes the
/// flowpipe CSV plus a metrics summary.
pub fn cmd_verify(
    cfg: &PipelineConfig,
    mode: BoundsMode,
    max_branches: Option<usize>,
) -> Result<()> {
    let system = build_system(cfg.model);
    let bounds: BoundsArtifact = read_json(&cfg.out_dir.join("bounds.json"))?;
    let bound = match mode {
        BoundsMode::State => NoiseBound::State(bounds.global.clone()),
        BoundsMode::Time => NoiseBound::Time(bounds.timewise.clone()),
    };
    let mut reach_cfg = cfg.reach_config()?;
    if let Some(b) = max_branches {
        reach_cfg.max_branches = b;
    }
    let flowpipe = reach(system.as_ref(), &bound, &reach_cfg)?;
    let label = format!("{}_b{}", mode.label(), reach_cfg.max_branches);
    let dim = system.state_dim();
    let mut csv = String::from("step,branch");
    for d in 0..dim {
        write!(csv, ",dim{d}_lo,dim{d}_hi").expect("string write");
    }
    csv.push('\n');
    for (k, boxes) in flowpipe.steps.iter().enumerate() {
        for (b, hb) in boxes.iter().enumerate() {
            write!(csv, "{k},{b}").expect("string write");
            for iv in &hb.dims {
                write!(csv, ",{},{}", iv.lo, iv.hi).expect("string write");
            }
            csv.push('\n');
        }
    }
    fs::write(cfg.out_dir.join(format!("flowpipe_{label}.csv")), csv)?;
    // Metric dimensions: the perceived position for the 1-D task, the 2-D
    // pose footprint and wall distance for the car.
    let (size_dims, safe): (Vec<usize>, Option<f64>) = match cfg.model {
        ModelKind::MountainCar => (vec![0], None),
        ModelKind::KinematicCar => {
            let walls = KinematicCarSystem::default().track.walls();
            (vec![0, 1], Some(safe_distance(&flowpipe, [0, 1], &walls)))
        }
    };
    let (total, max_step) = rss(&flowpipe, &size_dims)?;
    let coverage = match mode {
        BoundsMode::State => bounds.coverage_state,
        BoundsMode::Time => bounds.coverage_time,
    };
    write_json(
        &cfg.out_dir.join(format!("metrics_{label}.json")),
        &MetricsArtifact {
            label,
            model: cfg.model,
            seed: reach_cfg.seed,
            bounds: mode.label().to_string(),
            max_branches: reach_cfg.max_branches,
            rss: total,
            max_rss: max_step,
            safe_distance: safe,
            wall_clock: flowpipe.wall_clock,
            test_coverage: coverage,
            per_step_branch_counts: flowpipe.branch_counts,
        },
    )
}

/// Per-step hull intervals extracted from a flowpipe CSV.
fn flowpipe_hulls(path: &Path) -> Result<Vec<Vec<[f64; 2]>>> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Validation(format!("cannot read {}: {e}", path.display())))?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Validation("empty flowpipe CSV".into()))?;
    let dim = (header.split(',').count() - 2) / 2;
    let mut hulls: Vec<Vec<[f64; 2]>> = Vec::new();
    for line in lines {
        let fields: Vec<f64> = line
            .split(',')
            .map(|f| f.parse().map_err(|e| Error::Serde(format!("bad CSV field: {e}"))))
            .collect::<Result<_>>()?;
        let step = fields[0] as usize;
        while hulls.len() <= step {
            hulls.push(vec![[f64::INFINITY, f64::NEG_INFINITY]; dim]);
        }
        for d in 0..dim {
            let (lo, hi) = (fields[2 + 2 * d], fields[3 + 2 * d]);
            hulls[step][d][0] = hulls[step][d][0].min(lo);
            hulls[step][d][1] = hulls[step][d][1].max(hi);
        }
    }
    Ok(hulls)
}

/// Builds the comparison table (Markdown + CSV) over the given metrics
/// files, and per-step reachable-interval CSVs for plotting.
pub fn cmd_report(cfg: &PipelineConfig, inputs: &[PathBuf]) -> Result<()> {
    if inputs.is_empty() {
        return Err(Error::Validation(
            "no metrics files given; run `verify` first".into(),
        ));
    }
    let mut md = String::from(
        "| solution | RSS | max RSS | safe distance | verification time (s) | test coverage |\n\
         |---|---|---|---|---|---|\n",
    );
    let mut table = String::from(
        "solution,rss,max_rss,safe_distance,verification_time_s,test_coverage\n",
    );
    for path in inputs {
        let m: MetricsArtifact = read_json(path)?;
        let safe = m
            .safe_distance
            .map(|d| format!("{d:.4}"))
            .unwrap_or_else(|| "-".into());
        writeln!(
            md,
            "| {} | {:.4} | {:.4} | {} | {:.2} | {:.4} |",
            m.label, m.rss, m.max_rss, safe, m.wall_clock, m.test_coverage
        )
        .expect("string write");
        writeln!(
            table,
            "{},{},{},{},{},{}",
            m.label,
            m.rss,
            m.max_rss,
            m.safe_distance.map(|d| d.to_string()).unwrap_or_default(),
            m.wall_clock,
            m.test_coverage
        )
        .expect("string write");
        // Plot-ready per-step hulls from the sibling flowpipe CSV.
        let flow = path
            .parent()
            .unwrap_or(Path::new("."))
            .join(format!("flowpipe_{}.csv", m.label));
        if flow.exists() {
            let hulls = flowpipe_hulls(&flow)?;
            let dim = hulls.first().map_or(0, Vec::len);
            let mut csv = String::from("step");
            for d in 0..dim {
                write!(csv, ",dim{d}_lo,dim{d}_hi").expect("string write");
            }
            csv.push('\n');
            for (k, hull) in hulls.iter().enumerate() {
                write!(csv, "{k}").expect("string write");
                for d in hull {
                    write!(csv, ",{},{}", d[0], d[1]).expect("string write");
                }
                csv.push('\n');
            }
            fs::write(
                cfg.out_dir.join(format!("intervals_{}.csv", m.label)),
                csv,
            )?;
        }
    }
    fs::write(cfg.out_dir.join("report.md"), md)?;
    fs::write(cfg.out_dir.join("report.csv"), table)?;
    Ok(())
}
