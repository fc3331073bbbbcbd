//! End-to-end pipeline tests: the five subcommands chained over a small
//! Mountain Car configuration, artifact invariants, and exit codes.

use std::fs;
use std::path::Path;
use std::process::Command;

use statereach::config::PipelineConfig;
use statereach::pipeline::{BoundsArtifact, MetricsArtifact, PartitionArtifact};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_statereach"))
}

fn write_config(dir: &Path, cut_budget: &str) -> std::path::PathBuf {
    // n_conf is sized so the per-step timewise baseline stays finite at
    // alpha/(horizon+1).
    let toml = format!(
        r#"
model = "mountain_car"
out_dir = "{out}"
alpha = 0.05
horizon = 30
seed = 11
x0 = [[-0.55, -0.45], [0.0, 0.0]]

[splits]
n_reg = 150
n_conf = 1400
n_test = 300

[[noise.regions]]
sigma = 0.02
dist = "uniform"
[noise.regions.region]
dims = [{{ lo = -0.3, hi = 0.1 }}, {{ lo = -0.07, hi = 0.07 }}]

[[noise.regions]]
sigma = 0.002
dist = "uniform"
[noise.regions.region]
dims = [{{ lo = -1.2, hi = 0.6 }}, {{ lo = -0.07, hi = 0.07 }}]

[ga]
population = 40
generations = 8
cut_budget = {cut_budget}
alpha_min = 0.005

[reach]
max_branches = 16
initial_splits = 10
"#,
        out = dir.join("out").display(),
    );
    let path = dir.join("statereach.toml");
    fs::write(&path, toml).unwrap();
    path
}

fn run_ok(config: &Path, args: &[&str]) {
    let out = bin()
        .arg("--config")
        .arg(config)
        .args(args)
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn full_pipeline_end_to_end() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), "[1, 0]");
    let out_dir = tmp.path().join("out");

    run_ok(&config, &["gen-data"]);
    for f in ["d_reg.jsonl", "d_conf.jsonl", "d_test.jsonl", "manifest.json"] {
        assert!(out_dir.join(f).exists(), "{f} missing");
    }
    // Split sizes and disjoint trajectory ids.
    let count = |name: &str| {
        fs::read_to_string(out_dir.join(name))
            .unwrap()
            .lines()
            .count()
    };
    assert_eq!(count("d_reg.jsonl"), 150);
    assert_eq!(count("d_conf.jsonl"), 1400);
    assert_eq!(count("d_test.jsonl"), 300);
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out_dir.join("manifest.json")).unwrap()).unwrap();
    let ranges = manifest["id_ranges"].as_array().unwrap();
    assert_eq!(ranges[0][1], ranges[1][0]);
    assert_eq!(ranges[1][1], ranges[2][0]);

    // Rerun is byte-identical.
    let before = fs::read(out_dir.join("d_conf.jsonl")).unwrap();
    run_ok(&config, &["gen-data"]);
    assert_eq!(before, fs::read(out_dir.join("d_conf.jsonl")).unwrap());

    run_ok(&config, &["optimize"]);
    let art: PartitionArtifact =
        serde_json::from_str(&fs::read_to_string(out_dir.join("partition.json")).unwrap()).unwrap();
    // Fixed-confidence mode emits equal shares.
    let a0 = art.individual.alphas[0];
    assert!(art.individual.alphas.iter().all(|a| (a - a0).abs() < 1e-15));
    // Trace best_loss is non-increasing.
    let trace = fs::read_to_string(out_dir.join("ga_trace.csv")).unwrap();
    let best: Vec<f64> = trace
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
        .collect();
    assert_eq!(best.len(), 9);
    for w in best.windows(2) {
        assert!(w[1] <= w[0] + 1e-12);
    }

    run_ok(&config, &["calibrate"]);
    let bounds: BoundsArtifact =
        serde_json::from_str(&fs::read_to_string(out_dir.join("bounds.json")).unwrap()).unwrap();
    assert!(bounds.global.bounds.iter().all(|b| b.eta >= 0.0));
    assert!(bounds.timewise.steps.iter().all(|s| s.is_finite()));
    assert!((0.0..=1.0).contains(&bounds.coverage_state));
    assert!(bounds.coverage_state >= 0.90, "coverage {}", bounds.coverage_state);

    run_ok(&config, &["verify", "--bounds", "state"]);
    run_ok(&config, &["verify", "--bounds", "time"]);
    let metrics: MetricsArtifact = serde_json::from_str(
        &fs::read_to_string(out_dir.join("metrics_state_b16.json")).unwrap(),
    )
    .unwrap();
    assert!(metrics.rss > 0.0 && metrics.max_rss > 0.0);
    assert!(metrics.per_step_branch_counts.iter().all(|&c| c <= 16));
    assert!(out_dir.join("metrics_time_b16.json").exists());
    assert!(out_dir.join("flowpipe_state_b16.csv").exists());

    // Verification is deterministic modulo wall clock.
    run_ok(&config, &["verify", "--bounds", "state"]);
    let again: MetricsArtifact = serde_json::from_str(
        &fs::read_to_string(out_dir.join("metrics_state_b16.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(metrics.rss, again.rss);
    assert_eq!(metrics.max_rss, again.max_rss);
    assert_eq!(metrics.per_step_branch_counts, again.per_step_branch_counts);

    // Branch-budget override shows up in the artifact names.
    run_ok(&config, &["verify", "--bounds", "state", "--max-branches", "20"]);
    assert!(out_dir.join("metrics_state_b20.json").exists());

    run_ok(&config, &["report"]);
    let report = fs::read_to_string(out_dir.join("report.md")).unwrap();
    // Header + separator + one row per metrics file.
    assert_eq!(report.lines().count(), 2 + 3);
    assert!(report.contains("state_b16") && report.contains("time_b16"));
    assert!(out_dir.join("intervals_state_b16.csv").exists());
    let intervals = fs::read_to_string(out_dir.join("intervals_state_b16.csv")).unwrap();
    assert_eq!(intervals.lines().count(), 1 + 31);
}

#[test]
fn dynamic_mode_confidences_sum_to_alpha() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), "[2, 0]");
    run_ok(&config, &["gen-data"]);
    run_ok(&config, &["optimize", "--dynamic"]);
    let art: PartitionArtifact = serde_json::from_str(
        &fs::read_to_string(tmp.path().join("out/partition.json")).unwrap(),
    )
    .unwrap();
    assert!(art.dynamic_confidence);
    let sum: f64 = art.individual.alphas.iter().sum();
    assert!((sum - 0.05).abs() < 1e-9, "sum {sum}");
    assert!(art.individual.alphas.iter().all(|&a| a >= 0.005 - 1e-12));
}

#[test]
fn single_region_calibration_matches_plain_cp() {
    use statereach::conformal::cp_quantile;
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), "[0, 0]");
    run_ok(&config, &["gen-data"]);
    run_ok(&config, &["optimize"]);
    run_ok(&config, &["calibrate"]);
    let out_dir = tmp.path().join("out");
    let bounds: BoundsArtifact =
        serde_json::from_str(&fs::read_to_string(out_dir.join("bounds.json")).unwrap()).unwrap();
    assert_eq!(bounds.global.bounds.len(), 1);
    // Recompute the plain augmented CP quantile over the per-trajectory
    // maximum errors (the regional nonconformity score).
    let cfg = PipelineConfig::from_path(&config).unwrap();
    let conf = statereach::conformal::TrajectoryDataset::read_jsonl(&out_dir.join("d_conf.jsonl"))
        .unwrap();
    let mut scores: Vec<f64> = conf
        .trajectories
        .iter()
        .map(|t| {
            t.states
                .iter()
                .zip(&t.outputs)
                .map(|(x, y)| (y[0] - x[0]).abs())
                .fold(0.0f64, f64::max)
        })
        .collect();
    scores.push(f64::INFINITY);
    let expect = cp_quantile(&scores, cfg.alpha).unwrap();
    assert_eq!(bounds.global.bounds[0].eta, expect);
}

#[test]
fn exit_codes() {
    // Missing config: validation error, exit 1.
    let out = bin()
        .arg("--config")
        .arg("/nonexistent/statereach.toml")
        .arg("gen-data")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));

    // Report with no metrics available: exit 1 with a clear message.
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), "[1, 0]");
    fs::create_dir_all(tmp.path().join("out")).unwrap();
    let out = bin().arg("--config").arg(&config).arg("report").output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("verify"));
}
