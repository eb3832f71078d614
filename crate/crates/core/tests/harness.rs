use std::fs;

use nashnet::game::GarnetSpec;
use nashnet::harness::{
    aggregate, derive_seed, final_rows, read_metrics, run_experiment, sweep_samples, verify, ExperimentConfig,
    RunSummary, VerifyConfig,
};
use nashnet::learner::{Architecture, TrainConfig};
use tempfile::tempdir;

fn small(out: &std::path::Path) -> ExperimentConfig {
    ExperimentConfig {
        seed: 11,
        garnet: GarnetSpec { n_players: 2, n_states: 8, n_actions: 2, ..GarnetSpec::default() },
        train: TrainConfig { epochs: 12, eval_interval: 4, architecture: Architecture::Network { hidden: 8 }, ..TrainConfig::default() },
        n_garnets: 2,
        n_resamples: 2,
        alpha: 2.0,
        out_dir: out.to_path_buf(),
        workers: 1,
    }
}

#[test]
fn writes_every_output_file() {
    let dir = tempdir().unwrap();
    let report = run_experiment(&small(dir.path())).unwrap();
    for f in ["config.json", "metrics.csv", "timings.csv", "summary.csv", "curves.svg"] {
        assert!(dir.path().join(f).is_file(), "missing {f}");
    }
    // checkpoints at 0, 4, 8, 12 for 4 runs
    assert_eq!(report.rows.len(), 16);
    let svg = fs::read_to_string(dir.path().join("curves.svg")).unwrap();
    assert!(svg.starts_with("<svg") && svg.contains("</svg>") && !svg.contains("NaN"));
    let saved = ExperimentConfig::load(dir.path().join("config.json")).unwrap();
    assert_eq!(saved, small(dir.path()));
}

#[test]
fn runs_are_reproducible_across_worker_counts() {
    let (a, b) = (tempdir().unwrap(), tempdir().unwrap());
    run_experiment(&small(a.path())).unwrap();
    run_experiment(&ExperimentConfig { workers: 2, ..small(b.path()) }).unwrap();
    for f in ["metrics.csv", "summary.csv"] {
        assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap(), "{f} differs");
    }
}

#[test]
fn metrics_round_trip_and_rows_are_self_consistent() {
    let dir = tempdir().unwrap();
    let report = run_experiment(&small(dir.path())).unwrap();
    let rows = read_metrics(dir.path().join("metrics.csv")).unwrap();
    assert_eq!(rows, report.rows);
    for r in &rows {
        let e: Vec<f64> = r.errors.iter().flatten().copied().collect();
        let m = e.iter().sum::<f64>() / e.len() as f64;
        let sd = (e.iter().map(|x| (x - m).powi(2)).sum::<f64>() / e.len() as f64).sqrt();
        assert!((r.mean_error.unwrap() - m).abs() < 1e-12);
        assert!((r.std_error.unwrap() - sd).abs() < 1e-12);
    }
}

#[test]
fn summary_matches_recomputation_from_metrics() {
    let dir = tempdir().unwrap();
    run_experiment(&small(dir.path())).unwrap();
    let finals = final_rows(&read_metrics(dir.path().join("metrics.csv")).unwrap());
    assert_eq!(finals.len(), 4);
    assert!(finals.iter().all(|r| r.epoch == 12));

    // players first, then runs
    let means: Vec<f64> = finals.iter().map(|r| r.mean_error.unwrap()).collect();
    let stds: Vec<f64> = finals.iter().map(|r| r.std_error.unwrap()).collect();
    let mean = means.iter().sum::<f64>() / 4.0;
    let player_std = stds.iter().sum::<f64>() / 4.0;

    let text = fs::read_to_string(dir.path().join("summary.csv")).unwrap();
    let all = text.lines().find(|l| l.starts_with("all,")).unwrap();
    let cols: Vec<&str> = all.split(',').collect();
    assert!((cols[6].parse::<f64>().unwrap() - mean).abs() < 1e-12);
    assert!((cols[7].parse::<f64>().unwrap() - player_std).abs() < 1e-12);

    let runs: Vec<RunSummary> = finals
        .into_iter()
        .map(|r| RunSummary { garnet: r.garnet, resample: r.resample, last: Some(r), failure: None })
        .collect();
    let agg = aggregate(&runs);
    assert!((agg.mean_error.unwrap() - mean).abs() < 1e-15);
}

#[test]
fn zero_epochs_keeps_only_the_initial_checkpoint() {
    let dir = tempdir().unwrap();
    let mut c = small(dir.path());
    c.train.epochs = 0;
    let report = run_experiment(&c).unwrap();
    assert_eq!(report.rows.len(), 4);
    assert!(report.rows.iter().all(|r| r.epoch == 0 && r.step == 0));
    assert!(!report.failed());
}

#[test]
fn failed_runs_are_recorded_and_do_not_stop_the_rest() {
    let dir = tempdir().unwrap();
    let mut c = small(dir.path());
    c.train = TrainConfig { lr_q: 50.0, lr_pi: 50.0, divergence_factor: 1.0, eval_interval: 1, epochs: 3, ..c.train };
    let report = run_experiment(&c).unwrap();
    assert!(report.failed());
    assert_eq!(report.runs.len(), 4);
    let summary = fs::read_to_string(dir.path().join("summary.csv")).unwrap();
    assert!(summary.contains("failed"));
    assert!(summary.contains("diverged"));
}

#[test]
fn invalid_config_is_rejected_before_any_output() {
    let dir = tempdir().unwrap();
    let out = dir.path().join("never");
    let c = ExperimentConfig { alpha: -1.0, ..small(&out) };
    assert!(run_experiment(&c).is_err());
    assert!(!out.exists());
}

#[test]
fn empty_config_document_gives_the_defaults() {
    let c: ExperimentConfig = serde_json::from_str("{}").unwrap();
    assert_eq!(c, ExperimentConfig::default());
    assert_eq!((c.n_garnets, c.n_resamples, c.alpha), (5, 5, 5.0));
    assert_eq!((c.garnet.n_states, c.garnet.n_actions, c.garnet.gamma), (100, 5, 0.9));
    assert!(serde_json::from_str::<ExperimentConfig>("{\"alpah\": 2}").is_err());
}

#[test]
fn sweep_writes_one_row_per_alpha() {
    let dir = tempdir().unwrap();
    let c = ExperimentConfig { n_garnets: 1, n_resamples: 1, ..small(dir.path()) };
    let points = sweep_samples(&c, &[0.5, 1.0, 3.0]).unwrap();
    assert_eq!(points.len(), 3);
    let csv = fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);
    assert!(dir.path().join("sweep.svg").is_file());
    assert_eq!(points[0].n_samples, 8);
    assert_eq!(points[2].n_samples, 48);

    let one = tempdir().unwrap();
    let single = sweep_samples(&ExperimentConfig { out_dir: one.path().to_path_buf(), ..c.clone() }, &[2.0]).unwrap();
    assert_eq!(single.len(), 1);
    assert!(sweep_samples(&c, &[1.0, 0.0]).is_err());
}

#[test]
fn derived_seeds_separate_streams() {
    assert_eq!(derive_seed(1, "data", &[0, 1]), derive_seed(1, "data", &[0, 1]));
    assert_ne!(derive_seed(1, "data", &[0, 1]), derive_seed(1, "data", &[1, 0]));
    assert_ne!(derive_seed(1, "data", &[0]), derive_seed(1, "init", &[0]));
    assert_ne!(derive_seed(1, "data", &[0]), derive_seed(2, "data", &[0]));
}

#[test]
fn verify_passes_and_catches_a_corrupted_operator() {
    let start = std::time::Instant::now();
    let report = verify(&VerifyConfig::default()).unwrap();
    for c in &report.checks {
        assert!(c.passed, "{}: {}", c.name, c.summary);
    }
    assert!(start.elapsed().as_secs_f64() < 10.0);

    let corrupted = verify(&VerifyConfig { corrupt_operator: true, ..VerifyConfig::default() }).unwrap();
    let lemma = corrupted.check("lemma1").unwrap();
    assert!(!lemma.passed);
    assert!(!lemma.failures.is_empty());
    assert!(lemma.failures[0].get("game").is_some());
    assert!(!corrupted.passed());
}
