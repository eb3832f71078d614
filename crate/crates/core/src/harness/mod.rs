//! Experiment runner: Garnets × resampled batches → training → metrics,
//! summaries and plots on disk.
//!
//! Every random choice of a run is derived from the experiment seed and the
//! run's (garnet, resample) ids, so runs are independent of each other and
//! of the worker count. `metrics.csv` carries no wall-clock, which makes it
//! bit-identical across reruns; timings go to `timings.csv`.

mod plot;
mod verify;

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{sample_batch, Split};
use crate::error::{Error, Result};
use crate::game::{generate_garnet, GarnetSpec};
use crate::learner::{train, Checkpoint, TrainConfig};

pub use plot::{Chart, Series};
pub use verify::{verify, CheckOutcome, VerifyConfig, VerifyReport};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Master seed. The `seed` fields of `garnet` and `train` are replaced
    /// by per-run seeds derived from this one.
    pub seed: u64,
    pub garnet: GarnetSpec,
    pub train: TrainConfig,
    pub n_garnets: usize,
    pub n_resamples: usize,
    /// Training set size is `alpha · N_S · N_A`; the test set is `N_S · N_A`.
    pub alpha: f64,
    pub out_dir: PathBuf,
    /// Parallel runs; 0 uses every available core.
    pub workers: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 0,
            garnet: GarnetSpec::default(),
            train: TrainConfig::default(),
            n_garnets: 5,
            n_resamples: 5,
            alpha: 5.0,
            out_dir: PathBuf::from("results"),
            workers: 0,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.garnet.validate()?;
        self.train.validate()?;
        if self.n_garnets < 1 || self.n_resamples < 1 {
            return Err(Error::InvalidConfig("need at least one garnet and one resample".into()));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::InvalidConfig(format!("alpha must be positive, got {}", self.alpha)));
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn train_size(&self) -> usize {
        let base = (self.garnet.n_states * self.garnet.n_actions) as f64;
        ((self.alpha * base).round() as usize).max(1)
    }

    pub fn test_size(&self) -> usize {
        self.garnet.n_states * self.garnet.n_actions
    }
}

/// Stable 64-bit seed for a named stream of a run.
pub fn derive_seed(seed: u64, tag: &str, ids: &[u64]) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(tag.as_bytes());
    for id in ids {
        h.update(id.to_le_bytes());
    }
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}

/// One checkpoint of one run.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricsRow {
    pub garnet: usize,
    pub resample: usize,
    pub epoch: usize,
    pub step: usize,
    pub train_residual: f64,
    pub test_residual: Option<f64>,
    pub errors: Vec<Option<f64>>,
    /// Mean and population std over the players' defined errors.
    pub mean_error: Option<f64>,
    pub std_error: Option<f64>,
}

impl MetricsRow {
    pub fn from_checkpoint(garnet: usize, resample: usize, c: &Checkpoint) -> Self {
        let stats = c.error_stats();
        MetricsRow {
            garnet,
            resample,
            epoch: c.epoch,
            step: c.step,
            train_residual: c.train_residual,
            test_residual: c.test_residual,
            errors: c.errors.clone(),
            mean_error: stats.map(|s| s.0),
            std_error: stats.map(|s| s.1),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunSummary {
    pub garnet: usize,
    pub resample: usize,
    /// Final checkpoint, or `None` if the run failed.
    pub last: Option<MetricsRow>,
    pub failure: Option<String>,
}

/// Final results aggregated over runs: each run is first averaged over its
/// players, then runs are averaged.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Aggregate {
    pub n_runs: usize,
    pub n_failed: usize,
    pub mean_error: Option<f64>,
    /// Mean over runs of the per-player standard deviation.
    pub player_std: Option<f64>,
    /// Population std of the per-run means.
    pub run_std: Option<f64>,
}

pub fn aggregate(runs: &[RunSummary]) -> Aggregate {
    let finals: Vec<&MetricsRow> = runs.iter().filter_map(|r| r.last.as_ref()).collect();
    let means: Vec<f64> = finals.iter().filter_map(|r| r.mean_error).collect();
    let stds: Vec<f64> = finals.iter().filter_map(|r| r.std_error).collect();
    let avg = |v: &[f64]| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
    let run_std = avg(&means).map(|m| (means.iter().map(|x| (x - m).powi(2)).sum::<f64>() / means.len() as f64).sqrt());
    Aggregate {
        n_runs: runs.len(),
        n_failed: runs.iter().filter(|r| r.failure.is_some()).count(),
        mean_error: avg(&means),
        player_std: avg(&stds),
        run_std,
    }
}

#[derive(Clone, Debug)]
pub struct ExperimentReport {
    pub rows: Vec<MetricsRow>,
    pub runs: Vec<RunSummary>,
    pub aggregate: Aggregate,
}

impl ExperimentReport {
    pub fn failed(&self) -> bool {
        self.aggregate.n_failed > 0
    }
}

struct RunOutput {
    garnet: usize,
    resample: usize,
    checkpoints: std::result::Result<Vec<Checkpoint>, String>,
}

fn run_one(config: &ExperimentConfig, g: usize, r: usize) -> Result<Vec<Checkpoint>> {
    let (gu, ru) = (g as u64, r as u64);
    let spec = GarnetSpec { seed: derive_seed(config.seed, "garnet", &[gu]), ..config.garnet.clone() };
    let game = generate_garnet(&spec)?;
    let data_seed = derive_seed(config.seed, "data", &[gu, ru]);
    let train_set = sample_batch(&game, config.train_size(), data_seed, Split::Train)?;
    let test_set = sample_batch(&game, config.test_size(), data_seed, Split::Test)?;
    let tc = TrainConfig { seed: derive_seed(config.seed, "init", &[gu, ru]), ..config.train.clone() };
    let (_, report) = train(&game, &train_set, Some(&test_set), &tc)?;
    Ok(report.checkpoints)
}

/// Runs every (garnet, resample) pair and writes `config.json`,
/// `metrics.csv`, `timings.csv`, `summary.csv` and `curves.svg` into
/// `config.out_dir`. Failed runs are recorded and do not stop the others.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentReport> {
    run_experiment_with(config, |_| {})
}

/// As [`run_experiment`], calling `on_done` as each run finishes.
pub fn run_experiment_with(config: &ExperimentConfig, on_done: impl Fn(&RunSummary) + Sync) -> Result<ExperimentReport> {
    config.validate()?;
    let out = &config.out_dir;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let config_path = out.join("config.json");
    fs::write(&config_path, serde_json::to_string_pretty(config)?).map_err(|e| Error::io(&config_path, e))?;

    let jobs: Vec<(usize, usize)> =
        (0..config.n_garnets).flat_map(|g| (0..config.n_resamples).map(move |r| (g, r))).collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers)
        .build()
        .map_err(|e| Error::InvalidConfig(format!("worker pool: {e}")))?;
    let outputs: Vec<RunOutput> = pool.install(|| {
        jobs.par_iter()
            .map(|&(g, r)| {
                let checkpoints = run_one(config, g, r).map_err(|e| e.to_string());
                let output = RunOutput { garnet: g, resample: r, checkpoints };
                on_done(&summarize_run(&output));
                output
            })
            .collect()
    });

    let mut rows = Vec::new();
    let mut runs = Vec::new();
    for o in &outputs {
        if let Ok(cps) = &o.checkpoints {
            rows.extend(cps.iter().map(|c| MetricsRow::from_checkpoint(o.garnet, o.resample, c)));
        }
        runs.push(summarize_run(o));
    }
    let aggregate = aggregate(&runs);

    write_metrics(&out.join("metrics.csv"), &rows, config.garnet.n_players)?;
    write_timings(&out.join("timings.csv"), &outputs)?;
    write_summary(&out.join("summary.csv"), &runs, &aggregate)?;
    let svg_path = out.join("curves.svg");
    fs::write(&svg_path, plot::curves(&rows, config.garnet.n_players)).map_err(|e| Error::io(&svg_path, e))?;

    Ok(ExperimentReport { rows, runs, aggregate })
}

fn summarize_run(o: &RunOutput) -> RunSummary {
    match &o.checkpoints {
        Ok(cps) => RunSummary {
            garnet: o.garnet,
            resample: o.resample,
            last: cps.last().map(|c| MetricsRow::from_checkpoint(o.garnet, o.resample, c)),
            failure: None,
        },
        Err(e) => RunSummary { garnet: o.garnet, resample: o.resample, last: None, failure: Some(e.clone()) },
    }
}

fn opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    csv::Writer::from_path(path).map_err(|e| Error::Io { path: path.to_path_buf(), source: e.into() })
}

/// Writes rows as `metrics.csv`, with one error column per player.
pub fn write_metrics(path: &Path, rows: &[MetricsRow], n_players: usize) -> Result<()> {
    let mut w = csv_writer(path)?;
    let mut header: Vec<String> =
        ["garnet", "resample", "epoch", "step", "train_residual", "test_residual"].map(String::from).to_vec();
    header.extend((0..n_players).map(|i| format!("error_{i}")));
    header.extend(["error_mean".to_string(), "error_std".to_string()]);
    w.write_record(&header)?;
    for row in rows {
        let mut rec = vec![
            row.garnet.to_string(),
            row.resample.to_string(),
            row.epoch.to_string(),
            row.step.to_string(),
            row.train_residual.to_string(),
            opt(row.test_residual),
        ];
        rec.extend(row.errors.iter().map(|e| opt(*e)));
        rec.extend([opt(row.mean_error), opt(row.std_error)]);
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn write_timings(path: &Path, outputs: &[RunOutput]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["garnet", "resample", "epoch", "step", "elapsed_secs"])?;
    for o in outputs {
        for c in o.checkpoints.iter().flatten() {
            w.write_record([
                o.garnet.to_string(),
                o.resample.to_string(),
                c.epoch.to_string(),
                c.step.to_string(),
                format!("{:.3}", c.elapsed_secs),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn write_summary(path: &Path, runs: &[RunSummary], agg: &Aggregate) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record([
        "garnet",
        "resample",
        "status",
        "epoch",
        "train_residual",
        "test_residual",
        "mean_error",
        "player_std",
        "run_std",
        "message",
    ])?;
    for run in runs {
        let status = if run.failure.is_some() { "failed" } else { "ok" };
        let last = run.last.as_ref();
        w.write_record([
            run.garnet.to_string(),
            run.resample.to_string(),
            status.to_string(),
            last.map(|r| r.epoch.to_string()).unwrap_or_default(),
            opt(last.map(|r| r.train_residual)),
            opt(last.and_then(|r| r.test_residual)),
            opt(last.and_then(|r| r.mean_error)),
            opt(last.and_then(|r| r.std_error)),
            String::new(),
            run.failure.clone().unwrap_or_default(),
        ])?;
    }
    let status = if agg.n_failed > 0 { format!("{} of {} failed", agg.n_failed, agg.n_runs) } else { "ok".into() };
    w.write_record([
        "all".to_string(),
        "all".to_string(),
        status,
        String::new(),
        String::new(),
        String::new(),
        opt(agg.mean_error),
        opt(agg.player_std),
        opt(agg.run_std),
        String::new(),
    ])?;
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads `metrics.csv` back.
pub fn read_metrics(path: impl AsRef<Path>) -> Result<Vec<MetricsRow>> {
    let path = path.as_ref();
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::Io { path: path.to_path_buf(), source: e.into() })?;
    let header = reader.headers()?.clone();
    let n_players = header.iter().filter(|h| h.starts_with("error_") && h[6..].parse::<usize>().is_ok()).count();
    let parse_err = |line: usize, message: String| Error::Parse { path: path.to_path_buf(), line, message };
    let mut rows = Vec::new();
    for (idx, rec) in reader.records().enumerate() {
        let rec = rec?;
        let line = idx + 2;
        let field = |k: usize| rec.get(k).ok_or_else(|| parse_err(line, format!("missing column {k}")));
        let int = |k: usize| -> Result<usize> { field(k)?.parse().map_err(|e| parse_err(line, format!("{e}"))) };
        let float = |k: usize| -> Result<Option<f64>> {
            let f = field(k)?;
            if f.is_empty() {
                Ok(None)
            } else {
                f.parse().map(Some).map_err(|e| parse_err(line, format!("{e}")))
            }
        };
        rows.push(MetricsRow {
            garnet: int(0)?,
            resample: int(1)?,
            epoch: int(2)?,
            step: int(3)?,
            train_residual: float(4)?.ok_or_else(|| parse_err(line, "empty train residual".into()))?,
            test_residual: float(5)?,
            errors: (0..n_players).map(|i| float(6 + i)).collect::<Result<_>>()?,
            mean_error: float(6 + n_players)?,
            std_error: float(7 + n_players)?,
        });
    }
    Ok(rows)
}

/// Final row of every run present in `rows`, in (garnet, resample) order.
pub fn final_rows(rows: &[MetricsRow]) -> Vec<MetricsRow> {
    let mut last: std::collections::BTreeMap<(usize, usize), &MetricsRow> = Default::default();
    for row in rows {
        let slot = last.entry((row.garnet, row.resample)).or_insert(row);
        if row.epoch >= slot.epoch {
            *slot = row;
        }
    }
    last.into_values().cloned().collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepPoint {
    pub alpha: f64,
    pub n_samples: usize,
    pub aggregate: Aggregate,
}

/// Repeats the experiment for each sample multiplier, each in its own
/// `alpha_<α>` subdirectory, then writes `sweep.csv` and `sweep.svg`.
pub fn sweep_samples(config: &ExperimentConfig, alphas: &[f64]) -> Result<Vec<SweepPoint>> {
    sweep_samples_with(config, alphas, |_, _| {})
}

pub fn sweep_samples_with(
    config: &ExperimentConfig,
    alphas: &[f64],
    on_done: impl Fn(f64, &RunSummary) + Sync,
) -> Result<Vec<SweepPoint>> {
    if alphas.is_empty() {
        return Err(Error::InvalidConfig("sweep needs at least one alpha".into()));
    }
    if let Some(a) = alphas.iter().find(|a| !(**a > 0.0 && a.is_finite())) {
        return Err(Error::InvalidConfig(format!("alpha must be positive, got {a}")));
    }
    config.validate()?;
    let out = &config.out_dir;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut points = Vec::new();
    for &alpha in alphas {
        let sub = ExperimentConfig { alpha, out_dir: out.join(format!("alpha_{alpha}")), ..config.clone() };
        let report = run_experiment_with(&sub, |r| on_done(alpha, r))?;
        points.push(SweepPoint { alpha, n_samples: sub.train_size(), aggregate: report.aggregate });
    }

    let path = out.join("sweep.csv");
    let mut w = csv_writer(&path)?;
    w.write_record(["alpha", "n_samples", "mean_error", "player_std", "run_std", "n_runs", "n_failed"])?;
    for p in &points {
        let a = &p.aggregate;
        w.write_record([
            p.alpha.to_string(),
            p.n_samples.to_string(),
            opt(a.mean_error),
            opt(a.player_std),
            opt(a.run_std),
            a.n_runs.to_string(),
            a.n_failed.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    let svg_path = out.join("sweep.svg");
    fs::write(&svg_path, plot::sweep(&points)).map_err(|e| Error::io(&svg_path, e))?;
    Ok(points)
}
