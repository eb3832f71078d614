use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use nashnet::data::{sample_batch, Dataset, Split};
use nashnet::eval::{error_vs_best_response, JointStrategy};
use nashnet::game::{generate_garnet, EncodingMode, TurnBasedGame};
use nashnet::harness::{
    final_rows, run_experiment_with, sweep_samples_with, verify, write_metrics, ExperimentConfig, MetricsRow,
    RunSummary, VerifyConfig,
};
use nashnet::learner::{train, Architecture, TrainConfig};

#[derive(Parser)]
#[command(name = "nashnet", version, about = "Learn Nash equilibria of turn-based Garnet games from batch data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a Garnet and write it as JSON
    Gen {
        #[command(flatten)]
        exp: ExperimentArgs,
        /// Output file; stdout when omitted
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sample a batch from a game and write it as JSON lines
    Sample {
        #[arg(long)]
        game: PathBuf,
        /// Number of transitions; defaults to alpha · N_S · N_A
        #[arg(long)]
        k: Option<usize>,
        #[arg(long, default_value_t = 5.0)]
        alpha: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value_t = SplitArg::Train)]
        split: SplitArg,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train on one game and write metrics, the network and its strategy
    Train {
        #[command(flatten)]
        exp: ExperimentArgs,
        /// Game JSON; a Garnet is generated from the flags when omitted
        #[arg(long)]
        game: Option<PathBuf>,
        /// Training set (JSON lines); sampled with --alpha when omitted
        #[arg(long)]
        train_set: Option<PathBuf>,
        #[arg(long)]
        test_set: Option<PathBuf>,
    },
    /// Run the full experiment over Garnets and resampled batches
    Run {
        #[command(flatten)]
        exp: ExperimentArgs,
    },
    /// Repeat the experiment for several sample multipliers
    Sweep {
        #[command(flatten)]
        exp: ExperimentArgs,
        #[arg(long, value_delimiter = ',', default_value = "0.5,1,2,5")]
        alphas: Vec<f64>,
    },
    /// Run the self-checks of oracles, estimator and gradients
    Verify {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "results")]
        out_dir: PathBuf,
        /// Draw Lemma 1 instances and estimator probes from this game
        #[arg(long)]
        game: Option<PathBuf>,
        /// Flip the sign of the discount inside the residual operators
        #[arg(long)]
        corrupt_operator: bool,
        #[arg(long)]
        lemma_instances: Option<usize>,
        #[arg(long)]
        estimator_probes: Option<usize>,
    },
    /// Score a saved strategy against a saved game
    Eval {
        #[arg(long)]
        game: PathBuf,
        #[arg(long)]
        strategy: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Test,
}

#[derive(Clone, Copy, ValueEnum)]
enum EncodingArg {
    OneHot,
    Compact,
}

/// Flags mirroring `ExperimentConfig`. Unset flags keep the value from
/// `--config`, or the default.
#[derive(Args, Clone, Default)]
struct ExperimentArgs {
    /// JSON experiment config; flags override its fields
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed [default: 0]
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory [default: results]
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long)]
    players: Option<usize>,
    #[arg(long)]
    states: Option<usize>,
    #[arg(long)]
    actions: Option<usize>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    sigma_next: Option<f64>,
    #[arg(long)]
    sigma_noise: Option<f64>,
    #[arg(long)]
    sparsity: Option<f64>,
    #[arg(long)]
    n_garnets: Option<usize>,
    #[arg(long)]
    n_resamples: Option<usize>,
    /// Training samples per (state, action)
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    minibatch: Option<usize>,
    #[arg(long)]
    lr_q: Option<f64>,
    #[arg(long)]
    lr_pi: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    /// Norm exponent of the residual
    #[arg(long)]
    p: Option<f64>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long, value_enum)]
    encoding: Option<EncodingArg>,
    /// Checkpoint interval in epochs
    #[arg(long)]
    eval_interval: Option<usize>,
    /// Table per (state, action) instead of networks, with tabular step sizes
    #[arg(long)]
    tabular: bool,
    /// Parallel runs; 0 uses every core
    #[arg(long)]
    workers: Option<usize>,
}

impl ExperimentArgs {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let mut c = match &self.config {
            Some(path) => ExperimentConfig::load(path).with_context(|| format!("loading {}", path.display()))?,
            None => ExperimentConfig::default(),
        };
        if self.tabular {
            c.train = if self.config.is_some() { c.train.tabular() } else { TrainConfig::tabular_default() };
        }
        macro_rules! set {
            ($flag:ident => $($field:tt)+) => {
                if let Some(v) = self.$flag.clone() {
                    c.$($field)+ = v;
                }
            };
        }
        set!(seed => seed);
        set!(out_dir => out_dir);
        set!(players => garnet.n_players);
        set!(states => garnet.n_states);
        set!(actions => garnet.n_actions);
        set!(gamma => garnet.gamma);
        set!(sigma_next => garnet.sigma_next);
        set!(sigma_noise => garnet.sigma_noise);
        set!(sparsity => garnet.sparsity);
        set!(n_garnets => n_garnets);
        set!(n_resamples => n_resamples);
        set!(alpha => alpha);
        set!(epochs => train.epochs);
        set!(minibatch => train.minibatch);
        set!(lr_q => train.lr_q);
        set!(lr_pi => train.lr_pi);
        set!(weight_decay => train.weight_decay);
        set!(p => train.p);
        set!(eval_interval => train.eval_interval);
        set!(workers => workers);
        if let Some(hidden) = self.hidden {
            if self.tabular {
                bail!("--hidden has no effect with --tabular");
            }
            c.train.architecture = Architecture::Network { hidden };
        }
        if let Some(e) = self.encoding {
            c.train.encoding = match e {
                EncodingArg::OneHot => EncodingMode::OneHot,
                EncodingArg::Compact => EncodingMode::Compact,
            };
        }
        c.validate()?;
        Ok(c)
    }
}

fn write_or_print(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(path) => fs::write(path, text).with_context(|| format!("writing {}", path.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn format_error(e: Option<f64>) -> String {
    e.map(|v| format!("{v:.4}")).unwrap_or_else(|| "-".into())
}

fn report_run(r: &RunSummary) {
    match (&r.last, &r.failure) {
        (_, Some(msg)) => eprintln!("garnet {} resample {}: FAILED: {msg}", r.garnet, r.resample),
        (Some(row), None) => eprintln!(
            "garnet {} resample {}: epoch {} residual {:.3e} error {}",
            r.garnet,
            r.resample,
            row.epoch,
            row.train_residual,
            format_error(row.mean_error)
        ),
        (None, None) => eprintln!("garnet {} resample {}: no checkpoints", r.garnet, r.resample),
    }
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Gen { exp, out } => {
            let c = exp.resolve()?;
            let spec = nashnet::game::GarnetSpec { seed: c.seed, ..c.garnet };
            let game = generate_garnet(&spec)?;
            write_or_print(out.as_deref(), &(game.to_json()? + "\n"))?;
            Ok(true)
        }
        Command::Sample { game, k, alpha, seed, split, out } => {
            let game = TurnBasedGame::load(&game)?;
            let k = k.unwrap_or_else(|| ((alpha * (game.n_states() * game.n_actions()) as f64).round() as usize).max(1));
            let split = match split {
                SplitArg::Train => Split::Train,
                SplitArg::Test => Split::Test,
            };
            let data = sample_batch(&game, k, seed, split)?;
            write_or_print(out.as_deref(), &data.to_jsonl()?)?;
            Ok(true)
        }
        Command::Train { exp, game, train_set, test_set } => {
            let c = exp.resolve()?;
            let game = match game {
                Some(path) => TurnBasedGame::load(&path)?,
                None => generate_garnet(&nashnet::game::GarnetSpec { seed: c.seed, ..c.garnet.clone() })?,
            };
            let load_or_sample = |path: Option<PathBuf>, k: usize, split: Split| -> Result<Dataset> {
                Ok(match path {
                    Some(p) => Dataset::load(&p)?,
                    None => sample_batch(&game, k, c.seed, split)?,
                })
            };
            let n = game.n_states() * game.n_actions();
            let k_train = ((c.alpha * n as f64).round() as usize).max(1);
            let train_data = load_or_sample(train_set, k_train, Split::Train)?;
            let test_data = load_or_sample(test_set, n, Split::Test)?;
            let tc = TrainConfig { seed: c.seed, ..c.train.clone() };
            let (net, report) = train(&game, &train_data, Some(&test_data), &tc)?;

            fs::create_dir_all(&c.out_dir).with_context(|| format!("creating {}", c.out_dir.display()))?;
            let rows: Vec<MetricsRow> = report.checkpoints.iter().map(|cp| MetricsRow::from_checkpoint(0, 0, cp)).collect();
            write_metrics(&c.out_dir.join("metrics.csv"), &rows, game.n_players())?;
            fs::write(c.out_dir.join("network.json"), net.to_json()?)?;
            net.extract_strategy(&game)?.save(c.out_dir.join("strategy.json"))?;
            game.save(c.out_dir.join("game.json"))?;
            if let Some(last) = rows.last() {
                println!(
                    "epoch {} train residual {:.4e} test residual {} error vs best response {}",
                    last.epoch,
                    last.train_residual,
                    last.test_residual.map(|t| format!("{t:.4e}")).unwrap_or_else(|| "-".into()),
                    format_error(last.mean_error)
                );
            }
            Ok(true)
        }
        Command::Run { exp } => {
            let c = exp.resolve()?;
            let report = run_experiment_with(&c, report_run)?;
            let a = &report.aggregate;
            println!(
                "{} runs, {} failed: mean error {} (player std {}, run std {}); results in {}",
                a.n_runs,
                a.n_failed,
                format_error(a.mean_error),
                format_error(a.player_std),
                format_error(a.run_std),
                c.out_dir.display()
            );
            debug_assert_eq!(final_rows(&report.rows).len(), a.n_runs - a.n_failed);
            Ok(!report.failed())
        }
        Command::Sweep { exp, alphas } => {
            let c = exp.resolve()?;
            let points = sweep_samples_with(&c, &alphas, |alpha, r| {
                eprint!("alpha {alpha}: ");
                report_run(r);
            })?;
            let mut ok = true;
            for p in &points {
                println!("alpha {} ({} samples): mean error {}", p.alpha, p.n_samples, format_error(p.aggregate.mean_error));
                ok &= p.aggregate.n_failed == 0;
            }
            Ok(ok)
        }
        Command::Verify { seed, out_dir, game, corrupt_operator, lemma_instances, estimator_probes } => {
            let mut config = VerifyConfig { seed, corrupt_operator, ..VerifyConfig::default() };
            if let Some(path) = game {
                config.game = Some(TurnBasedGame::load(&path)?);
            }
            if let Some(n) = lemma_instances {
                config.lemma_instances = n;
            }
            if let Some(n) = estimator_probes {
                config.estimator_probes = n;
            }
            let report = verify(&config)?;
            for c in &report.checks {
                println!("{} {}: {} ({:.2}s)", if c.passed { "PASS" } else { "FAIL" }, c.name, c.summary, c.elapsed_secs);
            }
            fs::create_dir_all(&out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
            let path = out_dir.join("verify.json");
            fs::write(&path, serde_json::to_string_pretty(&report)?)?;
            if !report.passed() {
                eprintln!("violations with instance dumps written to {}", path.display());
            }
            Ok(report.passed())
        }
        Command::Eval { game, strategy } => {
            let game = TurnBasedGame::load(&game)?;
            let strategy = JointStrategy::load(&strategy)?;
            let errors = error_vs_best_response(&game, &strategy)?;
            for (i, e) in errors.iter().enumerate() {
                println!("player {i}: error vs best response {}", format_error(*e));
            }
            let defined: Vec<f64> = errors.iter().flatten().copied().collect();
            if !defined.is_empty() {
                println!("mean {:.4}", defined.iter().sum::<f64>() / defined.len() as f64);
            }
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
