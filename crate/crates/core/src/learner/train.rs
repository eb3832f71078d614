use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Adam, Architecture, NashNetwork, Objective};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::eval::error_vs_best_response;
use crate::game::{EncodingMode, TurnBasedGame};
use crate::residual::empirical_loss;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr_q: f64,
    pub lr_pi: f64,
    pub weight_decay: f64,
    pub minibatch: usize,
    pub epochs: usize,
    pub p: f64,
    /// Player weights; `None` means uniform.
    pub rho: Option<Vec<f64>>,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
    pub architecture: Architecture,
    pub encoding: EncodingMode,
    /// Evaluate with the exact oracles every this many epochs.
    pub eval_interval: usize,
    /// Abort once the train residual exceeds this multiple of its initial value.
    pub divergence_factor: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr_q: 1e-3,
            lr_pi: 5e-5,
            weight_decay: 1e-6,
            minibatch: 20,
            epochs: 1500,
            p: 2.0,
            rho: None,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            seed: 0,
            architecture: Architecture::default(),
            encoding: EncodingMode::OneHot,
            eval_interval: 10,
            divergence_factor: 1e3,
        }
    }
}

impl TrainConfig {
    /// Tabular variant: one parameter per (player, state, action) for both
    /// the Q-values and the strategy logits.
    pub fn tabular(self) -> Self {
        TrainConfig { architecture: Architecture::Tabular, encoding: EncodingMode::OneHot, ..self }
    }

    /// Tabular defaults. Each table entry only sees the samples of its own
    /// state, so the network learning rates are far too small for it.
    pub fn tabular_default() -> Self {
        TrainConfig { lr_q: 1e-2, lr_pi: 1e-3, epochs: 3000, ..TrainConfig::default() }.tabular()
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::InvalidConfig(m));
        if !(self.lr_q > 0.0 && self.lr_pi > 0.0) {
            return fail("learning rates must be positive".into());
        }
        if self.minibatch < 1 {
            return fail("minibatch must be at least 1".into());
        }
        if !(self.p >= 1.0) {
            return fail(format!("p must be >= 1, got {}", self.p));
        }
        if self.weight_decay < 0.0 {
            return fail("weight_decay must be >= 0".into());
        }
        if self.eval_interval < 1 {
            return fail("eval_interval must be at least 1".into());
        }
        if let Architecture::Network { hidden } = self.architecture {
            if hidden < 1 {
                return fail("hidden layer must have at least one unit".into());
            }
        }
        Ok(())
    }

    pub fn rho_for(&self, n_players: usize) -> Result<Vec<f64>> {
        match &self.rho {
            None => Ok(vec![1.0 / n_players as f64; n_players]),
            Some(r) if r.len() == n_players && r.iter().all(|&x| x >= 0.0) => Ok(r.clone()),
            Some(r) => Err(Error::InvalidConfig(format!("rho has {} entries for {n_players} players", r.len()))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub epoch: usize,
    /// Optimizer steps taken so far.
    pub step: usize,
    pub train_residual: f64,
    pub test_residual: Option<f64>,
    /// Error vs best response per player; `None` if undefined.
    pub errors: Vec<Option<f64>>,
    pub elapsed_secs: f64,
}

impl Checkpoint {
    /// Mean and population standard deviation of the defined per-player errors.
    pub fn error_stats(&self) -> Option<(f64, f64)> {
        let defined: Vec<f64> = self.errors.iter().flatten().copied().collect();
        if defined.is_empty() {
            return None;
        }
        let n = defined.len() as f64;
        let mean = defined.iter().sum::<f64>() / n;
        let var = defined.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / n;
        Some((mean, var.sqrt()))
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub checkpoints: Vec<Checkpoint>,
}

impl TrainReport {
    pub fn last(&self) -> Option<&Checkpoint> {
        self.checkpoints.last()
    }
}

/// Initialises networks from `config.seed` and trains them.
pub fn train(
    game: &TurnBasedGame,
    train_set: &Dataset,
    test_set: Option<&Dataset>,
    config: &TrainConfig,
) -> Result<(NashNetwork, TrainReport)> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let net = NashNetwork::new(game, config.architecture, config.encoding, &mut rng);
    train_from(net, game, train_set, test_set, config)
}

/// Trains the given networks in place of a fresh initialisation.
pub fn train_from(
    mut net: NashNetwork,
    game: &TurnBasedGame,
    train_set: &Dataset,
    test_set: Option<&Dataset>,
    config: &TrainConfig,
) -> Result<(NashNetwork, TrainReport)> {
    config.validate()?;
    train_set.ensure_matches(game)?;
    if let Some(t) = test_set {
        t.ensure_matches(game)?;
    }
    if train_set.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let objective = Objective {
        gamma: game.gamma(),
        rho: config.rho_for(game.n_players())?,
        p: config.p,
        weight_decay: config.weight_decay,
    };

    let mut q_opt: Vec<Adam> = net
        .q_nets()
        .iter()
        .map(|m| {
            Adam::new(m.params.len(), config.lr_q, config.beta1, config.beta2, config.epsilon)
                .with_weight_decay(config.weight_decay)
        })
        .collect();
    let mut pi_opt: Vec<Adam> = net
        .pi_nets()
        .iter()
        .map(|m| {
            Adam::new(m.params.len(), config.lr_pi, config.beta1, config.beta2, config.epsilon)
                .with_weight_decay(config.weight_decay)
        })
        .collect();

    // shuffling gets its own stream so it does not perturb initialisation
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);

    let start = Instant::now();
    let mut report = TrainReport::default();
    let mut step = 0usize;
    let first = evaluate(&net, game, train_set, test_set, &objective, 0, step, start)?;
    let limit = config.divergence_factor * first.train_residual.max(1e-8);
    report.checkpoints.push(first);

    // the optimizers add the weight-decay term themselves
    let residual_only = Objective { weight_decay: 0.0, ..objective.clone() };
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut grads = net.zero_gradients();
    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(config.minibatch) {
            let batch = chunk.iter().map(|&k| &train_set.samples[k]);
            net.gradients_into(batch, &residual_only, &mut grads)?;
            for ((m, opt), g) in net.q_nets_mut().iter_mut().zip(&mut q_opt).zip(&grads.q) {
                opt.step(&mut m.params, g);
            }
            for ((m, opt), g) in net.pi_nets_mut().iter_mut().zip(&mut pi_opt).zip(&grads.pi) {
                opt.step(&mut m.params, g);
            }
            step += 1;
        }
        if epoch % config.eval_interval == 0 || epoch == config.epochs {
            let cp = evaluate(&net, game, train_set, test_set, &objective, epoch, step, start)?;
            if !(cp.train_residual <= limit) {
                return Err(Error::Diverged { epoch, residual: cp.train_residual, limit });
            }
            report.checkpoints.push(cp);
        }
    }
    Ok((net, report))
}

#[allow(clippy::too_many_arguments)]
fn evaluate(
    net: &NashNetwork,
    game: &TurnBasedGame,
    train_set: &Dataset,
    test_set: Option<&Dataset>,
    objective: &Objective,
    epoch: usize,
    step: usize,
    start: Instant,
) -> Result<Checkpoint> {
    if !net.is_finite() {
        return Err(Error::NonFinite { what: "weight", index: epoch });
    }
    let q = net.q_table()?;
    let strategy = net.extract_strategy(game)?;
    let residual = |d: &Dataset| {
        empirical_loss(&d.samples, &q, &strategy, objective.gamma, &objective.rho, objective.p).map(|l| l.mean)
    };
    let train_residual = residual(train_set)?;
    if !train_residual.is_finite() {
        return Err(Error::NonFinite { what: "train residual", index: epoch });
    }
    let test_residual = test_set.map(residual).transpose()?;
    let errors = error_vs_best_response(game, &strategy)?;
    Ok(Checkpoint {
        epoch,
        step,
        train_residual,
        test_residual,
        errors,
        elapsed_secs: start.elapsed().as_secs_f64(),
    })
}
