//! The NashNetwork: per-player Q-approximator and strategy approximator,
//! trained jointly on the empirical Bellman residual of a batch.
//!
//! The loss for a minibatch is computed in one pass per sample:
//!
//! 1. `Q^i(s, ·)` for every player, and the entry of the logged action;
//! 2. `Q^i(s', ·)` for every player;
//! 3. the strategy of the player controlling `s'`, evaluated at `s'`;
//! 4. `E_π[Q^i(s', ·)]` as a dot product, and `max Q^i(s', ·)`;
//! 5. the best-response continuation picks the max when `i` controls `s'`
//!    and the expectation otherwise;
//! 6. the two residuals against `Q^i(s, a)`.
//!
//! Gradients flow into both the Q-approximators and the strategy
//! approximator of the next player. The max passes its gradient to the
//! lowest-index maximiser.

mod adam;
mod check;
mod model;
mod train;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use adam::Adam;
pub use check::{relative_error, GradientCheck, GradientMismatch, NetKind};
pub use model::{Model, ModelShape};
pub use train::{train, train_from, Checkpoint, TrainConfig, TrainReport};

use crate::data::BatchSample;
use crate::error::{Error, Result};
use crate::eval::JointStrategy;
use crate::game::{encode_state, EncodingMode, TurnBasedGame};
use crate::residual::{max_with_index, QTable};
use model::{softmax_backward, softmax_in_place, Cache};

pub const CHECKPOINT_VERSION: u32 = 1;

/// Which approximator family backs the Q-values and strategies.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    Network { hidden: usize },
    Tabular,
}

impl Default for Architecture {
    fn default() -> Self {
        Architecture::Network { hidden: 80 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NashNetwork {
    version: u32,
    n_players: usize,
    n_states: usize,
    n_actions: usize,
    encoding: EncodingMode,
    q_nets: Vec<Model>,
    pi_nets: Vec<Model>,
    #[serde(skip)]
    inputs: Vec<Vec<(usize, f64)>>,
}

/// One player's outputs at a state.
#[derive(Clone, Debug, PartialEq)]
pub struct PlayerOutput {
    pub q_values: Vec<f64>,
    pub strategy: Vec<f64>,
}

/// Loss settings shared by the network path and the tabular oracle.
#[derive(Clone, Debug, PartialEq)]
pub struct Objective {
    pub gamma: f64,
    pub rho: Vec<f64>,
    pub p: f64,
    pub weight_decay: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub q: Vec<Vec<f64>>,
    pub pi: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn norm(&self) -> f64 {
        self.q.iter().chain(&self.pi).flatten().map(|g| g * g).sum::<f64>().sqrt()
    }
}

#[derive(Clone, Debug)]
pub struct LossAndGradients {
    /// Mean per-sample residual over the minibatch.
    pub residual: f64,
    /// `weight_decay / 2 · ‖θ‖²`
    pub penalty: f64,
    /// Gradient of `residual + penalty`.
    pub gradients: Gradients,
}

fn sparse_inputs(n_states: usize, encoding: EncodingMode) -> Vec<Vec<(usize, f64)>> {
    (0..n_states)
        .map(|s| {
            encode_state(s, n_states, encoding)
                .expect("state in range")
                .into_iter()
                .enumerate()
                .filter(|&(_, x)| x != 0.0)
                .collect()
        })
        .collect()
}

/// `d|x|^p / dx`
fn pow_abs_derivative(x: f64, p: f64) -> f64 {
    if p == 2.0 {
        2.0 * x
    } else if x == 0.0 {
        0.0
    } else {
        p * x.abs().powf(p - 1.0) * x.signum()
    }
}

impl NashNetwork {
    fn shapes(game: &TurnBasedGame, arch: Architecture, encoding: EncodingMode) -> ModelShape {
        match arch {
            Architecture::Network { hidden } => ModelShape::Mlp {
                inputs: encoding.width(game.n_states()),
                hidden,
                outputs: game.n_actions(),
            },
            Architecture::Tabular => ModelShape::Table { states: game.n_states(), outputs: game.n_actions() },
        }
    }

    fn assemble(game: &TurnBasedGame, encoding: EncodingMode, q_nets: Vec<Model>, pi_nets: Vec<Model>) -> Self {
        NashNetwork {
            version: CHECKPOINT_VERSION,
            n_players: game.n_players(),
            n_states: game.n_states(),
            n_actions: game.n_actions(),
            encoding,
            q_nets,
            pi_nets,
            inputs: sparse_inputs(game.n_states(), encoding),
        }
    }

    /// Randomly initialised networks (tables start at zero).
    pub fn new(game: &TurnBasedGame, arch: Architecture, encoding: EncodingMode, rng: &mut impl Rng) -> Self {
        let shape = Self::shapes(game, arch, encoding);
        let mut q_nets = Vec::with_capacity(game.n_players());
        let mut pi_nets = Vec::with_capacity(game.n_players());
        for _ in 0..game.n_players() {
            q_nets.push(Model::init(shape, rng));
            pi_nets.push(Model::init(shape, rng));
        }
        Self::assemble(game, encoding, q_nets, pi_nets)
    }

    /// All weights and biases zero: Q ≡ 0 and uniform strategies.
    pub fn zeros(game: &TurnBasedGame, arch: Architecture, encoding: EncodingMode) -> Self {
        let shape = Self::shapes(game, arch, encoding);
        let n = game.n_players();
        Self::assemble(game, encoding, vec![Model::zeros(shape); n], vec![Model::zeros(shape); n])
    }

    /// Tabular learner holding exactly `q` and the logits of `logits`
    /// (indexed like `q` but one row per state, used for every player at
    /// the states they control).
    pub fn tabular_from(game: &TurnBasedGame, q: &QTable, logits: &[Vec<f64>]) -> Result<Self> {
        if q.n_players() != game.n_players() || q.n_states() != game.n_states() || q.n_actions() != game.n_actions() {
            return Err(Error::Dimension("Q table does not match game".into()));
        }
        if logits.len() != game.n_states() || logits.iter().any(|r| r.len() != game.n_actions()) {
            return Err(Error::Dimension("logit table does not match game".into()));
        }
        let mut net = Self::zeros(game, Architecture::Tabular, EncodingMode::OneHot);
        let na = game.n_actions();
        for i in 0..game.n_players() {
            for s in 0..game.n_states() {
                net.q_nets[i].params[s * na..(s + 1) * na].copy_from_slice(q.row(i, s));
                net.pi_nets[i].params[s * na..(s + 1) * na].copy_from_slice(&logits[s]);
            }
        }
        Ok(net)
    }

    pub fn n_players(&self) -> usize {
        self.n_players
    }

    pub fn q_nets(&self) -> &[Model] {
        &self.q_nets
    }

    pub fn pi_nets(&self) -> &[Model] {
        &self.pi_nets
    }

    pub fn q_nets_mut(&mut self) -> &mut [Model] {
        &mut self.q_nets
    }

    pub fn pi_nets_mut(&mut self) -> &mut [Model] {
        &mut self.pi_nets
    }

    pub fn n_params(&self) -> usize {
        self.q_nets.iter().chain(&self.pi_nets).map(|m| m.params.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.q_nets.iter().chain(&self.pi_nets).all(Model::is_finite)
    }

    fn ensure_finite(&self) -> Result<()> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(Error::NonFinite { what: "weight", index: 0 })
        }
    }

    fn check_state(&self, s: usize) -> Result<()> {
        if s >= self.n_states {
            return Err(Error::OutOfRange { what: "state", index: s, limit: self.n_states });
        }
        Ok(())
    }

    /// Q-values and strategy of every player at state `s`.
    pub fn forward(&self, s: usize) -> Result<Vec<PlayerOutput>> {
        self.check_state(s)?;
        self.ensure_finite()?;
        let x = &self.inputs[s];
        let mut cache = Cache::default();
        Ok((0..self.n_players)
            .map(|i| {
                self.q_nets[i].forward(s, x, &mut cache);
                let q_values = cache.out.clone();
                self.pi_nets[i].forward(s, x, &mut cache);
                let mut strategy = cache.out.clone();
                softmax_in_place(&mut strategy);
                PlayerOutput { q_values, strategy }
            })
            .collect())
    }

    /// Q-values of every player on every state.
    pub fn q_table(&self) -> Result<QTable> {
        self.ensure_finite()?;
        let mut table = QTable::zeros(self.n_players, self.n_states, self.n_actions);
        let mut cache = Cache::default();
        for i in 0..self.n_players {
            for s in 0..self.n_states {
                self.q_nets[i].forward(s, &self.inputs[s], &mut cache);
                table.row_mut(i, s).copy_from_slice(&cache.out);
            }
        }
        Ok(table)
    }

    fn strategy_at(&self, i: usize, s: usize, cache: &mut Cache) -> Vec<f64> {
        self.pi_nets[i].forward(s, &self.inputs[s], cache);
        let mut probs = cache.out.clone();
        softmax_in_place(&mut probs);
        probs
    }

    /// Evaluates each state's controller strategy and assembles the joint
    /// strategy.
    pub fn extract_strategy(&self, game: &TurnBasedGame) -> Result<JointStrategy> {
        self.ensure_finite()?;
        if game.n_states() != self.n_states || game.n_actions() != self.n_actions || game.n_players() != self.n_players {
            return Err(Error::Dimension("network does not match game".into()));
        }
        let mut cache = Cache::default();
        let rows = (0..self.n_states)
            .map(|s| self.strategy_at(game.controller(s), s, &mut cache))
            .collect();
        JointStrategy::new(rows)
    }

    pub fn zero_gradients(&self) -> Gradients {
        Gradients {
            q: self.q_nets.iter().map(|m| vec![0.0; m.params.len()]).collect(),
            pi: self.pi_nets.iter().map(|m| vec![0.0; m.params.len()]).collect(),
        }
    }

    /// Mean empirical residual of `batch` and its gradient w.r.t. every
    /// parameter, plus the L2 penalty.
    pub fn loss_and_gradients(&self, batch: &[BatchSample], objective: &Objective) -> Result<LossAndGradients> {
        let mut grads = self.zero_gradients();
        let (residual, penalty) = self.gradients_into(batch.iter(), objective, &mut grads)?;
        Ok(LossAndGradients { residual, penalty, gradients: grads })
    }

    /// Like [`Self::loss_and_gradients`] but overwrites a preallocated
    /// gradient buffer. Returns `(residual, penalty)`.
    pub fn gradients_into<'a>(
        &self,
        batch: impl ExactSizeIterator<Item = &'a BatchSample>,
        objective: &Objective,
        grads: &mut Gradients,
    ) -> Result<(f64, f64)> {
        let len = batch.len();
        if len == 0 {
            return Err(Error::EmptyBatch);
        }
        if objective.rho.len() != self.n_players {
            return Err(Error::Dimension("rho length differs from player count".into()));
        }
        for g in grads.q.iter_mut().chain(grads.pi.iter_mut()) {
            g.fill(0.0);
        }
        let scale = 1.0 / len as f64;
        let gamma = objective.gamma;
        let p = objective.p;

        let mut cache_s = Cache::default();
        let mut cache_n = Cache::default();
        let mut cache_pi = Cache::default();
        let mut scratch = Vec::new();
        let mut probs = vec![0.0; self.n_actions];
        let mut d_probs = vec![0.0; self.n_actions];
        let mut d_q_next = vec![0.0; self.n_actions];
        let mut d_q_sa = vec![0.0; self.n_actions];
        let mut total = 0.0;

        for (j, sample) in batch.enumerate() {
            if sample.s >= self.n_states || sample.s_next >= self.n_states || sample.a >= self.n_actions {
                return Err(Error::OutOfRange { what: "sample index", index: j, limit: len });
            }
            let x_s = &self.inputs[sample.s];
            let x_n = &self.inputs[sample.s_next];
            let next_player = sample.controller_next;

            self.pi_nets[next_player].forward(sample.s_next, x_n, &mut cache_pi);
            probs.copy_from_slice(&cache_pi.out);
            softmax_in_place(&mut probs);
            d_probs.fill(0.0);
            let mut sample_loss = 0.0;
            for i in 0..self.n_players {
                let q = &self.q_nets[i];
                q.forward(sample.s, x_s, &mut cache_s);
                q.forward(sample.s_next, x_n, &mut cache_n);
                let q_sa = cache_s.out[sample.a];
                let q_next = &cache_n.out;

                let expected: f64 = q_next.iter().zip(&probs).map(|(q, p)| q * p).sum();
                let (max, argmax) = max_with_index(q_next);
                let owns_next = next_player == i;
                let star = if owns_next { max } else { expected };

                let r = sample.rewards[i];
                let d_star = r + gamma * star - q_sa;
                let d_joint = r + gamma * expected - q_sa;
                let w = objective.rho[i];
                sample_loss += w * (d_star.abs().powf(p) + d_joint.abs().powf(p));

                let g_star = w * scale * pow_abs_derivative(d_star, p);
                let g_joint = w * scale * pow_abs_derivative(d_joint, p);

                // residuals depend on Q(s,a) with coefficient -1
                d_q_sa.fill(0.0);
                d_q_sa[sample.a] = -(g_star + g_joint);
                q.backward(sample.s, x_s, &cache_s, &d_q_sa, &mut grads.q[i], &mut scratch);

                // and on the continuation with coefficient γ
                let via_expectation = gamma * (g_joint + if owns_next { 0.0 } else { g_star });
                for (d, pb) in d_q_next.iter_mut().zip(&probs) {
                    *d = via_expectation * pb;
                }
                if owns_next {
                    d_q_next[argmax] += gamma * g_star;
                }
                q.backward(sample.s_next, x_n, &cache_n, &d_q_next, &mut grads.q[i], &mut scratch);

                for (d, qv) in d_probs.iter_mut().zip(q_next) {
                    *d += via_expectation * qv;
                }
            }
            if !sample_loss.is_finite() {
                return Err(Error::NonFinite { what: "loss", index: j });
            }
            total += sample_loss;

            softmax_backward(&probs, &mut d_probs);
            self.pi_nets[next_player].backward(sample.s_next, x_n, &cache_pi, &d_probs, &mut grads.pi[next_player], &mut scratch);
        }

        let mut penalty = 0.0;
        if objective.weight_decay != 0.0 {
            let wd = objective.weight_decay;
            let models = self.q_nets.iter().chain(&self.pi_nets);
            let grad_vecs = grads.q.iter_mut().chain(grads.pi.iter_mut());
            for (m, g) in models.zip(grad_vecs) {
                for (gk, wk) in g.iter_mut().zip(&m.params) {
                    *gk += wd * wk;
                    penalty += 0.5 * wd * wk * wk;
                }
            }
        }

        Ok((total * scale, penalty))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let mut net: NashNetwork = serde_json::from_str(text)?;
        if net.version != CHECKPOINT_VERSION {
            return Err(Error::InvalidConfig(format!("unsupported checkpoint version {}", net.version)));
        }
        let models = net.q_nets.iter().chain(&net.pi_nets);
        if net.q_nets.len() != net.n_players
            || net.pi_nets.len() != net.n_players
            || models.clone().any(|m| m.params.len() != m.shape.n_params() || m.shape.outputs() != net.n_actions)
        {
            return Err(Error::Dimension("checkpoint shapes are inconsistent".into()));
        }
        net.inputs = sparse_inputs(net.n_states, net.encoding);
        Ok(net)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::transition;
    use crate::eval::joint_values;
    use crate::game::{generate_garnet, GarnetSpec};
    use crate::residual::empirical_loss;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_game() -> TurnBasedGame {
        generate_garnet(&GarnetSpec { n_players: 2, n_states: 6, n_actions: 3, seed: 8, ..GarnetSpec::default() })
            .unwrap()
    }

    fn full_batch(game: &TurnBasedGame) -> Vec<BatchSample> {
        (0..game.n_states())
            .flat_map(|s| (0..game.n_actions()).map(move |a| (s, a)))
            .map(|(s, a)| transition(game, s, a))
            .collect()
    }

    fn objective(game: &TurnBasedGame, wd: f64) -> Objective {
        let n = game.n_players();
        Objective { gamma: game.gamma(), rho: vec![1.0 / n as f64; n], p: 2.0, weight_decay: wd }
    }

    #[test]
    fn zero_network_is_uniform() {
        let game = small_game();
        let net = NashNetwork::zeros(&game, Architecture::default(), EncodingMode::OneHot);
        for out in net.forward(2).unwrap() {
            assert!(out.q_values.iter().all(|&q| q == 0.0));
            assert!(out.strategy.iter().all(|&p| (p - 1.0 / 3.0).abs() < 1e-15));
        }
        let pi = net.extract_strategy(&game).unwrap();
        assert_eq!(pi, JointStrategy::uniform(6, 3));
    }

    #[test]
    fn bias_shift_keeps_strategy() {
        let game = small_game();
        let mut net = NashNetwork::new(&game, Architecture::default(), EncodingMode::OneHot, &mut ChaCha8Rng::seed_from_u64(3));
        let before = net.forward(4).unwrap();
        let m = &mut net.pi_nets_mut()[1];
        let n = m.params.len();
        for b in &mut m.params[n - 3..] {
            *b += 7.5;
        }
        let after = net.forward(4).unwrap();
        for (x, y) in before[1].strategy.iter().zip(&after[1].strategy) {
            assert!((x - y).abs() < 1e-14);
        }
    }

    #[test]
    fn non_finite_weights_rejected() {
        let game = small_game();
        let mut net = NashNetwork::zeros(&game, Architecture::default(), EncodingMode::OneHot);
        net.q_nets_mut()[0].params[0] = f64::NAN;
        assert!(net.forward(0).is_err());
        assert!(net.extract_strategy(&game).is_err());
    }

    #[test]
    fn network_loss_matches_table_loss() {
        let game = small_game();
        let batch = full_batch(&game);
        for (arch, enc) in [
            (Architecture::Network { hidden: 7 }, EncodingMode::OneHot),
            (Architecture::Network { hidden: 5 }, EncodingMode::Compact),
            (Architecture::Tabular, EncodingMode::OneHot),
        ] {
            let mut net = NashNetwork::new(&game, arch, enc, &mut ChaCha8Rng::seed_from_u64(5));
            if arch == Architecture::Tabular {
                let mut rng = ChaCha8Rng::seed_from_u64(6);
                for m in net.q_nets.iter_mut().chain(net.pi_nets.iter_mut()) {
                    m.params.iter_mut().for_each(|w| *w = rng.random_range(-1.0..1.0));
                }
            }
            let obj = objective(&game, 0.0);
            let lg = net.loss_and_gradients(&batch, &obj).unwrap();
            let table = empirical_loss(
                &batch,
                &net.q_table().unwrap(),
                &net.extract_strategy(&game).unwrap(),
                game.gamma(),
                &obj.rho,
                2.0,
            )
            .unwrap();
            assert!((lg.residual - table.mean).abs() < 1e-12, "{arch:?}");
        }
    }

    #[test]
    fn doubling_rewards_quadruples_zero_q_loss() {
        let game = small_game();
        let net = NashNetwork::zeros(&game, Architecture::Tabular, EncodingMode::OneHot);
        let batch = full_batch(&game);
        let doubled: Vec<BatchSample> = batch
            .iter()
            .map(|b| BatchSample { rewards: b.rewards.iter().map(|r| 2.0 * r).collect(), ..b.clone() })
            .collect();
        let obj = objective(&game, 0.0);
        let a = net.loss_and_gradients(&batch, &obj).unwrap().residual;
        let b = net.loss_and_gradients(&doubled, &obj).unwrap().residual;
        assert!((b - 4.0 * a).abs() < 1e-12 * b.max(1.0));
    }

    #[test]
    fn exact_reference_solution_has_zero_residual_gradient() {
        let game = TurnBasedGame::two_state_reference(0.5).unwrap();
        let pi = JointStrategy::deterministic(&[0, 1], 2).unwrap();
        let q = QTable::from_values(&game, &joint_values(&game, &pi).unwrap());
        // logits of ±40 put the strategy within e^-80 of the pure Nash
        let logits = vec![vec![40.0, -40.0], vec![-40.0, 40.0]];
        let net = NashNetwork::tabular_from(&game, &q, &logits).unwrap();
        let lg = net.loss_and_gradients(&full_batch(&game), &objective(&game, 0.0)).unwrap();
        assert!(lg.residual <= 1e-10);
        assert!(lg.gradients.norm() <= 1e-8);
    }

    #[test]
    fn checkpoint_round_trip() {
        let game = small_game();
        let net = NashNetwork::new(&game, Architecture::Network { hidden: 4 }, EncodingMode::OneHot, &mut ChaCha8Rng::seed_from_u64(1));
        let back = NashNetwork::from_json(&net.to_json().unwrap()).unwrap();
        assert_eq!(net, back);
        assert_eq!(net.forward(3).unwrap(), back.forward(3).unwrap());
    }

    #[test]
    fn empty_batch_rejected() {
        let game = small_game();
        let net = NashNetwork::zeros(&game, Architecture::Tabular, EncodingMode::OneHot);
        assert!(net.loss_and_gradients(&[], &objective(&game, 0.0)).is_err());
    }
}
