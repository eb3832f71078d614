//! Q-function Bellman backups and the empirical batch residual.
//!
//! For a sample `(s, a, r, s')` and player `i` the two targets are
//!
//! * joint: `r^i + γ E_{b∼π}[Q^i(s', b)]`
//! * best response: `r^i + γ max_{b^i} E_{b^{-i}∼π^{-i}}[Q^i(s', b^i, b^{-i})]`
//!
//! In a turn-based game only the controller of `s'` acts there, so the
//! expectation is a dot product with that player's strategy row and the
//! best-response target is either the plain max (when `i` controls `s'`) or
//! that same expectation.

use serde::{Deserialize, Serialize};

use crate::data::BatchSample;
use crate::error::{Error, Result};
use crate::eval::JointStrategy;
use crate::game::TurnBasedGame;

/// Tabular Q-functions for every player, indexed `(player, state, action)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QTable {
    n_players: usize,
    n_states: usize,
    n_actions: usize,
    values: Vec<f64>,
}

impl QTable {
    pub fn zeros(n_players: usize, n_states: usize, n_actions: usize) -> Self {
        QTable {
            n_players,
            n_states,
            n_actions,
            values: vec![0.0; n_players * n_states * n_actions],
        }
    }

    pub fn from_fn(
        n_players: usize,
        n_states: usize,
        n_actions: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Self {
        let mut values = Vec::with_capacity(n_players * n_states * n_actions);
        for i in 0..n_players {
            for s in 0..n_states {
                for a in 0..n_actions {
                    values.push(f(i, s, a));
                }
            }
        }
        QTable { n_players, n_states, n_actions, values }
    }

    /// `Q^i_π(s,a) = r^i(s,a) + γ v^i(next(s,a))` from a value family.
    pub fn from_values(game: &TurnBasedGame, values: &[Vec<f64>]) -> Self {
        QTable::from_fn(game.n_players(), game.n_states(), game.n_actions(), |i, s, a| {
            game.reward(i, s, a) + game.gamma() * values[i][game.next_state(s, a)]
        })
    }

    pub fn n_players(&self) -> usize {
        self.n_players
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    fn offset(&self, i: usize, s: usize) -> usize {
        (i * self.n_states + s) * self.n_actions
    }

    pub fn get(&self, i: usize, s: usize, a: usize) -> f64 {
        self.values[self.offset(i, s) + a]
    }

    pub fn set(&mut self, i: usize, s: usize, a: usize, value: f64) {
        let o = self.offset(i, s);
        self.values[o + a] = value;
    }

    pub fn row(&self, i: usize, s: usize) -> &[f64] {
        let o = self.offset(i, s);
        &self.values[o..o + self.n_actions]
    }

    pub fn row_mut(&mut self, i: usize, s: usize) -> &mut [f64] {
        let o = self.offset(i, s);
        &mut self.values[o..o + self.n_actions]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }
}

/// `Σ_b π(b|s') Q^i(s', b)`
pub fn expected_q_turnbased(q_row: &[f64], strategy_row: &[f64]) -> f64 {
    q_row.iter().zip(strategy_row).map(|(q, p)| q * p).sum()
}

/// Max entry and the lowest index attaining it.
pub fn max_with_index(q_row: &[f64]) -> (f64, usize) {
    let mut best = (q_row[0], 0);
    for (b, &q) in q_row.iter().enumerate().skip(1) {
        if q > best.0 {
            best = (q, b);
        }
    }
    best
}

/// Best-response backup value at `s'` for player `i` given the controller
/// of `s'`.
pub fn backup_star(q_row: &[f64], strategy_row: &[f64], next_controller: usize, i: usize) -> f64 {
    if next_controller == i {
        max_with_index(q_row).0
    } else {
        expected_q_turnbased(q_row, strategy_row)
    }
}

/// Player `i`'s Q-values at one state over the joint action space of a
/// simultaneous-move game, stored row-major with player 0's action as the
/// slowest axis.
#[derive(Clone, Debug, PartialEq)]
pub struct JointActionQ {
    shape: Vec<usize>,
    values: Vec<f64>,
}

impl JointActionQ {
    pub fn new(shape: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if shape.is_empty() || shape.contains(&0) || values.len() != expected {
            return Err(Error::Dimension(format!(
                "joint Q of shape {shape:?} needs {expected} values, got {}",
                values.len()
            )));
        }
        Ok(JointActionQ { shape, values })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }
}

/// Expectation of a joint-action Q under a product strategy profile.
///
/// Without `exclude` this is the full expectation `E_{b∼π}[Q(s', b)]`
/// returned as a one-element vector. With `exclude = Some(i)` every player
/// except `i` is marginalised out, leaving a vector over `b^i`.
pub fn expected_q_joint(q: &JointActionQ, profile: &[&[f64]], exclude: Option<usize>) -> Result<Vec<f64>> {
    if profile.len() != q.shape.len() {
        return Err(Error::Dimension(format!(
            "{} strategies for a {}-player Q",
            profile.len(),
            q.shape.len()
        )));
    }
    if let Some(i) = exclude {
        if i >= q.shape.len() {
            return Err(Error::OutOfRange { what: "player", index: i, limit: q.shape.len() });
        }
    }
    for (j, (pi, &n)) in profile.iter().zip(&q.shape).enumerate() {
        if pi.len() != n {
            return Err(Error::Dimension(format!("player {j} strategy has {} entries, expected {n}", pi.len())));
        }
    }

    // Contract axes from last to first. `kept` counts trailing axes that
    // survived (at most the excluded one).
    let mut values = q.values.clone();
    let mut kept = 1usize;
    for axis in (0..q.shape.len()).rev() {
        let n = q.shape[axis];
        if Some(axis) == exclude {
            kept *= n;
            continue;
        }
        let outer = values.len() / (n * kept);
        let mut next = vec![0.0; outer * kept];
        for o in 0..outer {
            for (b, &p) in profile[axis].iter().enumerate() {
                let src = &values[(o * n + b) * kept..(o * n + b + 1) * kept];
                for (dst, &x) in next[o * kept..(o + 1) * kept].iter_mut().zip(src) {
                    *dst += p * x;
                }
            }
        }
        values = next;
    }
    Ok(values)
}

/// The two residuals of one sample for one player, each raised to `p`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResidualTerms {
    pub d_star: f64,
    pub d_joint: f64,
}

/// Backup target `r^i + γ·continuation` read off one logged transition.
pub fn sample_backup(
    sample: &BatchSample,
    q: &QTable,
    strategy: &JointStrategy,
    gamma: f64,
    i: usize,
    mode: BackupMode,
) -> f64 {
    let q_next = q.row(i, sample.s_next);
    let pi_next = strategy.row(sample.s_next);
    let continuation = match mode {
        BackupMode::Joint => expected_q_turnbased(q_next, pi_next),
        BackupMode::Star => backup_star(q_next, pi_next, sample.controller_next, i),
    };
    sample.rewards[i] + gamma * continuation
}

/// Signed residuals `(best-response target - Q, joint target - Q)`.
pub fn sample_residuals(
    sample: &BatchSample,
    q: &QTable,
    strategy: &JointStrategy,
    gamma: f64,
    i: usize,
) -> (f64, f64) {
    let q_sa = q.get(i, sample.s, sample.a);
    (
        sample_backup(sample, q, strategy, gamma, i, BackupMode::Star) - q_sa,
        sample_backup(sample, q, strategy, gamma, i, BackupMode::Joint) - q_sa,
    )
}

#[derive(Clone, Debug)]
pub struct EmpiricalLoss {
    /// Unnormalised sum over samples.
    pub total: f64,
    /// `total / k`.
    pub mean: f64,
    /// `terms[j][i]` for sample `j` and player `i`.
    pub terms: Vec<Vec<ResidualTerms>>,
}

/// Empirical Bellman residual of a Q family and joint strategy on a batch
/// with deterministic dynamics.
pub fn empirical_loss(
    batch: &[BatchSample],
    q: &QTable,
    strategy: &JointStrategy,
    gamma: f64,
    rho: &[f64],
    p: f64,
) -> Result<EmpiricalLoss> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if rho.len() != q.n_players() {
        return Err(Error::Dimension(format!("rho has {} entries for {} players", rho.len(), q.n_players())));
    }
    if strategy.n_states() != q.n_states() || strategy.n_actions() != q.n_actions() {
        return Err(Error::Dimension("strategy and Q table disagree on shape".into()));
    }
    let mut total = 0.0;
    let mut terms = Vec::with_capacity(batch.len());
    for sample in batch {
        let row: Vec<ResidualTerms> = (0..q.n_players())
            .map(|i| {
                let (star, joint) = sample_residuals(sample, q, strategy, gamma, i);
                ResidualTerms { d_star: star.abs().powf(p), d_joint: joint.abs().powf(p) }
            })
            .collect();
        // fixed summation order: samples in batch order, players ascending
        for (t, w) in row.iter().zip(rho) {
            total += w * (t.d_star + t.d_joint);
        }
        terms.push(row);
    }
    Ok(EmpiricalLoss { total, mean: total / batch.len() as f64, terms })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BackupMode {
    Star,
    Joint,
}

/// Known-kernel Q backup `B^i_π Q(s,a)` or `B*^i_π Q(s,a)`. The generator
/// only emits deterministic games, so the kernel sum has a single term.
pub fn model_based_backup(
    game: &TurnBasedGame,
    s: usize,
    a: usize,
    q: &QTable,
    strategy: &JointStrategy,
    i: usize,
    mode: BackupMode,
) -> f64 {
    let next = game.next_state(s, a);
    let q_next = q.row(i, next);
    let pi_next = strategy.row(next);
    let continuation = match mode {
        BackupMode::Joint => expected_q_turnbased(q_next, pi_next),
        BackupMode::Star => backup_star(q_next, pi_next, game.controller(next), i),
    };
    game.reward(i, s, a) + game.gamma() * continuation
}
