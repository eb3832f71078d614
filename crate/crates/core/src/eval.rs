//! Exact game-theoretic oracles over a known game.
//!
//! Everything here works on the full model: induced kernels and rewards of a
//! joint strategy, joint values by direct linear solve, best responses by
//! policy iteration, the value-space Bellman operators and the residual
//! bound machinery relating them to the distance from a Nash equilibrium.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game::TurnBasedGame;

const ROW_SUM_TOL: f64 = 1e-9;
const SOLVE_RESIDUAL_TOL: f64 = 1e-9;
const IMPROVEMENT_TOL: f64 = 1e-12;
/// Tolerance used when comparing values for Nash equivalence.
pub const EQUIVALENCE_TOL: f64 = 1e-8;
/// Slack on the residual bound check.
pub const LEMMA_TOL: f64 = 1e-9;

/// Per-state distribution over the controlling player's actions.
///
/// In a turn-based game the joint strategy at `s` is exactly the strategy of
/// `controller(s)` at `s`, so one row per state describes every `π^i` at once.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JointStrategy {
    rows: Vec<Vec<f64>>,
}

impl JointStrategy {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        let strategy = JointStrategy { rows };
        strategy.validate()?;
        Ok(strategy)
    }

    fn validate(&self) -> Result<()> {
        let na = self.rows.first().map_or(0, Vec::len);
        if na == 0 {
            return Err(Error::InvalidStrategy("strategy has no actions".into()));
        }
        for (s, row) in self.rows.iter().enumerate() {
            if row.len() != na {
                return Err(Error::InvalidStrategy(format!("row {s} has {} entries, expected {na}", row.len())));
            }
            if row.iter().any(|&p| !(p >= 0.0 && p.is_finite())) {
                return Err(Error::InvalidStrategy(format!("row {s} has a negative or non-finite entry")));
            }
            let total: f64 = row.iter().sum();
            if (total - 1.0).abs() > ROW_SUM_TOL {
                return Err(Error::InvalidStrategy(format!("row {s} sums to {total}")));
            }
        }
        Ok(())
    }

    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        JointStrategy {
            rows: vec![vec![1.0 / n_actions as f64; n_actions]; n_states],
        }
    }

    /// Pure strategy playing `actions[s]` in state `s`.
    pub fn deterministic(actions: &[usize], n_actions: usize) -> Result<Self> {
        let rows = actions
            .iter()
            .map(|&a| {
                if a >= n_actions {
                    return Err(Error::OutOfRange { what: "action", index: a, limit: n_actions });
                }
                let mut row = vec![0.0; n_actions];
                row[a] = 1.0;
                Ok(row)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(JointStrategy { rows })
    }

    pub fn n_states(&self) -> usize {
        self.rows.len()
    }

    pub fn n_actions(&self) -> usize {
        self.rows[0].len()
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.rows[s]
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    /// Copy of this strategy with row `s` replaced.
    pub fn with_row(&self, s: usize, row: Vec<f64>) -> Result<Self> {
        let mut rows = self.rows.clone();
        rows[s] = row;
        JointStrategy::new(rows)
    }

    pub fn check_against(&self, game: &TurnBasedGame) -> Result<()> {
        if self.n_states() != game.n_states() || self.n_actions() != game.n_actions() {
            return Err(Error::Dimension(format!(
                "strategy is {} x {}, game is {} x {}",
                self.n_states(),
                self.n_actions(),
                game.n_states(),
                game.n_actions()
            )));
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let strategy: JointStrategy = serde_json::from_str(&text)?;
        strategy.validate()?;
        Ok(strategy)
    }
}

/// State-to-state kernel `P_π(s'|s) = Σ_a π(a|s) [next(s,a) = s']`.
pub fn induced_kernel(game: &TurnBasedGame, strategy: &JointStrategy) -> DMatrix<f64> {
    let ns = game.n_states();
    let mut kernel = DMatrix::zeros(ns, ns);
    for s in 0..ns {
        for (a, &p) in strategy.row(s).iter().enumerate() {
            kernel[(s, game.next_state(s, a))] += p;
        }
    }
    kernel
}

/// `r^i_π(s) = Σ_a π(a|s) r^i(s,a)`.
pub fn induced_reward(game: &TurnBasedGame, strategy: &JointStrategy, i: usize) -> Vec<f64> {
    (0..game.n_states())
        .map(|s| {
            strategy
                .row(s)
                .iter()
                .zip(&game.rewards_of(i)[s])
                .map(|(p, r)| p * r)
                .sum()
        })
        .collect()
}

/// Solves `(I - γP) v = r` by LU factorization.
fn solve_discounted(gamma: f64, kernel: &DMatrix<f64>, reward: &[f64]) -> Result<Vec<f64>> {
    let n = reward.len();
    let system = DMatrix::identity(n, n) - kernel * gamma;
    let rhs = DVector::from_column_slice(reward);
    let v = system
        .clone()
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Solver("singular (I - γP) system".into()))?;
    let residual = (&system * &v - &rhs).amax();
    if !(residual <= SOLVE_RESIDUAL_TOL) {
        return Err(Error::Solver(format!("residual {residual:e} exceeds {SOLVE_RESIDUAL_TOL:e}")));
    }
    Ok(v.as_slice().to_vec())
}

/// Value `v^i_π` of the joint strategy for player `i`.
pub fn joint_value(game: &TurnBasedGame, strategy: &JointStrategy, i: usize) -> Result<Vec<f64>> {
    strategy.check_against(game)?;
    let kernel = induced_kernel(game, strategy);
    solve_discounted(game.gamma(), &kernel, &induced_reward(game, strategy, i))
}

/// Fixed point of the joint operator evaluated at an arbitrary discount.
pub(crate) fn joint_value_with_gamma(
    game: &TurnBasedGame,
    strategy: &JointStrategy,
    i: usize,
    gamma: f64,
) -> Result<Vec<f64>> {
    strategy.check_against(game)?;
    solve_discounted(gamma, &induced_kernel(game, strategy), &induced_reward(game, strategy, i))
}

/// `v^i_π` for every player.
pub fn joint_values(game: &TurnBasedGame, strategy: &JointStrategy) -> Result<Vec<Vec<f64>>> {
    strategy.check_against(game)?;
    let kernel = induced_kernel(game, strategy);
    (0..game.n_players())
        .map(|i| solve_discounted(game.gamma(), &kernel, &induced_reward(game, strategy, i)))
        .collect()
}

/// Player `i`'s best response to the others' strategies.
#[derive(Clone, Debug)]
pub struct BestResponse {
    /// `v*^i_{π^{-i}}`
    pub value: Vec<f64>,
    /// Chosen action at every state controlled by `i`, `None` elsewhere.
    pub actions: Vec<Option<usize>>,
    /// The joint strategy `(π*^i, π^{-i})`.
    pub strategy: JointStrategy,
    pub iterations: u64,
}

fn policy_count_cap(n_actions: usize, owned: usize) -> u64 {
    (n_actions as u64)
        .checked_pow(owned as u32)
        .unwrap_or(u64::MAX)
        .max(1)
}

/// One-step lookahead `r^i(s,a) + γ v(next(s,a))` for every action.
fn lookahead(game: &TurnBasedGame, i: usize, s: usize, v: &[f64], gamma: f64) -> Vec<f64> {
    (0..game.n_actions())
        .map(|a| game.reward(i, s, a) + gamma * v[game.next_state(s, a)])
        .collect()
}

/// Lowest action index whose value is within tolerance of the maximum.
fn lowest_argmax(q: &[f64]) -> usize {
    let best = q.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let tol = IMPROVEMENT_TOL * (1.0 + best.abs());
    q.iter().position(|&x| x >= best - tol).unwrap_or(0)
}

/// Exact best response of player `i` by policy iteration on the MDP induced
/// by `π^{-i}`. States controlled by other players become chance nodes that
/// follow their strategy; player `i` picks a pure action everywhere else.
pub fn best_response(game: &TurnBasedGame, strategy: &JointStrategy, i: usize) -> Result<BestResponse> {
    strategy.check_against(game)?;
    let (ns, na) = (game.n_states(), game.n_actions());
    let owned: Vec<usize> = (0..ns).filter(|&s| game.controller(s) == i).collect();
    let cap = policy_count_cap(na, owned.len());

    let mut actions = vec![0usize; ns];
    let mut iterations = 0u64;
    loop {
        iterations += 1;
        let mut rows = strategy.rows().to_vec();
        for &s in &owned {
            rows[s] = one_hot(actions[s], na);
        }
        let current = JointStrategy { rows };
        let value = joint_value(game, &current, i)?;

        let mut changed = false;
        for &s in &owned {
            let q = lookahead(game, i, s, &value, game.gamma());
            let best = lowest_argmax(&q);
            if best != actions[s] {
                actions[s] = best;
                changed = true;
            }
        }
        if !changed {
            let actions = (0..ns)
                .map(|s| (game.controller(s) == i).then_some(actions[s]))
                .collect();
            return Ok(BestResponse { value, actions, strategy: current, iterations });
        }
        if iterations >= cap {
            return Err(Error::PolicyIterationCap(cap));
        }
    }
}

fn one_hot(a: usize, n: usize) -> Vec<f64> {
    let mut row = vec![0.0; n];
    row[a] = 1.0;
    row
}

/// Relative distance `‖v^i_π - v*^i‖₂ / ‖v*^i‖₂` for each player, `None`
/// when the best-response value is identically zero.
pub fn error_vs_best_response(game: &TurnBasedGame, strategy: &JointStrategy) -> Result<Vec<Option<f64>>> {
    let values = joint_values(game, strategy)?;
    (0..game.n_players())
        .map(|i| {
            let br = best_response(game, strategy, i)?;
            Ok(relative_gap(&values[i], &br.value))
        })
        .collect()
}

fn relative_gap(value: &[f64], best: &[f64]) -> Option<f64> {
    let norm = best.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 {
        return None;
    }
    let diff = value
        .iter()
        .zip(best)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    Some(diff / norm)
}

pub(crate) fn apply_t_joint_with(
    game: &TurnBasedGame,
    gamma: f64,
    v: &[f64],
    strategy: &JointStrategy,
    i: usize,
) -> Vec<f64> {
    (0..game.n_states())
        .map(|s| {
            strategy
                .row(s)
                .iter()
                .enumerate()
                .map(|(a, p)| p * (game.reward(i, s, a) + gamma * v[game.next_state(s, a)]))
                .sum()
        })
        .collect()
}

pub(crate) fn apply_t_star_with(
    game: &TurnBasedGame,
    gamma: f64,
    v: &[f64],
    strategy: &JointStrategy,
    i: usize,
) -> Vec<f64> {
    (0..game.n_states())
        .map(|s| {
            if game.controller(s) == i {
                lookahead(game, i, s, v, gamma)
                    .into_iter()
                    .fold(f64::NEG_INFINITY, f64::max)
            } else {
                strategy
                    .row(s)
                    .iter()
                    .enumerate()
                    .map(|(a, p)| p * (game.reward(i, s, a) + gamma * v[game.next_state(s, a)]))
                    .sum()
            }
        })
        .collect()
}

/// `T^i_π v = r^i_π + γ P_π v`.
pub fn apply_t_joint(game: &TurnBasedGame, v: &[f64], strategy: &JointStrategy, i: usize) -> Vec<f64> {
    apply_t_joint_with(game, game.gamma(), v, strategy, i)
}

/// `T*^i_{π^{-i}} v`: max over player `i`'s actions at its own states, the
/// expectation under `π^{-i}` elsewhere.
pub fn apply_t_star(game: &TurnBasedGame, v: &[f64], strategy: &JointStrategy, i: usize) -> Vec<f64> {
    apply_t_star_with(game, game.gamma(), v, strategy, i)
}

/// State and player weightings plus the norm exponent for the residual
/// bound.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeasureSet {
    pub mu: Vec<f64>,
    pub nu: Vec<f64>,
    pub rho: Vec<f64>,
    pub p: f64,
}

impl MeasureSet {
    /// Uniform μ, ν, ρ with `p = 2`.
    pub fn uniform(n_states: usize, n_players: usize) -> Self {
        MeasureSet {
            mu: vec![1.0 / n_states as f64; n_states],
            nu: vec![1.0 / n_states as f64; n_states],
            rho: vec![1.0 / n_players as f64; n_players],
            p: 2.0,
        }
    }

    /// Hölder conjugate `p' = p / (p - 1)`.
    pub fn p_prime(&self) -> f64 {
        self.p / (self.p - 1.0)
    }

    pub fn validate(&self, game: &TurnBasedGame) -> Result<()> {
        fn distribution(name: &str, d: &[f64], len: usize) -> Result<()> {
            if d.len() != len {
                return Err(Error::Dimension(format!("{name} has {} entries, expected {len}", d.len())));
            }
            if d.iter().any(|&x| !(x >= 0.0 && x.is_finite())) {
                return Err(Error::InvalidConfig(format!("{name} has a negative entry")));
            }
            let total: f64 = d.iter().sum();
            if (total - 1.0).abs() > ROW_SUM_TOL {
                return Err(Error::InvalidConfig(format!("{name} sums to {total}")));
            }
            Ok(())
        }
        distribution("mu", &self.mu, game.n_states())?;
        distribution("nu", &self.nu, game.n_states())?;
        distribution("rho", &self.rho, game.n_players())?;
        if !(self.p > 1.0 && self.p.is_finite()) {
            return Err(Error::InvalidConfig(format!("p must be > 1, got {}", self.p)));
        }
        if self.mu.iter().zip(&self.nu).any(|(&m, &n)| m > 0.0 && n == 0.0) {
            return Err(Error::InvalidConfig("nu must be positive wherever mu is".into()));
        }
        Ok(())
    }
}

/// `Σ_s w(s) |g(s)|^p`
fn weighted_pow_norm(weights: &[f64], g: &[f64], p: f64) -> f64 {
    weights.iter().zip(g).map(|(w, x)| w * x.abs().powf(p)).sum()
}

fn diff(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

/// `f_{ν,ρ,p}(π, v) = Σ_i ρ(i) (‖T*^i v^i - v^i‖^p_{ν,p} + ‖T^i_π v^i - v^i‖^p_{ν,p})`.
pub fn loss_value_space(
    game: &TurnBasedGame,
    values: &[Vec<f64>],
    strategy: &JointStrategy,
    measures: &MeasureSet,
) -> Result<f64> {
    strategy.check_against(game)?;
    measures.validate(game)?;
    if values.len() != game.n_players() || values.iter().any(|v| v.len() != game.n_states()) {
        return Err(Error::Dimension("value family must be n_players x n_states".into()));
    }
    Ok((0..game.n_players())
        .map(|i| {
            let v = &values[i];
            let star = diff(&apply_t_star(game, v, strategy, i), v);
            let joint = diff(&apply_t_joint(game, v, strategy, i), v);
            measures.rho[i]
                * (weighted_pow_norm(&measures.nu, &star, measures.p)
                    + weighted_pow_norm(&measures.nu, &joint, measures.p))
        })
        .sum())
}

/// Sup-norm of the Radon–Nikodym derivative of the discounted occupancy
/// measure `μᵀ(1-γ)(I-γP_π)^{-1}` with respect to `ν`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Concentrability {
    Finite(f64),
    /// The occupancy puts mass on a state where `ν` vanishes.
    Infinite,
}

impl Concentrability {
    pub fn value(self) -> f64 {
        match self {
            Concentrability::Finite(c) => c,
            Concentrability::Infinite => f64::INFINITY,
        }
    }
}

/// Discounted occupancy `(1-γ) μᵀ (I-γP_π)^{-1}` as a vector over states.
pub fn occupancy(game: &TurnBasedGame, strategy: &JointStrategy, mu: &[f64]) -> Result<Vec<f64>> {
    let kernel = induced_kernel(game, strategy);
    let gamma = game.gamma();
    // d (I - γP) = (1-γ) μ  <=>  (I - γP)ᵀ dᵀ = (1-γ) μᵀ
    let rhs: Vec<f64> = mu.iter().map(|m| (1.0 - gamma) * m).collect();
    solve_discounted(gamma, &kernel.transpose(), &rhs)
}

pub fn concentrability(
    measures: &MeasureSet,
    game: &TurnBasedGame,
    strategy: &JointStrategy,
) -> Result<Concentrability> {
    strategy.check_against(game)?;
    measures.validate(game)?;
    let d = occupancy(game, strategy, &measures.mu)?;
    let mut worst: f64 = 0.0;
    for (&mass, &weight) in d.iter().zip(&measures.nu) {
        if weight == 0.0 {
            if mass > 1e-15 {
                return Ok(Concentrability::Infinite);
            }
            continue;
        }
        worst = worst.max(mass / weight);
    }
    Ok(Concentrability::Finite(worst))
}

#[derive(Clone, Debug, Serialize)]
pub struct Lemma1Player {
    /// `‖v*^i - v^i_π‖_{μ,p}`
    pub lhs: f64,
    pub rhs: f64,
    pub c_best: Concentrability,
    pub c_joint: Concentrability,
    pub holds: bool,
    /// True when one of the coefficients is infinite and the bound is vacuous.
    pub vacuous: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct Lemma1Report {
    pub players: Vec<Lemma1Player>,
}

impl Lemma1Report {
    pub fn holds(&self) -> bool {
        self.players.iter().all(|p| p.holds)
    }
}

/// Checks, per player, that the distance between the best-response value
/// and the joint value is bounded by the two Bellman residuals of `v`,
/// scaled by the concentrability of `π` and of the best response.
pub fn check_lemma1(
    game: &TurnBasedGame,
    values: &[Vec<f64>],
    strategy: &JointStrategy,
    measures: &MeasureSet,
) -> Result<Lemma1Report> {
    lemma1_with_operator_gamma(game, values, strategy, measures, game.gamma())
}

/// As [`check_lemma1`] but with the residual operators evaluated at an
/// arbitrary discount. Only the verification harness uses a value other
/// than the game's own, to confirm that a broken operator is detected.
pub(crate) fn lemma1_with_operator_gamma(
    game: &TurnBasedGame,
    values: &[Vec<f64>],
    strategy: &JointStrategy,
    measures: &MeasureSet,
    operator_gamma: f64,
) -> Result<Lemma1Report> {
    strategy.check_against(game)?;
    measures.validate(game)?;
    if values.len() != game.n_players() || values.iter().any(|v| v.len() != game.n_states()) {
        return Err(Error::Dimension("value family must be n_players x n_states".into()));
    }
    let (p, p_prime) = (measures.p, measures.p_prime());
    let gamma = game.gamma();
    let joint = joint_values(game, strategy)?;
    let c_joint = concentrability(measures, game, strategy)?;

    let players = (0..game.n_players())
        .map(|i| {
            let br = best_response(game, strategy, i)?;
            let lhs = weighted_pow_norm(&measures.mu, &diff(&br.value, &joint[i]), p).powf(1.0 / p);
            let c_best = concentrability(measures, game, &br.strategy)?;

            let v = &values[i];
            let star = diff(&apply_t_star_with(game, operator_gamma, v, strategy, i), v);
            let own = diff(&apply_t_joint_with(game, operator_gamma, v, strategy, i), v);
            let residual = weighted_pow_norm(&measures.nu, &star, p) + weighted_pow_norm(&measures.nu, &own, p);

            let (rhs, vacuous) = match (c_best, c_joint) {
                (Concentrability::Finite(cb), Concentrability::Finite(cj)) => {
                    let coeff = (cb.powf(p_prime / p) + cj.powf(p_prime / p)).powf(1.0 / p_prime);
                    (coeff * residual.powf(1.0 / p) / (1.0 - gamma), false)
                }
                _ => (f64::INFINITY, true),
            };
            Ok(Lemma1Player {
                lhs,
                rhs,
                c_best,
                c_joint,
                holds: vacuous || lhs <= rhs + LEMMA_TOL,
                vacuous,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Lemma1Report { players })
}

/// Both characterisations of a Nash equilibrium, computed independently.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EquivalenceReport {
    /// Every player's joint value equals its best-response value.
    pub by_values: bool,
    /// With `v^i = v^i_π`, both `T^i_π v^i = v^i` and `T*^i v^i = v^i`.
    pub by_operators: bool,
}

impl EquivalenceReport {
    pub fn agree(&self) -> bool {
        self.by_values == self.by_operators
    }

    pub fn is_nash(&self) -> bool {
        self.by_values && self.by_operators
    }
}

pub fn check_definition_equivalence(game: &TurnBasedGame, strategy: &JointStrategy) -> Result<EquivalenceReport> {
    let values = joint_values(game, strategy)?;
    let close = |a: &[f64], b: &[f64]| a.iter().zip(b).all(|(x, y)| (x - y).abs() <= EQUIVALENCE_TOL);

    let mut by_values = true;
    for (i, v) in values.iter().enumerate() {
        let br = best_response(game, strategy, i)?;
        by_values &= close(v, &br.value);
    }

    let by_operators = values.iter().enumerate().all(|(i, v)| {
        close(&apply_t_joint(game, v, strategy, i), v) && close(&apply_t_star(game, v, strategy, i), v)
    });

    Ok(EquivalenceReport { by_values, by_operators })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game::{generate_garnet, GarnetSpec};

    fn reference() -> TurnBasedGame {
        TurnBasedGame::two_state_reference(0.5).unwrap()
    }

    fn nash() -> JointStrategy {
        JointStrategy::deterministic(&[0, 1], 2).unwrap()
    }

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    fn single_state_loop(gamma: f64) -> TurnBasedGame {
        let spec = GarnetSpec { n_players: 1, n_states: 2, n_actions: 1, gamma, ..GarnetSpec::default() };
        TurnBasedGame::new(spec, vec![0, 0], vec![vec![0], vec![1]], vec![vec![vec![1.0], vec![1.0]]], vec![0])
            .unwrap()
    }

    #[test]
    fn strategy_validation() {
        assert!(JointStrategy::new(vec![vec![0.5, 0.4]]).is_err());
        assert!(JointStrategy::new(vec![vec![1.5, -0.5]]).is_err());
        assert!(JointStrategy::new(vec![vec![1.0], vec![0.5, 0.5]]).is_err());
        assert!(JointStrategy::new(vec![vec![0.3, 0.7]]).is_ok());
        assert!(JointStrategy::deterministic(&[2], 2).is_err());
    }

    #[test]
    fn kernel_of_reference_nash_is_identity() {
        let g = reference();
        let k = induced_kernel(&g, &nash());
        assert_eq!(k, DMatrix::identity(2, 2));
        assert_eq!(induced_reward(&g, &nash(), 0), vec![1.0, 0.0]);
    }

    #[test]
    fn uniform_kernel_splits_mass() {
        let g = reference();
        let k = induced_kernel(&g, &JointStrategy::uniform(2, 2));
        assert_eq!(k[(0, 0)], 0.5);
        assert_eq!(k[(0, 1)], 0.5);
        for s in 0..2 {
            assert!((k.row(s).sum() - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn joint_value_cases() {
        let g = reference();
        let v = joint_values(&g, &nash()).unwrap();
        assert!(close(&v[0], &[2.0, 0.0], 1e-12));
        assert!(close(&v[1], &[0.0, 2.0], 1e-12));

        let g0 = g.with_gamma(0.0).unwrap();
        let pi = JointStrategy::uniform(2, 2);
        assert_eq!(joint_value(&g0, &pi, 0).unwrap(), induced_reward(&g0, &pi, 0));

        let loop_game = single_state_loop(0.9);
        let v = joint_value(&loop_game, &JointStrategy::uniform(2, 1), 0).unwrap();
        assert!((v[0] - 10.0).abs() < 1e-10);
    }

    #[test]
    fn best_response_on_reference() {
        let g = reference();
        let br = best_response(&g, &nash(), 0).unwrap();
        assert!(close(&br.value, &[2.0, 0.0], 1e-12));
        assert_eq!(br.actions, vec![Some(0), None]);

        let bad = JointStrategy::deterministic(&[1, 1], 2).unwrap();
        let v = joint_value(&g, &bad, 0).unwrap();
        let br = best_response(&g, &bad, 0).unwrap();
        assert!(close(&v, &[0.0, 0.0], 1e-12));
        assert!(close(&br.value, &[2.0, 0.0], 1e-12));
    }

    #[test]
    fn error_vs_best_response_on_reference() {
        let g = reference();
        let err = error_vs_best_response(&g, &nash()).unwrap();
        assert!(err.iter().all(|e| e.unwrap().abs() < 1e-12));
        let bad = JointStrategy::deterministic(&[1, 1], 2).unwrap();
        let err = error_vs_best_response(&g, &bad).unwrap();
        assert!((err[0].unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_best_response_is_flagged() {
        let g = reference().map_rewards(1, |_| 0.0).unwrap();
        let err = error_vs_best_response(&g, &nash()).unwrap();
        assert!(err[0].is_some());
        assert!(err[1].is_none());
    }

    #[test]
    fn fixed_points() {
        let g = generate_garnet(&GarnetSpec { n_states: 8, n_actions: 3, n_players: 2, seed: 4, ..GarnetSpec::default() })
            .unwrap();
        let pi = JointStrategy::uniform(8, 3);
        for i in 0..2 {
            let v = joint_value(&g, &pi, i).unwrap();
            assert!(close(&apply_t_joint(&g, &v, &pi, i), &v, 1e-10));
            let br = best_response(&g, &pi, i).unwrap();
            assert!(close(&apply_t_star(&g, &br.value, &pi, i), &br.value, 1e-9));
        }
        let g0 = g.with_gamma(0.0).unwrap();
        let junk = vec![3.0; 8];
        assert_eq!(apply_t_joint(&g0, &junk, &pi, 0), induced_reward(&g0, &pi, 0));
    }

    #[test]
    fn value_space_loss_cases() {
        let g = reference();
        let v = joint_values(&g, &nash()).unwrap();
        let m = MeasureSet::uniform(2, 2);
        assert!(loss_value_space(&g, &v, &nash(), &m).unwrap().abs() < 1e-12);

        // Shifting the fixed point by +1 leaves a residual of (γ-1) in every
        // state of both operators for a single-action loop.
        let loop_game = single_state_loop(0.9);
        let pi = JointStrategy::uniform(2, 1);
        let v = joint_value(&loop_game, &pi, 0).unwrap();
        let shifted: Vec<f64> = v.iter().map(|x| x + 1.0).collect();
        let joint = diff(&apply_t_joint(&loop_game, &shifted, &pi, 0), &shifted);
        let term = weighted_pow_norm(&[0.5, 0.5], &joint, 2.0);
        assert!((term - 0.01).abs() < 1e-12);
        let m = MeasureSet::uniform(2, 1);
        let total = loss_value_space(&loop_game, &[shifted], &pi, &m).unwrap();
        assert!((total - 0.02).abs() < 1e-12);
    }

    #[test]
    fn concentrability_cases() {
        let g = reference();
        let m = MeasureSet::uniform(2, 2);
        let c = concentrability(&m, &g, &nash()).unwrap();
        assert!((c.value() - 1.0).abs() < 1e-12);

        let c = concentrability(&m, &g, &JointStrategy::deterministic(&[1, 1], 2).unwrap()).unwrap();
        assert!(c.value() >= 1.0);

        let skewed = MeasureSet { nu: vec![1.0, 0.0], mu: vec![1.0, 0.0], ..m };
        let c = concentrability(&skewed, &g, &JointStrategy::deterministic(&[1, 1], 2).unwrap()).unwrap();
        assert_eq!(c, Concentrability::Infinite);
    }

    #[test]
    fn lemma_at_nash_is_tight() {
        let g = reference();
        let v = joint_values(&g, &nash()).unwrap();
        let report = check_lemma1(&g, &v, &nash(), &MeasureSet::uniform(2, 2)).unwrap();
        for p in &report.players {
            assert!(p.lhs.abs() < 1e-12);
            assert!(p.rhs.abs() < 1e-9);
        }
        assert!(report.holds());
    }

    #[test]
    fn equivalence_on_reference() {
        let g = reference();
        let r = check_definition_equivalence(&g, &nash()).unwrap();
        assert_eq!(r, EquivalenceReport { by_values: true, by_operators: true });
        let bad = JointStrategy::deterministic(&[1, 1], 2).unwrap();
        let r = check_definition_equivalence(&g, &bad).unwrap();
        assert_eq!(r, EquivalenceReport { by_values: false, by_operators: false });
    }

    #[test]
    fn measure_validation() {
        let g = reference();
        let mut m = MeasureSet::uniform(2, 2);
        m.p = 1.0;
        assert!(m.validate(&g).is_err());
        let m = MeasureSet { mu: vec![0.5, 0.5], nu: vec![1.0, 0.0], ..MeasureSet::uniform(2, 2) };
        assert!(m.validate(&g).is_err());
    }
}
