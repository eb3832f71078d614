//! Self-checks of the exact oracles, the sample estimator and the backprop
//! code on small random instances. Every violation carries a JSON dump of
//! the instance that produced it.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::derive_seed;
use crate::data::{sample_batch, transition, Split};
use crate::error::Result;
use crate::eval::{
    best_response, check_definition_equivalence, joint_value_with_gamma, joint_values, lemma1_with_operator_gamma,
    JointStrategy, MeasureSet,
};
use crate::game::{generate_garnet, EncodingMode, GarnetSpec, TurnBasedGame};
use crate::learner::{Architecture, NashNetwork, Objective};
use crate::residual::{model_based_backup, sample_backup, BackupMode, QTable};

/// Tolerance between sample and model-based backups.
const ESTIMATOR_TOL: f64 = 1e-12;
const GRADIENT_TOL: f64 = 1e-4;
const FD_STEP: f64 = 1e-5;
const MIN_GRADIENT_WEIGHTS: usize = 500;
/// Required top-2 gap in the bootstrapped Q rows, far above what a step of
/// `FD_STEP` on one weight can move.
const MIN_ARGMAX_MARGIN: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifyConfig {
    pub seed: u64,
    pub lemma_instances: usize,
    pub equivalence_games: usize,
    pub estimator_probes: usize,
    /// Weights sampled for the finite-difference check; a few are skipped
    /// near ReLU kinks, so this is set above the required minimum.
    pub gradient_weights: usize,
    /// Evaluate the residual operators with a sign-flipped discount. The
    /// Lemma 1 check is expected to fail in this mode.
    pub corrupt_operator: bool,
    /// Draw Lemma 1 instances and estimator probes from this game instead
    /// of random small ones.
    pub game: Option<TurnBasedGame>,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        VerifyConfig {
            seed: 0,
            lemma_instances: 100,
            equivalence_games: 20,
            estimator_probes: 10_000,
            gradient_weights: 800,
            corrupt_operator: false,
            game: None,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct CheckOutcome {
    pub name: String,
    pub cases: usize,
    pub passed: bool,
    pub summary: String,
    pub elapsed_secs: f64,
    /// Instances that violated the check.
    pub failures: Vec<Value>,
}

#[derive(Clone, Debug, Serialize)]
pub struct VerifyReport {
    pub seed: u64,
    pub checks: Vec<CheckOutcome>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn check(&self, name: &str) -> Option<&CheckOutcome> {
        self.checks.iter().find(|c| c.name == name)
    }
}

pub fn verify(config: &VerifyConfig) -> Result<VerifyReport> {
    if let Some(game) = &config.game {
        game.spec().validate()?;
    }
    let checks = vec![
        timed(|| lemma1(config))?,
        timed(|| equivalence(config))?,
        timed(|| estimator(config))?,
        timed(|| gradients(config))?,
    ];
    Ok(VerifyReport { seed: config.seed, checks })
}

fn timed(f: impl FnOnce() -> Result<CheckOutcome>) -> Result<CheckOutcome> {
    let start = Instant::now();
    let mut out = f()?;
    out.elapsed_secs = start.elapsed().as_secs_f64();
    Ok(out)
}

fn small_game(seed: u64, n_players: usize, n_states: usize, n_actions: usize) -> Result<TurnBasedGame> {
    generate_garnet(&GarnetSpec { n_players, n_states, n_actions, seed, ..GarnetSpec::default() })
}

fn distribution(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    let w: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..1.0)).collect();
    let total: f64 = w.iter().sum();
    w.into_iter().map(|x| x / total).collect()
}

fn random_strategy(rng: &mut impl Rng, n_states: usize, n_actions: usize) -> Result<JointStrategy> {
    JointStrategy::new((0..n_states).map(|_| distribution(rng, n_actions)).collect())
}

/// Strategy greedy for each state's controller, iterated against the values
/// at discount `gamma` until it stops changing (or a fixed budget runs out).
/// When it settles, both residual operators at `gamma` vanish.
fn greedy_fixed_point(
    game: &TurnBasedGame,
    gamma: f64,
    start: JointStrategy,
) -> Result<(JointStrategy, Vec<Vec<f64>>)> {
    let mut strategy = start;
    for _ in 0..100 {
        let values = (0..game.n_players())
            .map(|i| joint_value_with_gamma(game, &strategy, i, gamma))
            .collect::<Result<Vec<_>>>()?;
        let actions: Vec<usize> = (0..game.n_states())
            .map(|s| {
                let c = game.controller(s);
                let score = |a: usize| game.reward(c, s, a) + gamma * values[c][game.next_state(s, a)];
                (0..game.n_actions()).fold(0, |best, a| if score(a) > score(best) + 1e-12 { a } else { best })
            })
            .collect();
        let next = JointStrategy::deterministic(&actions, game.n_actions())?;
        if next == strategy {
            return Ok((strategy, values));
        }
        strategy = next;
    }
    let values = (0..game.n_players())
        .map(|i| joint_value_with_gamma(game, &strategy, i, gamma))
        .collect::<Result<Vec<_>>>()?;
    Ok((strategy, values))
}

/// Three instance kinds in rotation: arbitrary values, the joint values
/// plus noise, and a greedy fixed point of the (possibly corrupted)
/// operators. The last kind is what exposes a broken discount: its
/// residuals vanish under the operators being checked.
fn lemma1(config: &VerifyConfig) -> Result<CheckOutcome> {
    let mut failures = Vec::new();
    let mut vacuous = 0;
    let mut max_ratio = 0f64;
    for k in 0..config.lemma_instances {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, "lemma1", &[k as u64]));
        let game = match &config.game {
            Some(g) => g.clone(),
            None => small_game(rng.random(), 2, 5, 2)?,
        };
        let operator_gamma = if config.corrupt_operator { -game.gamma() } else { game.gamma() };
        let (n, ns, na) = (game.n_players(), game.n_states(), game.n_actions());
        let mut strategy = random_strategy(&mut rng, ns, na)?;
        let values = match k % 3 {
            0 => (0..n).map(|_| (0..ns).map(|_| rng.random_range(-10.0..10.0)).collect()).collect(),
            1 => joint_values(&game, &strategy)?
                .into_iter()
                .map(|v| v.into_iter().map(|x| x + rng.random_range(-0.5..0.5)).collect())
                .collect(),
            _ => {
                let (pi, v) = greedy_fixed_point(&game, operator_gamma, strategy)?;
                strategy = pi;
                v
            }
        };
        let measures = MeasureSet {
            mu: distribution(&mut rng, ns),
            nu: distribution(&mut rng, ns),
            rho: distribution(&mut rng, n),
            p: [1.5, 2.0, 3.0][rng.random_range(0..3)],
        };
        let report = lemma1_with_operator_gamma(&game, &values, &strategy, &measures, operator_gamma)?;
        for p in &report.players {
            vacuous += p.vacuous as usize;
            if !p.vacuous && p.rhs > 0.0 {
                max_ratio = max_ratio.max(p.lhs / p.rhs);
            }
        }
        if !report.holds() {
            let kind = ["random", "joint_plus_noise", "operator_fixed_point"][k % 3];
            failures.push(json!({
                "instance": k,
                "kind": kind,
                "operator_gamma": operator_gamma,
                "game": game,
                "values": values,
                "strategy": strategy,
                "measures": measures,
                "report": report,
            }));
        }
    }
    let cases = config.lemma_instances;
    Ok(CheckOutcome {
        name: "lemma1".into(),
        cases,
        passed: failures.is_empty(),
        summary: format!(
            "{}/{cases} instances satisfy the bound; {vacuous} vacuous player bounds; max lhs/rhs {max_ratio:.3}",
            cases - failures.len()
        ),
        elapsed_secs: 0.0,
        failures,
    })
}

fn deterministic_strategies(game: &TurnBasedGame) -> Result<Vec<JointStrategy>> {
    let (ns, na) = (game.n_states(), game.n_actions());
    let count = na.pow(ns as u32);
    (0..count)
        .map(|mut code| {
            let actions: Vec<usize> = (0..ns)
                .map(|_| {
                    let a = code % na;
                    code /= na;
                    a
                })
                .collect();
            JointStrategy::deterministic(&actions, na)
        })
        .collect()
}

/// `max_i max_s (v*^i - v^i_π)(s)`
fn nash_gap(game: &TurnBasedGame, strategy: &JointStrategy) -> Result<f64> {
    let values = joint_values(game, strategy)?;
    let mut gap = 0f64;
    for (i, v) in values.iter().enumerate() {
        let br = best_response(game, strategy, i)?;
        for (b, x) in br.value.iter().zip(v) {
            gap = gap.max(b - x);
        }
    }
    Ok(gap)
}

/// Both Nash characterisations must agree on every deterministic joint
/// strategy of each game; the ε-minimal strategy is reported as well.
fn equivalence(config: &VerifyConfig) -> Result<CheckOutcome> {
    let mut games = vec![("reference".to_string(), TurnBasedGame::two_state_reference(0.9)?)];
    for k in 0..config.equivalence_games {
        let seed = derive_seed(config.seed, "equivalence", &[k as u64]);
        games.push((format!("tiny {k}"), small_game(seed, 2, 3, 2)?));
    }
    let mut failures = Vec::new();
    let mut cases = 0;
    let mut nash_games = 0;
    for (name, game) in &games {
        let strategies = deterministic_strategies(game)?;
        let mut best: Option<(f64, usize)> = None;
        for (idx, pi) in strategies.iter().enumerate() {
            let gap = nash_gap(game, pi)?;
            if best.is_none_or(|(g, _)| gap < g) {
                best = Some((gap, idx));
            }
            let report = check_definition_equivalence(game, pi)?;
            cases += 1;
            if !report.agree() {
                failures.push(json!({ "game_name": name, "game": game, "strategy": pi, "gap": gap, "report": report }));
            }
        }
        if let Some((gap, idx)) = best {
            let report = check_definition_equivalence(game, &strategies[idx])?;
            nash_games += report.is_nash() as usize;
            if !report.agree() {
                failures.push(json!({
                    "game_name": name,
                    "game": game,
                    "strategy": strategies[idx],
                    "gap": gap,
                    "epsilon_minimal": true,
                    "report": report,
                }));
            }
        }
    }
    Ok(CheckOutcome {
        name: "definition_equivalence".into(),
        cases,
        passed: failures.is_empty(),
        summary: format!(
            "{} games, {cases} strategies, {} disagreements; ε-minimal strategy is an exact Nash in {nash_games} games",
            games.len(),
            failures.len()
        ),
        elapsed_secs: 0.0,
        failures,
    })
}

fn estimator(config: &VerifyConfig) -> Result<CheckOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, "estimator", &[]));
    let games: Vec<TurnBasedGame> = match &config.game {
        Some(g) => vec![g.clone()],
        None => (0..10).map(|_| small_game(rng.random(), 3, 10, 3)).collect::<Result<_>>()?,
    };
    let mut failures = Vec::new();
    let mut max_diff = 0f64;
    for k in 0..config.estimator_probes {
        let game = &games[k % games.len()];
        let (n, ns, na) = (game.n_players(), game.n_states(), game.n_actions());
        let q = QTable::from_fn(n, ns, na, |_, _, _| rng.random_range(-5.0..5.0));
        let strategy = random_strategy(&mut rng, ns, na)?;
        let (s, a, i) = (rng.random_range(0..ns), rng.random_range(0..na), rng.random_range(0..n));
        let sample = transition(game, s, a);
        for mode in [BackupMode::Star, BackupMode::Joint] {
            let empirical = sample_backup(&sample, &q, &strategy, game.gamma(), i, mode);
            let model = model_based_backup(game, s, a, &q, &strategy, i, mode);
            let d = (empirical - model).abs();
            max_diff = max_diff.max(d);
            if !(d <= ESTIMATOR_TOL) {
                failures.push(json!({
                    "probe": k,
                    "mode": format!("{mode:?}"),
                    "player": i,
                    "sample": sample,
                    "empirical": empirical,
                    "model_based": model,
                    "q_next": q.row(i, sample.s_next),
                    "strategy_next": strategy.row(sample.s_next),
                }));
            }
        }
    }
    let cases = config.estimator_probes;
    Ok(CheckOutcome {
        name: "estimator".into(),
        cases,
        passed: failures.is_empty(),
        summary: format!("{cases} probes, max |sample - model| = {max_diff:e}"),
        elapsed_secs: 0.0,
        failures,
    })
}

/// Finite differences on a 3-state, 2-action, 2-player Garnet with the
/// default network, at an initialisation whose bootstrapped maxima are
/// clear of ties.
fn gradients(config: &VerifyConfig) -> Result<CheckOutcome> {
    let game = small_game(derive_seed(config.seed, "gradient-game", &[]), 2, 3, 2)?;
    let batch = sample_batch(&game, 24, derive_seed(config.seed, "gradient-batch", &[]), Split::Train)?.samples;
    let objective = Objective { gamma: game.gamma(), rho: vec![0.5, 0.5], p: 2.0, weight_decay: 1e-6 };

    let mut attempt = 0u64;
    let (net, margin) = loop {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, "gradient-init", &[attempt]));
        let net = NashNetwork::new(&game, Architecture::default(), EncodingMode::OneHot, &mut rng);
        let margin = net.argmax_margin(&batch)?;
        if margin >= MIN_ARGMAX_MARGIN || attempt >= 50 {
            break (net, margin);
        }
        attempt += 1;
    };
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, "gradient-pick", &[]));
    let check = net.finite_difference_check(&batch, &objective, config.gradient_weights, FD_STEP, GRADIENT_TOL, &mut rng)?;

    let mut failures: Vec<Value> = check.failures.iter().map(|f| json!(f)).collect();
    if margin < MIN_ARGMAX_MARGIN {
        failures.push(json!({ "reason": "no tie-free initialisation found", "margin": margin }));
    }
    if check.checked < MIN_GRADIENT_WEIGHTS.min(config.gradient_weights) {
        failures.push(json!({ "reason": "too few weights checked", "checked": check.checked, "skipped": check.skipped }));
    }
    Ok(CheckOutcome {
        name: "gradients".into(),
        cases: check.checked,
        passed: failures.is_empty(),
        summary: format!(
            "{} weights ({} Q, {} strategy), {} skipped near ReLU kinks, max relative error {:.2e}, argmax margin {margin:.2e}",
            check.checked, check.checked_q, check.checked_pi, check.skipped, check.max_rel_error
        ),
        elapsed_secs: 0.0,
        failures,
    })
}
