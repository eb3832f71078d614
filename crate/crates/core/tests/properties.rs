//! Property tests against oracles written independently of the library:
//! values by plain value iteration, best responses by enumerating every
//! deterministic deviation.

use nashnet::data::{sample_batch, transition, BatchSample, Split};
use nashnet::eval::{
    best_response, check_lemma1, error_vs_best_response, joint_value, JointStrategy, MeasureSet,
};
use nashnet::game::{generate_garnet, EncodingMode, GarnetSpec, TurnBasedGame};
use nashnet::learner::{Adam, Architecture, NashNetwork, Objective};
use nashnet::residual::{
    empirical_loss, expected_q_joint, expected_q_turnbased, model_based_backup, sample_backup, BackupMode,
    JointActionQ, QTable,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn game(seed: u64, players: usize, states: usize, actions: usize) -> TurnBasedGame {
    generate_garnet(&GarnetSpec {
        n_players: players,
        n_states: states,
        n_actions: actions,
        seed,
        ..GarnetSpec::default()
    })
    .unwrap()
}

fn distribution(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    let w: Vec<f64> = (0..n).map(|_| rng.random_range(0.01..1.0)).collect();
    let t: f64 = w.iter().sum();
    w.into_iter().map(|x| x / t).collect()
}

fn strategy(rng: &mut impl Rng, g: &TurnBasedGame) -> JointStrategy {
    JointStrategy::new((0..g.n_states()).map(|_| distribution(rng, g.n_actions())).collect()).unwrap()
}

/// `v = r_π + γ P_π v` by fixed-point iteration to machine precision.
fn value_iteration(g: &TurnBasedGame, pi: &JointStrategy, i: usize) -> Vec<f64> {
    let mut v = vec![0.0; g.n_states()];
    for _ in 0..2000 {
        v = (0..g.n_states())
            .map(|s| {
                (0..g.n_actions())
                    .map(|a| pi.row(s)[a] * (g.reward(i, s, a) + g.gamma() * v[g.next_state(s, a)]))
                    .sum()
            })
            .collect();
    }
    v
}

/// Pointwise maximum of player `i`'s value over every deterministic choice
/// at its own states, the other players keeping `pi`.
fn brute_force_best(g: &TurnBasedGame, pi: &JointStrategy, i: usize) -> Vec<f64> {
    let own: Vec<usize> = (0..g.n_states()).filter(|&s| g.controller(s) == i).collect();
    let na = g.n_actions();
    let mut best = vec![f64::NEG_INFINITY; g.n_states()];
    for mut code in 0..na.pow(own.len() as u32) {
        let mut rows = pi.rows().to_vec();
        for &s in &own {
            let mut row = vec![0.0; na];
            row[code % na] = 1.0;
            code /= na;
            rows[s] = row;
        }
        let v = value_iteration(g, &JointStrategy::new(rows).unwrap(), i);
        for (b, x) in best.iter_mut().zip(v) {
            *b = b.max(x);
        }
    }
    best
}

fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 48, ..ProptestConfig::default() })]

    #[test]
    fn joint_value_matches_value_iteration(seed in any::<u64>(), players in 1usize..4) {
        let g = game(seed, players, 6, 3);
        let pi = strategy(&mut ChaCha8Rng::seed_from_u64(seed ^ 1), &g);
        for i in 0..players {
            prop_assert!(close(&joint_value(&g, &pi, i).unwrap(), &value_iteration(&g, &pi, i), 1e-9));
        }
    }

    #[test]
    fn best_response_dominates_and_matches_brute_force(seed in any::<u64>(), players in 1usize..4) {
        let g = game(seed, players, 6, 2);
        let pi = strategy(&mut ChaCha8Rng::seed_from_u64(seed ^ 2), &g);
        for i in 0..players {
            let br = best_response(&g, &pi, i).unwrap();
            let v = joint_value(&g, &pi, i).unwrap();
            prop_assert!(br.value.iter().zip(&v).all(|(b, x)| *b >= x - 1e-9));
            prop_assert!(close(&br.value, &brute_force_best(&g, &pi, i), 1e-8));
        }
    }

    #[test]
    fn lemma1_holds_for_random_instances(seed in any::<u64>(), p in prop::sample::select(vec![1.5, 2.0, 4.0])) {
        let g = game(seed, 2, 5, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 3);
        let pi = strategy(&mut rng, &g);
        let values: Vec<Vec<f64>> = (0..2).map(|_| (0..5).map(|_| rng.random_range(-5.0..5.0)).collect()).collect();
        let measures = MeasureSet {
            mu: distribution(&mut rng, 5),
            nu: distribution(&mut rng, 5),
            rho: distribution(&mut rng, 2),
            p,
        };
        let report = check_lemma1(&g, &values, &pi, &measures).unwrap();
        for pl in &report.players {
            prop_assert!(pl.vacuous || pl.lhs <= pl.rhs + 1e-9, "lhs {} rhs {}", pl.lhs, pl.rhs);
        }
    }

    #[test]
    fn loss_is_permutation_invariant(seed in any::<u64>(), perm_seed in any::<u64>()) {
        let g = game(seed, 3, 8, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 4);
        let q = QTable::from_fn(3, 8, 3, |_, _, _| rng.random_range(-2.0..2.0));
        let pi = strategy(&mut rng, &g);
        let mut batch = sample_batch(&g, 40, seed, Split::Train).unwrap().samples;
        let rho = [0.2, 0.3, 0.5];
        let before = empirical_loss(&batch, &q, &pi, g.gamma(), &rho, 2.0).unwrap().mean;
        use rand::seq::SliceRandom;
        batch.shuffle(&mut ChaCha8Rng::seed_from_u64(perm_seed));
        let after = empirical_loss(&batch, &q, &pi, g.gamma(), &rho, 2.0).unwrap().mean;
        prop_assert!((before - after).abs() <= 1e-12 * before.abs().max(1.0));
    }

    #[test]
    fn single_player_joint_expectation_is_turn_based(values in prop::collection::vec(-10.0f64..10.0, 1..6), seed in any::<u64>()) {
        let probs = distribution(&mut ChaCha8Rng::seed_from_u64(seed), values.len());
        let q = JointActionQ::new(vec![values.len()], values.clone()).unwrap();
        let joint = expected_q_joint(&q, &[&probs], None).unwrap();
        prop_assert_eq!(joint.len(), 1);
        prop_assert!((joint[0] - expected_q_turnbased(&values, &probs)).abs() <= 1e-12);
    }

    #[test]
    fn error_is_invariant_to_positive_reward_scaling(seed in any::<u64>(), scale in 0.01f64..100.0) {
        let g = game(seed, 2, 6, 3);
        let pi = strategy(&mut ChaCha8Rng::seed_from_u64(seed ^ 5), &g);
        let mut scaled = g.clone();
        for i in 0..2 {
            scaled = scaled.map_rewards(i, |r| r * scale).unwrap();
        }
        let a = error_vs_best_response(&g, &pi).unwrap();
        let b = error_vs_best_response(&scaled, &pi).unwrap();
        for (x, y) in a.iter().zip(&b) {
            match (x, y) {
                (Some(x), Some(y)) => prop_assert!((x - y).abs() <= 1e-9 * x.abs().max(1.0)),
                (None, None) => {}
                _ => prop_assert!(false, "defined for one scale only"),
            }
        }
    }

    #[test]
    fn sample_backups_equal_model_backups(seed in any::<u64>(), s in 0usize..10, a in 0usize..3, i in 0usize..3) {
        let g = game(seed, 3, 10, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 6);
        let q = QTable::from_fn(3, 10, 3, |_, _, _| rng.random_range(-5.0..5.0));
        let pi = strategy(&mut rng, &g);
        let sample = transition(&g, s, a);
        for mode in [BackupMode::Star, BackupMode::Joint] {
            let d = sample_backup(&sample, &q, &pi, g.gamma(), i, mode) - model_based_backup(&g, s, a, &q, &pi, i, mode);
            prop_assert!(d.abs() <= 1e-12);
        }
    }

    #[test]
    fn backprop_matches_finite_differences(seed in any::<u64>()) {
        let g = game(seed, 2, 3, 2);
        let batch = sample_batch(&g, 12, seed, Split::Train).unwrap().samples;
        let net = NashNetwork::new(&g, Architecture::Network { hidden: 16 }, EncodingMode::OneHot, &mut ChaCha8Rng::seed_from_u64(seed));
        // the max in the best-response backup is not differentiable at ties
        prop_assume!(net.argmax_margin(&batch).unwrap() > 1e-3);
        let objective = Objective { gamma: g.gamma(), rho: vec![0.5, 0.5], p: 2.0, weight_decay: 1e-3 };
        let check = net
            .finite_difference_check(&batch, &objective, 60, 1e-5, 1e-4, &mut ChaCha8Rng::seed_from_u64(seed ^ 7))
            .unwrap();
        prop_assert!(check.passed(), "{:?}", check.failures);
        prop_assert!(check.checked > 0);
    }
}

fn reference_batch(g: &TurnBasedGame) -> Vec<BatchSample> {
    (0..2).flat_map(|s| (0..2).map(move |a| (s, a))).map(|(s, a)| transition(g, s, a)).collect()
}

#[test]
fn zero_loss_means_zero_error() {
    let g = TurnBasedGame::two_state_reference(0.9).unwrap();
    let nash = JointStrategy::deterministic(&[0, 1], 2).unwrap();
    let values: Vec<Vec<f64>> = (0..2).map(|i| value_iteration(&g, &nash, i)).collect();
    let q = QTable::from_values(&g, &values);
    let loss = empirical_loss(&reference_batch(&g), &q, &nash, 0.9, &[0.5, 0.5], 2.0).unwrap();
    assert!(loss.total <= 1e-20, "loss {}", loss.total);
    for e in error_vs_best_response(&g, &nash).unwrap() {
        assert!(e.unwrap() <= 1e-12);
    }
}

#[test]
fn embedded_reference_nash_is_a_stationary_point() {
    let g = TurnBasedGame::two_state_reference(0.9).unwrap();
    let nash = JointStrategy::deterministic(&[0, 1], 2).unwrap();
    let values: Vec<Vec<f64>> = (0..2).map(|i| value_iteration(&g, &nash, i)).collect();
    let q = QTable::from_values(&g, &values);
    let logits = vec![vec![40.0, -40.0], vec![-40.0, 40.0]];
    let net = NashNetwork::tabular_from(&g, &q, &logits).unwrap();
    let objective = Objective { gamma: 0.9, rho: vec![0.5, 0.5], p: 2.0, weight_decay: 0.0 };
    let lg = net.loss_and_gradients(&reference_batch(&g), &objective).unwrap();
    assert!(lg.residual <= 1e-10);
    assert!(lg.gradients.norm() <= 1e-8);
}

#[test]
fn tabular_training_solves_the_reference_game() {
    use nashnet::learner::{train, TrainConfig};
    let g = TurnBasedGame::two_state_reference(0.9).unwrap();
    let data = sample_batch(&g, 40, 3, Split::Train).unwrap();
    // the strategy logits have to saturate, which the default strategy step size does slowly
    let config = TrainConfig { weight_decay: 0.0, lr_pi: 1e-2, epochs: 10_000, eval_interval: 1000, ..TrainConfig::tabular_default() };
    let (net, report) = train(&g, &data, None, &config).unwrap();
    let last = report.last().unwrap();
    assert!(last.train_residual <= 1e-6, "residual {}", last.train_residual);
    let pi = net.extract_strategy(&g).unwrap();
    for e in error_vs_best_response(&g, &pi).unwrap() {
        assert!(e.unwrap() <= 1e-3);
    }
}

#[test]
fn weight_decay_shrinks_parameters_without_gradient() {
    let mut params = vec![1.0, -2.0, 0.5];
    let mut adam = Adam::new(3, 1e-2, 0.9, 0.999, 1e-8).with_weight_decay(0.1);
    // Adam moves each weight by about lr per step, so 20 steps cannot cross zero
    for _ in 0..20 {
        adam.step(&mut params, &[0.0; 3]);
    }
    assert!(params[0] < 1.0 && params[0] > 0.0);
    assert!(params[1] > -2.0 && params[1] < 0.0);
    assert!(params[2] < 0.5 && params[2] > 0.0);

    let mut plain = vec![1.0, -2.0, 0.5];
    let mut no_decay = Adam::new(3, 1e-2, 0.9, 0.999, 1e-8);
    no_decay.step(&mut plain, &[0.0; 3]);
    assert_eq!(plain, vec![1.0, -2.0, 0.5]);
}
