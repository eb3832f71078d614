//! Turn-based deterministic general-sum Markov games and the Garnet generator.
//!
//! A game has `n_players` players, `n_states` states and `n_actions` actions.
//! Exactly one player, the controller, picks the action in each state. The
//! kernel is deterministic, so `next_state(s, a)` fully describes it, and
//! every player receives an individual reward `reward(i, s, a)`.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Parameters of a random turn-based Garnet.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GarnetSpec {
    pub n_players: usize,
    pub n_states: usize,
    pub n_actions: usize,
    /// Standard deviation of the next-state index offset.
    pub sigma_next: f64,
    /// Standard deviation of the white noise added to rewards.
    pub sigma_noise: f64,
    /// Probability that a reward entry is zeroed.
    pub sparsity: f64,
    pub gamma: f64,
    pub seed: u64,
}

impl Default for GarnetSpec {
    fn default() -> Self {
        GarnetSpec {
            n_players: 5,
            n_states: 100,
            n_actions: 5,
            sigma_next: 1.0,
            sigma_noise: 0.05,
            sparsity: 0.5,
            gamma: 0.9,
            seed: 0,
        }
    }
}

impl GarnetSpec {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::InvalidConfig(msg));
        if self.n_players < 1 {
            return fail("n_players must be at least 1".into());
        }
        if self.n_states < 2 {
            return fail(format!("n_states must be at least 2, got {}", self.n_states));
        }
        if self.n_actions < 1 {
            return fail("n_actions must be at least 1".into());
        }
        if !(self.sigma_next >= 0.0 && self.sigma_next.is_finite()) {
            return fail(format!("sigma_next must be >= 0, got {}", self.sigma_next));
        }
        if !(self.sigma_noise >= 0.0 && self.sigma_noise.is_finite()) {
            return fail(format!("sigma_noise must be >= 0, got {}", self.sigma_noise));
        }
        if !(0.0..=1.0).contains(&self.sparsity) {
            return fail(format!("sparsity must lie in [0, 1], got {}", self.sparsity));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return fail(format!("gamma must lie in [0, 1), got {}", self.gamma));
        }
        Ok(())
    }
}

/// A turn-based game with a deterministic transition kernel.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TurnBasedGame {
    spec: GarnetSpec,
    controller: Vec<usize>,
    /// `next_state[s][a]`
    next_state: Vec<Vec<usize>>,
    /// `reward[i][s][a]`
    reward: Vec<Vec<Vec<f64>>>,
    critical_state: Vec<usize>,
}

impl TurnBasedGame {
    /// Builds a game from explicit tables. The sizes in `spec` must agree
    /// with the tables.
    pub fn new(
        spec: GarnetSpec,
        controller: Vec<usize>,
        next_state: Vec<Vec<usize>>,
        reward: Vec<Vec<Vec<f64>>>,
        critical_state: Vec<usize>,
    ) -> Result<Self> {
        let game = TurnBasedGame {
            spec,
            controller,
            next_state,
            reward,
            critical_state,
        };
        game.validate()?;
        Ok(game)
    }

    fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        let (np, ns, na) = (self.n_players(), self.n_states(), self.n_actions());
        let dim = |msg: String| Err(Error::Dimension(msg));
        if self.controller.len() != ns {
            return dim(format!("controller has {} entries, expected {ns}", self.controller.len()));
        }
        if let Some(&c) = self.controller.iter().find(|&&c| c >= np) {
            return Err(Error::OutOfRange { what: "controller", index: c, limit: np });
        }
        if self.next_state.len() != ns || self.next_state.iter().any(|row| row.len() != na) {
            return dim(format!("next_state must be {ns} x {na}"));
        }
        if let Some(&t) = self.next_state.iter().flatten().find(|&&t| t >= ns) {
            return Err(Error::OutOfRange { what: "next_state", index: t, limit: ns });
        }
        if self.reward.len() != np
            || self
                .reward
                .iter()
                .any(|p| p.len() != ns || p.iter().any(|row| row.len() != na))
        {
            return dim(format!("reward must be {np} x {ns} x {na}"));
        }
        if self.reward.iter().flatten().flatten().any(|r| !r.is_finite()) {
            return Err(Error::InvalidConfig("reward table contains non-finite values".into()));
        }
        if self.critical_state.len() != np {
            return dim(format!("critical_state has {} entries, expected {np}", self.critical_state.len()));
        }
        if let Some(&c) = self.critical_state.iter().find(|&&c| c >= ns) {
            return Err(Error::OutOfRange { what: "critical_state", index: c, limit: ns });
        }
        Ok(())
    }

    pub fn spec(&self) -> &GarnetSpec {
        &self.spec
    }

    pub fn n_players(&self) -> usize {
        self.spec.n_players
    }

    pub fn n_states(&self) -> usize {
        self.spec.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.spec.n_actions
    }

    pub fn gamma(&self) -> f64 {
        self.spec.gamma
    }

    pub fn controller(&self, s: usize) -> usize {
        self.controller[s]
    }

    pub fn controllers(&self) -> &[usize] {
        &self.controller
    }

    pub fn next_state(&self, s: usize, a: usize) -> usize {
        self.next_state[s][a]
    }

    pub fn reward(&self, i: usize, s: usize, a: usize) -> f64 {
        self.reward[i][s][a]
    }

    /// Player `i`'s reward table, indexed `[s][a]`.
    pub fn rewards_of(&self, i: usize) -> &[Vec<f64>] {
        &self.reward[i]
    }

    pub fn critical_state(&self, i: usize) -> usize {
        self.critical_state[i]
    }

    /// Same game with a different discount factor.
    pub fn with_gamma(&self, gamma: f64) -> Result<Self> {
        let mut game = self.clone();
        game.spec.gamma = gamma;
        game.validate()?;
        Ok(game)
    }

    /// Same game with player `i`'s rewards passed through `f`.
    pub fn map_rewards(&self, i: usize, f: impl Fn(f64) -> f64) -> Result<Self> {
        let mut game = self.clone();
        for r in game.reward[i].iter_mut().flatten() {
            *r = f(*r);
        }
        game.validate()?;
        Ok(game)
    }

    /// Hex SHA-256 of the canonical JSON form. Datasets record it so they
    /// can be matched against the game that produced them.
    pub fn fingerprint(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("game serializes");
        hex::encode(Sha256::digest(&bytes))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let game: TurnBasedGame = serde_json::from_str(text)?;
        game.validate()?;
        Ok(game)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    /// Two-state, two-player reference game with a known pure Nash
    /// equilibrium.
    ///
    /// Player 0 controls state 0, player 1 controls state 1. In either
    /// state action 0 leads to state 0 and action 1 leads to state 1.
    /// Player 0 earns 1 for playing action 0 in state 0; player 1 earns 1 for
    /// playing action 1 in state 1; every other reward is 0. Staying put
    /// (action 0 at state 0, action 1 at state 1) is a Nash equilibrium
    /// with values `[1/(1-γ), 0]` and `[0, 1/(1-γ)]`.
    pub fn two_state_reference(gamma: f64) -> Result<Self> {
        let spec = GarnetSpec {
            n_players: 2,
            n_states: 2,
            n_actions: 2,
            sigma_next: 0.0,
            sigma_noise: 0.0,
            sparsity: 0.0,
            gamma,
            seed: 0,
        };
        TurnBasedGame::new(
            spec,
            vec![0, 1],
            vec![vec![0, 1], vec![0, 1]],
            vec![
                vec![vec![1.0, 0.0], vec![0.0, 0.0]],
                vec![vec![0.0, 0.0], vec![0.0, 1.0]],
            ],
            vec![0, 1],
        )
    }
}

/// Circular index distance on a ring of `n_states` states.
pub fn circular_distance(a: usize, b: usize, n_states: usize) -> usize {
    let d = a.abs_diff(b);
    d.min(n_states - d)
}

/// `1 - 2 d / N_S`, where `d` is the circular distance between `s` and the
/// critical state. Equals 1 at the critical state and 0 at the antipode.
pub fn circular_reward(s: usize, critical: usize, n_states: usize) -> f64 {
    1.0 - 2.0 * circular_distance(s, critical, n_states) as f64 / n_states as f64
}

/// Noise-free reward of player `i` in state `s`.
pub fn base_reward(game: &TurnBasedGame, i: usize, s: usize) -> f64 {
    circular_reward(s, game.critical_state(i), game.n_states())
}

/// Draws a random turn-based Garnet. Identical specs give identical games.
pub fn generate_garnet(spec: &GarnetSpec) -> Result<TurnBasedGame> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (np, ns, na) = (spec.n_players, spec.n_states, spec.n_actions);

    let controller: Vec<usize> = (0..ns).map(|_| rng.random_range(0..np)).collect();
    let critical_state: Vec<usize> = (0..np).map(|_| rng.random_range(0..ns)).collect();

    let next_state: Vec<Vec<usize>> = (0..ns)
        .map(|s| {
            (0..na)
                .map(|_| {
                    let z: f64 = rng.sample(StandardNormal);
                    let offset = (z * spec.sigma_next).round() as i64;
                    (s as i64 + offset).rem_euclid(ns as i64) as usize
                })
                .collect()
        })
        .collect();

    let reward: Vec<Vec<Vec<f64>>> = (0..np)
        .map(|i| {
            (0..ns)
                .map(|s| {
                    let base = circular_reward(s, critical_state[i], ns);
                    (0..na)
                        .map(|_| {
                            let z: f64 = rng.sample(StandardNormal);
                            let noisy = base + z * spec.sigma_noise;
                            if rng.random::<f64>() < spec.sparsity {
                                0.0
                            } else {
                                noisy
                            }
                        })
                        .collect()
                })
                .collect()
        })
        .collect();

    TurnBasedGame::new(spec.clone(), controller, next_state, reward, critical_state)
}

/// How a state index is turned into a network input.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncodingMode {
    #[default]
    OneHot,
    /// Binary expansion of the index, least-significant bit first.
    Compact,
}

impl EncodingMode {
    pub fn width(self, n_states: usize) -> usize {
        match self {
            EncodingMode::OneHot => n_states,
            EncodingMode::Compact => compact_width(n_states),
        }
    }
}

fn compact_width(n_states: usize) -> usize {
    // ceil(log2(n)), at least one bit
    let bits = usize::BITS - (n_states.max(2) - 1).leading_zeros();
    bits as usize
}

pub fn encode_state(s: usize, n_states: usize, mode: EncodingMode) -> Result<Vec<f64>> {
    if s >= n_states {
        return Err(Error::OutOfRange { what: "state", index: s, limit: n_states });
    }
    let width = mode.width(n_states);
    let mut out = vec![0.0; width];
    match mode {
        EncodingMode::OneHot => out[s] = 1.0,
        EncodingMode::Compact => {
            for (bit, slot) in out.iter_mut().enumerate() {
                *slot = ((s >> bit) & 1) as f64;
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn paper_spec(seed: u64) -> GarnetSpec {
        GarnetSpec { seed, ..GarnetSpec::default() }
    }

    #[test]
    fn default_spec_generates_valid_game() {
        let game = generate_garnet(&paper_spec(3)).unwrap();
        assert_eq!(game.n_states(), 100);
        assert_eq!(game.n_actions(), 5);
        assert_eq!(game.spec().sigma_next, 1.0);
        assert_eq!(game.spec().sigma_noise, 0.05);
        assert_eq!(game.spec().sparsity, 0.5);
        assert_eq!(game.gamma(), 0.9);
    }

    #[test]
    fn same_seed_same_game() {
        let a = generate_garnet(&paper_spec(11)).unwrap();
        let b = generate_garnet(&paper_spec(11)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.fingerprint(), b.fingerprint());
        let c = generate_garnet(&paper_spec(12)).unwrap();
        assert_ne!(a.fingerprint(), c.fingerprint());
    }

    #[test]
    fn next_states_wrap() {
        let spec = GarnetSpec { n_states: 10, n_actions: 2, seed: 7, ..GarnetSpec::default() };
        let game = generate_garnet(&spec).unwrap();
        for s in 0..10 {
            for a in 0..2 {
                assert!(game.next_state(s, a) < 10);
            }
        }
    }

    #[test]
    fn wide_sigma_still_in_range() {
        let spec = GarnetSpec { n_states: 7, sigma_next: 50.0, seed: 1, ..GarnetSpec::default() };
        let game = generate_garnet(&spec).unwrap();
        assert!(game.next_state.iter().flatten().all(|&t| t < 7));
    }

    #[test]
    fn full_sparsity_zeroes_everything() {
        let spec = GarnetSpec { sparsity: 1.0, n_states: 20, ..GarnetSpec::default() };
        let game = generate_garnet(&spec).unwrap();
        assert!(game.reward.iter().flatten().flatten().all(|&r| r == 0.0));
    }

    #[test]
    fn no_noise_no_sparsity_gives_base_reward() {
        let spec = GarnetSpec { sparsity: 0.0, sigma_noise: 0.0, n_states: 20, ..GarnetSpec::default() };
        let game = generate_garnet(&spec).unwrap();
        for i in 0..game.n_players() {
            for s in 0..game.n_states() {
                for a in 0..game.n_actions() {
                    assert_eq!(game.reward(i, s, a), base_reward(&game, i, s));
                }
            }
        }
    }

    #[test]
    fn circular_reward_values() {
        assert_eq!(circular_reward(4, 4, 10), 1.0);
        assert_eq!(circular_reward(7, 2, 10), 0.0);
        assert!((circular_reward(9, 1, 10) - 0.6).abs() < 1e-15);
        assert!((circular_reward(1, 9, 10) - 0.6).abs() < 1e-15);
    }

    #[test]
    fn circular_reward_shift_invariant() {
        let n = 13;
        for s in 0..n {
            for c in 0..n {
                for k in 0..n {
                    assert_eq!(
                        circular_reward(s, c, n),
                        circular_reward((s + k) % n, (c + k) % n, n)
                    );
                }
            }
        }
    }

    #[test]
    fn rejects_bad_specs() {
        for spec in [
            GarnetSpec { n_players: 0, ..GarnetSpec::default() },
            GarnetSpec { n_states: 1, ..GarnetSpec::default() },
            GarnetSpec { n_actions: 0, ..GarnetSpec::default() },
            GarnetSpec { gamma: 1.0, ..GarnetSpec::default() },
            GarnetSpec { sparsity: 1.5, ..GarnetSpec::default() },
            GarnetSpec { sigma_next: -1.0, ..GarnetSpec::default() },
        ] {
            assert!(generate_garnet(&spec).is_err(), "{spec:?}");
        }
    }

    #[test]
    fn encodings() {
        assert_eq!(encode_state(2, 4, EncodingMode::OneHot).unwrap(), vec![0.0, 0.0, 1.0, 0.0]);
        let e = encode_state(0, 9, EncodingMode::OneHot).unwrap();
        assert_eq!(e[0], 1.0);
        assert_eq!(e.iter().sum::<f64>(), 1.0);
        assert_eq!(encode_state(5, 8, EncodingMode::Compact).unwrap(), vec![1.0, 0.0, 1.0]);
        assert_eq!(EncodingMode::Compact.width(100), 7);
        assert_eq!(EncodingMode::Compact.width(2), 1);
        assert!(encode_state(4, 4, EncodingMode::OneHot).is_err());
    }

    #[test]
    fn json_round_trip() {
        let game = generate_garnet(&GarnetSpec { n_states: 6, seed: 5, ..GarnetSpec::default() }).unwrap();
        let back = TurnBasedGame::from_json(&game.to_json().unwrap()).unwrap();
        assert_eq!(game, back);
    }

    #[test]
    fn reference_game_tables() {
        let g = TurnBasedGame::two_state_reference(0.5).unwrap();
        assert_eq!(g.controllers(), &[0, 1]);
        assert_eq!(g.next_state(0, 0), 0);
        assert_eq!(g.next_state(1, 1), 1);
        assert_eq!(g.reward(0, 0, 0), 1.0);
        assert_eq!(g.reward(1, 1, 1), 1.0);
    }
}
