//! Learning weak ε-Nash equilibria of turn-based general-sum Markov games
//! from batch data by minimizing two Bellman residuals per player.
//!
//! * [`game`]: games and the random Garnet generator
//! * [`eval`]: exact oracles (values, best responses, residual bounds)
//! * [`residual`]: Q-space backups and the empirical batch loss
//! * [`learner`]: the Q/strategy network pair and its training loop
//! * [`data`]: batch sampling and JSON-lines datasets
//! * [`harness`]: experiment runner, sample sweep and verification suite

pub mod data;
pub mod error;
pub mod eval;
pub mod game;
pub mod harness;
pub mod learner;
pub mod residual;

pub use error::{Error, Result};
