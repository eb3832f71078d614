use rand::Rng;
use serde::Serialize;

use super::model::{Cache, ModelShape};
use super::{NashNetwork, Objective};
use crate::data::BatchSample;
use crate::error::{Error, Result};

/// Which approximator a parameter belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum NetKind {
    Q,
    Pi,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GradientMismatch {
    pub kind: NetKind,
    pub player: usize,
    pub index: usize,
    pub backprop: f64,
    pub finite_difference: f64,
    pub rel_error: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct GradientCheck {
    pub checked: usize,
    pub checked_q: usize,
    pub checked_pi: usize,
    /// Weights left out because a ±h step could cross a ReLU kink.
    pub skipped: usize,
    pub max_rel_error: f64,
    pub failures: Vec<GradientMismatch>,
}

impl GradientCheck {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

/// `|a - b| / max(|a|, |b|, 1e-6)`; the floor keeps rounding noise on
/// vanishing gradients from counting as a relative error.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

impl NashNetwork {
    /// Smallest gap between the two largest `Q^i(s', ·)` over the samples
    /// where player `i` controls `s'`, i.e. where the max is taken.
    /// Finite differences are only meaningful when this is well above `h`.
    pub fn argmax_margin(&self, batch: &[BatchSample]) -> Result<f64> {
        let q = self.q_table()?;
        let mut margin = f64::INFINITY;
        for b in batch {
            let row = q.row(b.controller_next, b.s_next);
            if row.len() < 2 {
                continue;
            }
            let mut sorted = row.to_vec();
            sorted.sort_by(|x, y| y.total_cmp(x));
            margin = margin.min(sorted[0] - sorted[1]);
        }
        Ok(margin)
    }

    /// Compares backprop gradients of `residual + penalty` with central
    /// finite differences on `n_weights` distinct parameters drawn across
    /// all Q and strategy approximators.
    pub fn finite_difference_check(
        &self,
        batch: &[BatchSample],
        objective: &Objective,
        n_weights: usize,
        h: f64,
        tol: f64,
        rng: &mut impl Rng,
    ) -> Result<GradientCheck> {
        if !(h > 0.0) {
            return Err(Error::InvalidConfig("finite-difference step must be positive".into()));
        }
        let analytic = self.loss_and_gradients(batch, objective)?.gradients;
        let loss = |net: &NashNetwork| -> Result<f64> {
            let lg = net.loss_and_gradients(batch, objective)?;
            Ok(lg.residual + lg.penalty)
        };
        let kinks = self.kink_distances(batch);

        let mut slots = Vec::new();
        for (player, m) in self.q_nets.iter().enumerate() {
            slots.extend((0..m.params.len()).map(|k| (NetKind::Q, player, k)));
        }
        for (player, m) in self.pi_nets.iter().enumerate() {
            slots.extend((0..m.params.len()).map(|k| (NetKind::Pi, player, k)));
        }
        let picks = rand::seq::index::sample(rng, slots.len(), n_weights.min(slots.len()));

        let mut report = GradientCheck::default();
        let mut work = self.clone();
        for pick in picks.iter() {
            let (kind, player, k) = slots[pick];
            let (model, grad, near) = match kind {
                NetKind::Q => (&self.q_nets[player], analytic.q[player][k], &kinks.q[player]),
                NetKind::Pi => (&self.pi_nets[player], analytic.pi[player][k], &kinks.pi[player]),
            };
            if let Some(unit) = hidden_unit_of(model.shape, k) {
                if near[unit] <= 2.0 * h {
                    report.skipped += 1;
                    continue;
                }
            }
            let base = model.params[k];
            let set = |net: &mut NashNetwork, w: f64| match kind {
                NetKind::Q => net.q_nets[player].params[k] = w,
                NetKind::Pi => net.pi_nets[player].params[k] = w,
            };
            set(&mut work, base + h);
            let up = loss(&work)?;
            set(&mut work, base - h);
            let down = loss(&work)?;
            set(&mut work, base);
            let fd = (up - down) / (2.0 * h);

            let rel = relative_error(grad, fd);
            report.checked += 1;
            match kind {
                NetKind::Q => report.checked_q += 1,
                NetKind::Pi => report.checked_pi += 1,
            }
            report.max_rel_error = report.max_rel_error.max(rel);
            if !(rel <= tol) {
                report.failures.push(GradientMismatch {
                    kind,
                    player,
                    index: k,
                    backprop: grad,
                    finite_difference: fd,
                    rel_error: rel,
                });
            }
        }
        Ok(report)
    }

    /// For every approximator and hidden unit, the smallest `|pre-activation|`
    /// over the states the batch evaluates it at.
    fn kink_distances(&self, batch: &[BatchSample]) -> KinkDistances {
        let mut cache = Cache::default();
        let mut scan = |model: &super::Model, states: &mut dyn Iterator<Item = usize>| -> Vec<f64> {
            let ModelShape::Mlp { hidden, .. } = model.shape else {
                return Vec::new();
            };
            let mut near = vec![f64::INFINITY; hidden];
            for s in states {
                model.forward(s, &self.inputs[s], &mut cache);
                for (n, p) in near.iter_mut().zip(&cache.pre) {
                    *n = n.min(p.abs());
                }
            }
            near
        };
        let q = self
            .q_nets
            .iter()
            .map(|m| scan(m, &mut batch.iter().flat_map(|b| [b.s, b.s_next])))
            .collect();
        let pi = self
            .pi_nets
            .iter()
            .enumerate()
            .map(|(i, m)| scan(m, &mut batch.iter().filter(|b| b.controller_next == i).map(|b| b.s_next)))
            .collect();
        KinkDistances { q, pi }
    }
}

struct KinkDistances {
    q: Vec<Vec<f64>>,
    pi: Vec<Vec<f64>>,
}

/// Hidden unit whose pre-activation the parameter feeds, for first-layer
/// weights and biases.
fn hidden_unit_of(shape: ModelShape, k: usize) -> Option<usize> {
    match shape {
        ModelShape::Mlp { inputs, hidden, .. } if k < inputs * hidden => Some(k % hidden),
        ModelShape::Mlp { inputs, hidden, .. } if k < inputs * hidden + hidden => Some(k - inputs * hidden),
        _ => None,
    }
}
