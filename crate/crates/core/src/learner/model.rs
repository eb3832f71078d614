use rand::Rng;
use serde::{Deserialize, Serialize};

/// Sparse network input: `(index, value)` pairs of the non-zero entries.
pub(crate) type SparseInput = [(usize, f64)];

/// Shape of one function approximator.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelShape {
    /// affine → ReLU → affine
    Mlp { inputs: usize, hidden: usize, outputs: usize },
    /// One free parameter per (state, output).
    Table { states: usize, outputs: usize },
}

impl ModelShape {
    pub fn n_params(self) -> usize {
        match self {
            ModelShape::Mlp { inputs, hidden, outputs } => inputs * hidden + hidden + outputs * hidden + outputs,
            ModelShape::Table { states, outputs } => states * outputs,
        }
    }

    pub fn outputs(self) -> usize {
        match self {
            ModelShape::Mlp { outputs, .. } | ModelShape::Table { outputs, .. } => outputs,
        }
    }
}

/// Parameters of one approximator in a flat vector.
///
/// Mlp layout: `w1` as `inputs` contiguous columns of length `hidden` (so a
/// one-hot input reads a single column), then `b1`, then `w2` row-major
/// `outputs × hidden`, then `b2`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub shape: ModelShape,
    pub params: Vec<f64>,
}

/// Activations kept from a forward pass for the backward pass.
#[derive(Clone, Debug, Default)]
pub(crate) struct Cache {
    pub pre: Vec<f64>,
    pub hidden: Vec<f64>,
    pub out: Vec<f64>,
}

impl Model {
    pub fn zeros(shape: ModelShape) -> Self {
        Model { shape, params: vec![0.0; shape.n_params()] }
    }

    /// Uniform in `±1/sqrt(fan_in)` per layer. Tables start at zero.
    pub fn init(shape: ModelShape, rng: &mut impl Rng) -> Self {
        let mut model = Model::zeros(shape);
        if let ModelShape::Mlp { inputs, hidden, outputs } = shape {
            let l1 = 1.0 / (inputs as f64).sqrt();
            let l2 = 1.0 / (hidden as f64).sqrt();
            let first = inputs * hidden + hidden;
            for (k, w) in model.params.iter_mut().enumerate() {
                let limit = if k < first { l1 } else { l2 };
                *w = rng.random_range(-limit..=limit);
            }
            debug_assert_eq!(model.params.len(), first + outputs * hidden + outputs);
        }
        model
    }

    /// Forward pass at `state` with sparse encoding `x`; fills `cache`.
    pub(crate) fn forward(&self, state: usize, x: &SparseInput, cache: &mut Cache) {
        match self.shape {
            ModelShape::Table { outputs, .. } => {
                cache.out.clear();
                cache.out.extend_from_slice(&self.params[state * outputs..(state + 1) * outputs]);
            }
            ModelShape::Mlp { inputs, hidden, outputs } => {
                let (w1, rest) = self.params.split_at(inputs * hidden);
                let (b1, rest) = rest.split_at(hidden);
                let (w2, b2) = rest.split_at(outputs * hidden);
                cache.pre.clear();
                cache.pre.extend_from_slice(b1);
                for &(k, xk) in x {
                    let col = &w1[k * hidden..(k + 1) * hidden];
                    for (p, w) in cache.pre.iter_mut().zip(col) {
                        *p += xk * w;
                    }
                }
                cache.hidden.clear();
                cache.hidden.extend(cache.pre.iter().map(|&p| p.max(0.0)));
                cache.out.clear();
                for o in 0..outputs {
                    let row = &w2[o * hidden..(o + 1) * hidden];
                    let dot: f64 = row.iter().zip(&cache.hidden).map(|(w, h)| w * h).sum();
                    cache.out.push(b2[o] + dot);
                }
            }
        }
    }

    /// Accumulates `d loss / d params` into `grad` given `d loss / d out`.
    pub(crate) fn backward(
        &self,
        state: usize,
        x: &SparseInput,
        cache: &Cache,
        d_out: &[f64],
        grad: &mut [f64],
        d_pre: &mut Vec<f64>,
    ) {
        match self.shape {
            ModelShape::Table { outputs, .. } => {
                for (g, d) in grad[state * outputs..(state + 1) * outputs].iter_mut().zip(d_out) {
                    *g += d;
                }
            }
            ModelShape::Mlp { inputs, hidden, outputs } => {
                let w2 = &self.params[inputs * hidden + hidden..inputs * hidden + hidden + outputs * hidden];
                let (gw1, rest) = grad.split_at_mut(inputs * hidden);
                let (gb1, rest) = rest.split_at_mut(hidden);
                let (gw2, gb2) = rest.split_at_mut(outputs * hidden);

                d_pre.clear();
                d_pre.resize(hidden, 0.0);
                for (o, &d) in d_out.iter().enumerate() {
                    if d == 0.0 {
                        continue;
                    }
                    gb2[o] += d;
                    let row = &w2[o * hidden..(o + 1) * hidden];
                    let grow = &mut gw2[o * hidden..(o + 1) * hidden];
                    for h in 0..hidden {
                        grow[h] += d * cache.hidden[h];
                        d_pre[h] += d * row[h];
                    }
                }
                for (dp, &p) in d_pre.iter_mut().zip(&cache.pre) {
                    if p <= 0.0 {
                        *dp = 0.0;
                    }
                }
                for (g, d) in gb1.iter_mut().zip(d_pre.iter()) {
                    *g += d;
                }
                for &(k, xk) in x {
                    for (g, d) in gw1[k * hidden..(k + 1) * hidden].iter_mut().zip(d_pre.iter()) {
                        *g += xk * d;
                    }
                }
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|w| w.is_finite())
    }
}

/// Max-shifted softmax.
pub(crate) fn softmax_in_place(v: &mut [f64]) {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        total += *x;
    }
    for x in v.iter_mut() {
        *x /= total;
    }
}

/// Pulls a gradient w.r.t. softmax probabilities back to the logits, in place.
pub(crate) fn softmax_backward(probs: &[f64], d: &mut [f64]) {
    let inner: f64 = probs.iter().zip(d.iter()).map(|(p, d)| p * d).sum();
    for (dk, p) in d.iter_mut().zip(probs) {
        *dk = p * (*dk - inner);
    }
}
