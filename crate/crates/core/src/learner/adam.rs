/// Magnitudes below this are set to exactly zero after each step.
const FLUSH_BELOW: f64 = 1e-100;

/// Weight decay alone shrinks unused weights geometrically until they go
/// subnormal, which is very slow on most CPUs.
#[inline(always)]
fn flush(x: f64) -> f64 {
    if x.abs() < FLUSH_BELOW {
        0.0
    } else {
        x
    }
}

/// Adaptive-moment optimizer with bias correction.
#[derive(Clone, Debug)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    /// L2 coefficient added to the gradient inside the update.
    weight_decay: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(n_params: usize, lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Adam {
            lr,
            beta1,
            beta2,
            eps,
            weight_decay: 0.0,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            t: 0,
        }
    }

    /// Adds `weight_decay · w` to every gradient entry before the update,
    /// which equals stepping on the loss plus `weight_decay / 2 · ‖w‖²`.
    pub fn with_weight_decay(mut self, weight_decay: f64) -> Self {
        self.weight_decay = weight_decay;
        self
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        debug_assert_eq!(params.len(), self.m.len());
        self.t = self.t.saturating_add(1);
        let (b1, b2) = (self.beta1, self.beta2);
        let step = self.lr * (1.0 - b2.powi(self.t)).sqrt() / (1.0 - b1.powi(self.t));
        let eps_hat = self.eps * (1.0 - b2.powi(self.t)).sqrt();
        let wd = self.weight_decay;
        let n = params.len();
        let (grad, m, v) = (&grad[..n], &mut self.m[..n], &mut self.v[..n]);
        for k in 0..n {
            let g = grad[k] + wd * params[k];
            let mk = flush(b1 * m[k] + (1.0 - b1) * g);
            let vk = flush(b2 * v[k] + (1.0 - b2) * g * g);
            m[k] = mk;
            v[k] = vk;
            params[k] = flush(params[k] - step * mk / (vk.sqrt() + eps_hat));
        }
    }
}
