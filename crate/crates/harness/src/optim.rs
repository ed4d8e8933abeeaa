//! SGD with momentum and global-norm clipping.

use ctcattn::ParamSet;

/// Rescales `grads` in place so their joint L2 norm is at most `max_norm`;
/// returns the norm before clipping.
pub fn clip_global_norm(grads: &mut [Vec<f64>], max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .flat_map(|g| g.iter())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt();
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        grads.iter_mut().flat_map(|g| g.iter_mut()).for_each(|v| *v *= s);
    }
    norm
}

#[derive(Clone, Debug)]
pub struct Momentum {
    pub lr: f64,
    pub momentum: f64,
    velocity: Vec<Vec<f64>>,
}

impl Momentum {
    pub fn new(params: &ParamSet, lr: f64, momentum: f64) -> Self {
        Momentum {
            lr,
            momentum,
            velocity: params.iter().map(|(_, t)| vec![0.0; t.numel()]).collect(),
        }
    }

    /// `v ← μ v + g`, `θ ← θ − lr · v`.
    pub fn step(&mut self, params: &mut ParamSet, grads: &[Vec<f64>]) {
        for (((_, t), v), g) in params.iter_mut().zip(&mut self.velocity).zip(grads) {
            for ((p, v), g) in t.data_mut().iter_mut().zip(v.iter_mut()).zip(g) {
                *v = self.momentum * *v + g;
                *p -= self.lr * *v;
            }
        }
    }
}
