#![allow(dead_code)]

use ctcattn::{Result, Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_EPS: f64 = 1e-5;
/// Magnitude below which derivatives are compared absolutely.
pub const FD_FLOOR: f64 = 1e-6;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn rand_vec(rng: &mut impl Rng, len: usize, scale: f64) -> Vec<f64> {
    (0..len).map(|_| rng.random_range(-scale..scale)).collect()
}

pub fn rand_tensor(rng: &mut impl Rng, shape: &[usize], scale: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), rand_vec(rng, n, scale)).unwrap()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FD_FLOOR)
}

/// `Σ_i w_i x_i` with fixed, irregular weights, turning any node into a
/// scalar with a non-degenerate gradient.
pub fn probe(tape: &mut Tape, x: Var) -> Var {
    let n = tape.value(x).len();
    let w: Vec<f64> = (0..n).map(|i| (1.3 * i as f64 + 0.7).sin()).collect();
    let w = tape.constant(Tensor::new(tape.shape(x).to_vec(), w).unwrap());
    let p = tape.mul(x, w).unwrap();
    tape.sum(p)
}

/// Largest relative error between the tape gradient of `f` and central
/// differences, over every element of every input.
pub fn fd_check<F>(inputs: &[Tensor], f: F) -> f64
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let eval = |ins: &[Tensor]| {
        let mut tape = Tape::new();
        let vars: Vec<Var> = ins.iter().map(|t| tape.leaf(t.clone())).collect();
        let out = f(&mut tape, &vars).unwrap();
        tape.scalar(out)
    };
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = f(&mut tape, &vars).unwrap();
    tape.backward(out).unwrap();
    let mut worst: f64 = 0.0;
    for (i, v) in vars.iter().enumerate() {
        let g = tape.grad(*v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; inputs[i].numel()]);
        for j in 0..inputs[i].numel() {
            let mut plus = inputs.to_vec();
            plus[i].data_mut()[j] += FD_EPS;
            let mut minus = inputs.to_vec();
            minus[i].data_mut()[j] -= FD_EPS;
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * FD_EPS);
            worst = worst.max(rel_err(g[j], numeric));
        }
    }
    worst
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// One LSTM step with explicit loops over gates and units.
pub fn lstm_ref(
    w_ih: &Tensor,
    w_hh: &Tensor,
    bias: &Tensor,
    x: &[f64],
    h: &[f64],
    c: &[f64],
) -> (Vec<f64>, Vec<f64>) {
    let d = h.len();
    let pre = |gate: usize, j: usize| {
        let row = gate * d + j;
        let mut s = bias.data()[row];
        for (i, xi) in x.iter().enumerate() {
            s += w_ih.get(&[row, i]) * xi;
        }
        for (i, hi) in h.iter().enumerate() {
            s += w_hh.get(&[row, i]) * hi;
        }
        s
    };
    let mut h_new = vec![0.0; d];
    let mut c_new = vec![0.0; d];
    for j in 0..d {
        let ig = sigmoid(pre(0, j));
        let fg = sigmoid(pre(1, j));
        let cand = pre(2, j).tanh();
        let og = sigmoid(pre(3, j));
        c_new[j] = fg * c[j] + ig * cand;
        h_new[j] = og * c_new[j].tanh();
    }
    (h_new, c_new)
}
