// Dense kernels shared by the tape's forward and backward rules. All matrices
// are row-major. Reductions use four fixed accumulators so results are
// deterministic and the loops vectorize.

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    let mut acc = [0.0f64; 4];
    for (x, y) in ca.zip(cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let mut s = (acc[0] + acc[2]) + (acc[1] + acc[3]);
    for (x, y) in ra.iter().zip(rb) {
        s += x * y;
    }
    s
}

/// `y += alpha * x`
#[inline]
pub(crate) fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// `y = W x` for `W: [m × k]`.
pub(crate) fn matvec(w: &[f64], x: &[f64], m: usize, k: usize, y: &mut [f64]) {
    for (i, yi) in y.iter_mut().enumerate().take(m) {
        *yi = dot(&w[i * k..(i + 1) * k], x);
    }
}

/// `y += Wᵀ g` for `W: [m × k]`, `g: [m]`, `y: [k]`.
pub(crate) fn matvec_t_acc(w: &[f64], g: &[f64], m: usize, k: usize, y: &mut [f64]) {
    for i in 0..m {
        if g[i] != 0.0 {
            axpy(g[i], &w[i * k..(i + 1) * k], y);
        }
    }
}

/// `W += g xᵀ` for `W: [m × k]`.
pub(crate) fn outer_acc(g: &[f64], x: &[f64], k: usize, w: &mut [f64]) {
    for (i, &gi) in g.iter().enumerate() {
        if gi != 0.0 {
            axpy(gi, x, &mut w[i * k..(i + 1) * k]);
        }
    }
}

/// `C += A B` for `A: [m × k]`, `B: [k × p]`.
pub(crate) fn matmul_acc(a: &[f64], b: &[f64], m: usize, k: usize, p: usize, c: &mut [f64]) {
    for i in 0..m {
        let crow = &mut c[i * p..(i + 1) * p];
        for kk in 0..k {
            let aik = a[i * k + kk];
            if aik != 0.0 {
                axpy(aik, &b[kk * p..(kk + 1) * p], crow);
            }
        }
    }
}

/// `C += A Bᵀ` for `A: [m × k]`, `B: [p × k]`.
pub(crate) fn matmul_bt_acc(a: &[f64], b: &[f64], m: usize, k: usize, p: usize, c: &mut [f64]) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..p {
            c[i * p + j] += dot(arow, &b[j * k..(j + 1) * k]);
        }
    }
}

/// `C += Aᵀ B` for `A: [m × k]`, `B: [m × p]`, `C: [k × p]`.
pub(crate) fn matmul_at_acc(a: &[f64], b: &[f64], m: usize, k: usize, p: usize, c: &mut [f64]) {
    for i in 0..m {
        let brow = &b[i * p..(i + 1) * p];
        for kk in 0..k {
            let aik = a[i * k + kk];
            if aik != 0.0 {
                axpy(aik, brow, &mut c[kk * p..(kk + 1) * p]);
            }
        }
    }
}

/// Numerically stable `log(exp(a) + exp(b))`, exact for infinite arguments.
#[inline]
pub(crate) fn log_add_exp(a: f64, b: f64) -> f64 {
    let m = a.max(b);
    if m == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    m + ((a - m).exp() + (b - m).exp()).ln()
}

pub(crate) fn softmax_in_place(x: &mut [f64]) {
    let m = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for v in x.iter_mut() {
        *v = (*v - m).exp();
        s += *v;
    }
    for v in x.iter_mut() {
        *v /= s;
    }
}

pub(crate) fn log_softmax_in_place(x: &mut [f64]) {
    let m = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + x.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
    for v in x.iter_mut() {
        *v -= lse;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dot_handles_remainders() {
        let a: Vec<f64> = (1..=7).map(f64::from).collect();
        assert_eq!(dot(&a, &a), 140.0);
        assert_eq!(dot(&[], &[]), 0.0);
    }

    #[test]
    fn log_add_exp_of_two_zeros_probabilities() {
        assert_eq!(log_add_exp(f64::NEG_INFINITY, f64::NEG_INFINITY), f64::NEG_INFINITY);
        assert_eq!(log_add_exp(f64::NEG_INFINITY, 1.5), 1.5);
        assert!((log_add_exp(0.0, 0.0) - 2f64.ln()).abs() < 1e-15);
    }
}
