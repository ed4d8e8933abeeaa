mod common;

use common::*;
use ctcattn::encoder::{encode, encode_hidden, EncoderParams};
use ctcattn::features::stack_and_skip;
use ctcattn::{EncoderConfig, FeatureSequence, ParamSet, Tape};
use rand::Rng;

fn cfg(bidirectional: bool, layers: usize) -> EncoderConfig {
    EncoderConfig {
        input_dim: 3,
        layers,
        cells_per_dir: 4,
        bidirectional,
        stack: 1,
        skip: 1,
        proj_dim: 5,
    }
}

fn random_features(r: &mut impl Rng, frames: usize, dim: usize) -> FeatureSequence {
    FeatureSequence::new(rand_vec(r, frames * dim, 1.0), dim, 10.0).unwrap()
}

fn run(cfg: &EncoderConfig, params: &ParamSet, ids: &EncoderParams, f: &FeatureSequence) -> Vec<f64> {
    let mut tape = Tape::new();
    let vars = ids.bind(&mut tape, params);
    let h = encode(&mut tape, f, cfg, &vars).unwrap();
    tape.value(h).to_vec()
}

fn run_hidden(params: &ParamSet, ids: &EncoderParams, f: &FeatureSequence) -> Vec<f64> {
    let mut tape = Tape::new();
    let vars = ids.bind(&mut tape, params);
    let h = encode_hidden(&mut tape, f, &vars).unwrap();
    tape.value(h).to_vec()
}

#[test]
fn zero_parameters_give_zero_output() {
    let c = cfg(true, 2);
    let mut params = ParamSet::new();
    let ids = EncoderParams::init(&c, &mut params, &mut rng(1));
    params.iter_mut().for_each(|(_, t)| t.data_mut().fill(0.0));
    let f = random_features(&mut rng(2), 4, 3);
    assert!(run(&c, &params, &ids, &f).iter().all(|&v| v == 0.0));
}

#[test]
fn unidirectional_encoder_is_causal() {
    let c = cfg(false, 2);
    let mut params = ParamSet::new();
    let ids = EncoderParams::init(&c, &mut params, &mut rng(3));
    let mut r = rng(4);
    let frames = 7;
    let f = random_features(&mut r, frames, 3);
    let base = run(&c, &params, &ids, &f);
    for t_prime in 0..frames {
        let mut data = f.data().to_vec();
        for v in &mut data[t_prime * 3..(t_prime + 1) * 3] {
            *v += r.random_range(0.5..2.0);
        }
        let g = FeatureSequence::new(data, 3, 10.0).unwrap();
        let out = run(&c, &params, &ids, &g);
        let n = c.proj_dim;
        assert_eq!(base[..t_prime * n], out[..t_prime * n], "perturbing {t_prime}");
        assert_ne!(base[t_prime * n..(t_prime + 1) * n], out[t_prime * n..(t_prime + 1) * n]);
    }
}

/// One-layer encoder written as explicit per-frame loops.
fn reference_encoder(c: &EncoderConfig, params: &ParamSet, f: &FeatureSequence) -> Vec<f64> {
    let d = c.cells_per_dir;
    let frames = stack_and_skip(f, c.stack, c.skip).unwrap();
    let len = frames.len();
    let mut dirs = Vec::new();
    for (name, reverse) in [("fwd", false), ("bwd", true)].into_iter().take(c.directions()) {
        let p = |s: &str| params.by_name(&format!("enc.l0.{name}.{s}")).unwrap();
        let (w_ih, w_hh, b) = (p("w_ih"), p("w_hh"), p("bias"));
        let mut h = vec![0.0; d];
        let mut cell = vec![0.0; d];
        let mut out = vec![vec![0.0; d]; len];
        for step in 0..len {
            let t = if reverse { len - 1 - step } else { step };
            (h, cell) = lstm_ref(w_ih, w_hh, b, frames.frame(t), &h, &cell);
            out[t] = h.clone();
        }
        dirs.push(out);
    }
    let pw = params.by_name("enc.proj.w").unwrap();
    let pb = params.by_name("enc.proj.b").unwrap();
    let mut result = Vec::new();
    for t in 0..len {
        let hidden: Vec<f64> = dirs.iter().flat_map(|dir| dir[t].iter().copied()).collect();
        for i in 0..c.proj_dim {
            let mut s = pb.data()[i];
            for (j, hj) in hidden.iter().enumerate() {
                s += pw.get(&[i, j]) * hj;
            }
            result.push(s);
        }
    }
    result
}

#[test]
fn one_layer_matches_scalar_loop_reference() {
    for (bidirectional, stack, skip) in [(false, 1, 1), (true, 1, 1), (true, 2, 2)] {
        let mut c = cfg(bidirectional, 1);
        c.stack = stack;
        c.skip = skip;
        let mut params = ParamSet::new();
        let ids = EncoderParams::init(&c, &mut params, &mut rng(5));
        let f = random_features(&mut rng(6), 3 * skip, 3);
        let got = run(&c, &params, &ids, &f);
        let want = reference_encoder(&c, &params, &f);
        assert_eq!(got.len(), 3 * c.proj_dim);
        assert!(max_abs_diff(&got, &want) < 1e-12);
    }
}

#[test]
fn bidirectional_reversal_symmetry() {
    // Reverse the input and swap each layer's direction parameters. Upper
    // layers also see their input halves swapped, so their input weight
    // columns are swapped too. The pre-projection output is then the reversed
    // sequence with its two halves exchanged.
    let c = cfg(true, 2);
    let d = c.cells_per_dir;
    let mut params = ParamSet::new();
    let ids = EncoderParams::init(&c, &mut params, &mut rng(7));
    let mut swapped = params.clone();
    for l in 0..c.layers {
        for part in ["w_ih", "w_hh", "bias"] {
            let fwd = format!("enc.l{l}.fwd.{part}");
            let bwd = format!("enc.l{l}.bwd.{part}");
            let mut a = params.by_name(&bwd).unwrap().clone();
            let mut b = params.by_name(&fwd).unwrap().clone();
            if l > 0 && part == "w_ih" {
                for t in [&mut a, &mut b] {
                    let cols = t.shape()[1];
                    for row in t.data_mut().chunks_exact_mut(cols) {
                        let (x, y) = row.split_at_mut(d);
                        x.swap_with_slice(y);
                    }
                }
            }
            *swapped.by_name_mut(&fwd).unwrap() = a;
            *swapped.by_name_mut(&bwd).unwrap() = b;
        }
    }
    let frames = 5;
    let f = random_features(&mut rng(8), frames, 3);
    let rev_rows: Vec<Vec<f64>> = (0..frames).rev().map(|t| f.frame(t).to_vec()).collect();
    let rev = FeatureSequence::from_rows(&rev_rows).unwrap();
    let base = run_hidden(&params, &ids, &f);
    let mirrored = run_hidden(&swapped, &ids, &rev);
    let w = 2 * d;
    for t in 0..frames {
        let src = &base[(frames - 1 - t) * w..(frames - t) * w];
        let want: Vec<f64> = src[d..].iter().chain(&src[..d]).copied().collect();
        assert!(max_abs_diff(&mirrored[t * w..(t + 1) * w], &want) < 1e-12);
    }
}

#[test]
fn output_length_and_determinism() {
    let mut c = cfg(true, 2);
    c.stack = 3;
    c.skip = 3;
    let mut params = ParamSet::new();
    let ids = EncoderParams::init(&c, &mut params, &mut rng(9));
    let f = random_features(&mut rng(10), 10, 3);
    let a = run(&c, &params, &ids, &f);
    let b = run(&c, &params, &ids, &f);
    assert_eq!(a.len(), 4 * c.proj_dim);
    assert_eq!(c.output_len(10), 4);
    assert_eq!(a, b);
}

#[test]
fn feature_dimension_mismatch_is_an_error() {
    let c = cfg(false, 1);
    let mut params = ParamSet::new();
    let ids = EncoderParams::init(&c, &mut params, &mut rng(11));
    let f = random_features(&mut rng(12), 3, 4);
    let mut tape = Tape::new();
    let vars = ids.bind(&mut tape, &params);
    assert!(encode(&mut tape, &f, &c, &vars).is_err());
}

#[test]
fn large_presets_have_documented_shapes() {
    let uni = EncoderConfig::large_unidirectional();
    assert_eq!(uni.frame_dim(), 640);
    assert_eq!(uni.cells_per_dir * uni.directions(), 1024);
    let bi = EncoderConfig::large_bidirectional();
    assert_eq!(bi.cells_per_dir * bi.directions(), 1024);
    assert_eq!((bi.proj_dim, bi.skip), (512, 3));
}
