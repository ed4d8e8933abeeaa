//! Attention inside the CTC output layer.
//!
//! For every output step `u` the head looks at the window of hidden frames
//! `h_{u-τ} … h_{u+τ}` (`C = 2τ + 1` slots), filters each one with its own
//! slice of a rank-3 tensor,
//!
//! ```text
//! g_t = W′_{u−t} h_t,   t ∈ [u−τ, u+τ]     (h_t = 0 outside the utterance)
//! ```
//!
//! and forms the context `c_u = γ Σ_t α_{u,t} g_t` with `γ = C`. Uniform
//! weights `α = 1/C` make `c_u` a plain time convolution of `h`. The
//! attention stages replace the uniform weights:
//!
//! * content: `e_{u,t} = vᵀ tanh(U s + W g_t + b)` with `s = z_{u−1}`, the
//!   previous step's logits;
//! * hybrid: adds `V f_{u,t}` where `f = F ∗ α_{u−1}` are location features;
//! * implicit LM: `s` becomes the hidden state of an LSTM fed with
//!   `[z_{u−1}; c_{u−1}]`;
//! * component attention: drops `v` so each slot gets an `n`-dim score,
//!   normalized over the window separately per component, and the context
//!   uses `γ Σ_t α_{u,t} ⊙ g_t`.
//!
//! Logits are `z_u = W_soft c_u + b_soft` and `y_u = softmax(z_u)`. With every
//! stage off the head is the plain CTC output layer `z_u = W_soft h_u + b_soft`.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lstm::{lstm_cell, LstmIds, LstmVars};
use crate::params::{ParamId, ParamSet};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Tolerance used by [`annotate`] before it reports an invariant fault.
pub const ANNOTATE_NORM_TOLERANCE: f64 = 1e-6;

/// Stages of the ablation ladder; each includes the ones before it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Vanilla,
    Tc,
    Ca,
    Ha,
    Lm,
    Coma,
}

impl Mode {
    pub const LADDER: [Mode; 6] = [Mode::Vanilla, Mode::Tc, Mode::Ca, Mode::Ha, Mode::Lm, Mode::Coma];

    pub fn features(self) -> Features {
        let at_least = |m: Mode| self as u8 >= m as u8;
        Features {
            time_conv: at_least(Mode::Tc),
            content: at_least(Mode::Ca),
            location: at_least(Mode::Ha),
            implicit_lm: at_least(Mode::Lm),
            component: at_least(Mode::Coma),
        }
    }

    /// Row label used in result tables.
    pub fn label(self) -> &'static str {
        match self {
            Mode::Vanilla => "Vanilla CTC",
            Mode::Tc => "TC",
            Mode::Ca => "+CA",
            Mode::Ha => "+HA",
            Mode::Lm => "+LM",
            Mode::Coma => "+COMA",
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Mode::Vanilla => "vanilla",
            Mode::Tc => "tc",
            Mode::Ca => "ca",
            Mode::Ha => "ha",
            Mode::Lm => "lm",
            Mode::Coma => "coma",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase();
        let key = key.trim_start_matches('+').trim_start_matches("tc+");
        Ok(match key {
            "vanilla" | "ctc" => Mode::Vanilla,
            "tc" => Mode::Tc,
            "ca" => Mode::Ca,
            "ha" => Mode::Ha,
            "lm" => Mode::Lm,
            "coma" => Mode::Coma,
            _ => return Err(Error::Config(format!("unknown mode {s:?}"))),
        })
    }
}

/// Individual switches behind a [`Mode`]. Combinations outside the ladder
/// (for example component attention without the implicit LM) are allowed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Features {
    pub time_conv: bool,
    pub content: bool,
    pub location: bool,
    pub implicit_lm: bool,
    pub component: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttnConfig {
    /// Half-width τ of the attention window.
    pub tau: usize,
    pub features: Features,
    /// Hidden dimension `n` of `h`, `g` and `c`.
    pub hidden: usize,
    /// Output labels `K`, blank included.
    pub labels: usize,
    /// Number of location filters.
    pub loc_filters: usize,
    /// Width of each location filter.
    pub loc_width: usize,
    /// Context scale; `None` means `γ = C`.
    pub gamma: Option<f64>,
}

impl AttnConfig {
    pub fn new(mode: Mode, tau: usize, hidden: usize, labels: usize) -> Self {
        AttnConfig {
            tau,
            features: mode.features(),
            hidden,
            labels,
            loc_filters: 4,
            loc_width: 3,
            gamma: None,
        }
    }

    /// Window length `C = 2τ + 1`.
    pub fn window(&self) -> usize {
        2 * self.tau + 1
    }

    pub fn gamma(&self) -> f64 {
        self.gamma.unwrap_or(self.window() as f64)
    }

    /// The ladder stage matching these features, if any.
    pub fn mode(&self) -> Option<Mode> {
        Mode::LADDER.into_iter().find(|m| m.features() == self.features)
    }

    pub fn validate(&self) -> Result<()> {
        let f = &self.features;
        if self.hidden == 0 || self.labels < 2 {
            return Err(Error::Config("need hidden > 0 and at least two labels".into()));
        }
        if (f.content || f.location || f.implicit_lm || f.component) && !f.time_conv {
            return Err(Error::Config("attention stages require time convolution".into()));
        }
        if (f.location || f.implicit_lm || f.component) && !f.content {
            return Err(Error::Config("location, LM and component attention require content scoring".into()));
        }
        if f.location && (self.loc_width == 0 || self.loc_filters == 0) {
            return Err(Error::Config("location filters need width and count > 0".into()));
        }
        if f.location && self.loc_width > self.window() {
            return Err(Error::Config(format!(
                "location filter width {} exceeds window {}",
                self.loc_width,
                self.window()
            )));
        }
        Ok(())
    }

    /// Input dimension of the attention state projection `U`.
    pub fn state_dim(&self) -> usize {
        if self.features.implicit_lm {
            self.hidden
        } else {
            self.labels
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ScoreIds {
    pub u: ParamId,
    pub w: ParamId,
    pub b: ParamId,
    /// Absent under component attention.
    pub v: Option<ParamId>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LocationIds {
    /// `[n_f × w_f]`
    pub filters: ParamId,
    /// `[n × n_f]`
    pub proj: ParamId,
}

/// Parameter handles of the head.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HeadParams {
    pub w_soft: ParamId,
    pub b_soft: ParamId,
    /// `W′: [C × n × n]`, slab `k` applied to `h_t` with `u − t = k − τ`.
    pub tc: Option<ParamId>,
    pub score: Option<ScoreIds>,
    pub location: Option<LocationIds>,
    pub lm: Option<LstmIds>,
}

impl HeadParams {
    pub fn init<R: Rng + ?Sized>(cfg: &AttnConfig, params: &mut ParamSet, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let (n, k, c) = (cfg.hidden, cfg.labels, cfg.window());
        let f = cfg.features;
        let w_soft = params.add_uniform("head.soft.w", &[k, n], n, rng);
        let b_soft = params.add_uniform("head.soft.b", &[k], n, rng);
        let tc = f
            .time_conv
            .then(|| params.add_uniform("head.tc.w", &[c, n, n], c * n, rng));
        let score = f.content.then(|| {
            let s = cfg.state_dim();
            ScoreIds {
                u: params.add_uniform("head.score.u", &[n, s], s, rng),
                w: params.add_uniform("head.score.w", &[n, n], n, rng),
                b: params.add_uniform("head.score.b", &[n], n, rng),
                v: (!f.component).then(|| params.add_uniform("head.score.v", &[n], n, rng)),
            }
        });
        let location = f.location.then(|| LocationIds {
            filters: params.add_uniform("head.loc.f", &[cfg.loc_filters, cfg.loc_width], cfg.loc_width, rng),
            proj: params.add_uniform("head.loc.v", &[n, cfg.loc_filters], cfg.loc_filters, rng),
        });
        let lm = f
            .implicit_lm
            .then(|| LstmIds::init(params, "head.lm", k + n, n, rng));
        Ok(HeadParams {
            w_soft,
            b_soft,
            tc,
            score,
            location,
            lm,
        })
    }

    /// Looks up the handles of an already populated set by name.
    pub fn locate(cfg: &AttnConfig, params: &ParamSet) -> Result<Self> {
        cfg.validate()?;
        let find = |name: &str| {
            params
                .id(name)
                .ok_or_else(|| Error::Format(format!("missing parameter {name}")))
        };
        let f = cfg.features;
        Ok(HeadParams {
            w_soft: find("head.soft.w")?,
            b_soft: find("head.soft.b")?,
            tc: f.time_conv.then(|| find("head.tc.w")).transpose()?,
            score: if f.content {
                Some(ScoreIds {
                    u: find("head.score.u")?,
                    w: find("head.score.w")?,
                    b: find("head.score.b")?,
                    v: (!f.component).then(|| find("head.score.v")).transpose()?,
                })
            } else {
                None
            },
            location: if f.location {
                Some(LocationIds {
                    filters: find("head.loc.f")?,
                    proj: find("head.loc.v")?,
                })
            } else {
                None
            },
            lm: if f.implicit_lm {
                Some(LstmIds {
                    w_ih: find("head.lm.w_ih")?,
                    w_hh: find("head.lm.w_hh")?,
                    bias: find("head.lm.bias")?,
                })
            } else {
                None
            },
        })
    }

    pub fn bind(&self, tape: &mut Tape, params: &ParamSet) -> HeadVars {
        HeadVars {
            w_soft: tape.param(params, self.w_soft),
            b_soft: tape.param(params, self.b_soft),
            tc: self.tc.map(|id| tape.param(params, id)),
            score: self.score.map(|s| ScoreVars {
                u: tape.param(params, s.u),
                w: tape.param(params, s.w),
                b: tape.param(params, s.b),
                v: s.v.map(|id| tape.param(params, id)),
            }),
            location: self.location.map(|l| LocationVars {
                filters: tape.param(params, l.filters),
                proj: tape.param(params, l.proj),
            }),
            lm: self.lm.map(|ids| ids.bind(tape, params)),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct ScoreVars {
    pub u: Var,
    pub w: Var,
    pub b: Var,
    pub v: Option<Var>,
}

#[derive(Clone, Copy, Debug)]
pub struct LocationVars {
    pub filters: Var,
    pub proj: Var,
}

/// Head parameters bound to a tape.
#[derive(Clone, Debug)]
pub struct HeadVars {
    pub w_soft: Var,
    pub b_soft: Var,
    pub tc: Option<Var>,
    pub score: Option<ScoreVars>,
    pub location: Option<LocationVars>,
    pub lm: Option<LstmVars>,
}

/// Recurrent carry between output steps.
#[derive(Clone, Copy, Debug)]
pub struct AttentionState {
    /// `α_{u−1}`: `[C]`, or `[C × n]` under component attention.
    pub alpha_prev: Var,
    /// `z_{u−1}`: `[K]`
    pub z_prev: Var,
    /// `c_{u−1}`: `[n]`
    pub c_prev: Var,
    /// Implicit-LM hidden and cell state, `[n]` each.
    pub lm_h: Option<Var>,
    pub lm_c: Option<Var>,
}

impl AttentionState {
    /// State before the first step: uniform weights and zero vectors.
    pub fn initial(tape: &mut Tape, cfg: &AttnConfig) -> Self {
        let c = cfg.window();
        let alpha = if cfg.features.component {
            Tensor::new(vec![c, cfg.hidden], vec![1.0 / c as f64; c * cfg.hidden])
                .expect("shape matches data")
        } else {
            Tensor::vector(vec![1.0 / c as f64; c])
        };
        AttentionState {
            alpha_prev: tape.constant(alpha),
            z_prev: tape.zeros(vec![cfg.labels]),
            c_prev: tape.zeros(vec![cfg.hidden]),
            lm_h: cfg.features.implicit_lm.then(|| tape.zeros(vec![cfg.hidden])),
            lm_c: cfg.features.implicit_lm.then(|| tape.zeros(vec![cfg.hidden])),
        }
    }
}

/// Largest deviation from 1 of the sums of `alpha` over the window (per
/// component for a `[C × n]` block).
pub fn normalization_error(tape: &Tape, alpha: Var) -> f64 {
    let a = tape.value(alpha);
    let shape = tape.shape(alpha);
    let cols = if shape.len() == 2 { shape[1] } else { 1 };
    (0..cols)
        .map(|j| (a.iter().skip(j).step_by(cols).sum::<f64>() - 1.0).abs())
        .fold(0.0, f64::max)
}

/// Filtered window `g_{u−τ} … g_{u+τ}` with `g_t = W′_{u−t} h_t`; slots
/// outside `[0, T)` are zero vectors.
pub fn tc_filter(tape: &mut Tape, h: Var, w_prime: Var, u: usize, tau: usize) -> Result<Vec<Var>> {
    let (len, n) = match tape.shape(h) {
        &[t, n] => (t, n),
        s => return Err(Error::shape("tc_filter", s, &[0, 0])),
    };
    let c = 2 * tau + 1;
    if tape.shape(w_prime) != [c, n, n] {
        return Err(Error::shape("tc_filter", tape.shape(w_prime), &[c, n, n]));
    }
    if u >= len {
        return Err(Error::shape("tc_filter", &[len], &[u]));
    }
    let mut g = Vec::with_capacity(c);
    for s in 0..c {
        let t = u as isize - tau as isize + s as isize;
        if (0..len as isize).contains(&t) {
            let h_t = tape.take(h, t as usize)?;
            let w = tape.take(w_prime, c - 1 - s)?;
            g.push(tape.matvec(w, h_t)?);
        } else {
            g.push(tape.zeros(vec![n]));
        }
    }
    Ok(g)
}

/// Context vector `γ Σ_t α_t g_t`, or `γ Σ_t α_t ⊙ g_t` when `alpha` is a
/// `[C × n]` block. `g` is the stacked window `[C × n]`.
pub fn annotate(tape: &mut Tape, alpha: Var, g: Var, gamma: f64) -> Result<Var> {
    let err = normalization_error(tape, alpha);
    if !(err <= ANNOTATE_NORM_TOLERANCE) {
        return Err(Error::InvariantFault(format!(
            "attention weights off normalization by {err:e}"
        )));
    }
    let weighted = if tape.shape(alpha).len() == 2 {
        let prod = tape.mul(alpha, g)?;
        tape.sum_rows(prod)?
    } else {
        tape.vecmat(alpha, g)?
    };
    Ok(tape.scale(weighted, gamma))
}

/// Location features `f = F ∗ α_{u−1}` for every slot of window `u`:
/// `[C × n_f]`. The previous weights are aligned by absolute time (window
/// `u` starts one frame later than window `u − 1`); the last slot has no
/// predecessor and reads 0. A `[C × n]` component block is first averaged
/// over components.
pub fn location_features(tape: &mut Tape, alpha_prev: Var, loc: &LocationVars) -> Result<Var> {
    let per_slot = match tape.shape(alpha_prev) {
        &[_] => alpha_prev,
        &[_, n] => {
            let mean = tape.constant(Tensor::vector(vec![1.0 / n as f64; n]));
            tape.matvec(alpha_prev, mean)?
        }
        s => return Err(Error::shape("location_features", s, &[0])),
    };
    let aligned = tape.shift(per_slot, 1, 0.0)?;
    tape.conv1d_same(aligned, loc.filters)
}

/// Pre-activations `U s + W g_t + b (+ V f_t)` for every slot: `[C × n]`.
fn score_preactivations(
    tape: &mut Tape,
    state: Var,
    g: Var,
    score: &ScoreVars,
    loc_feats: Option<(Var, Var)>,
) -> Result<Var> {
    let us = tape.matvec(score.u, state)?;
    let usb = tape.add(us, score.b)?;
    let wg = tape.matmul_bt(g, score.w)?;
    let mut pre = tape.add_row(wg, usb)?;
    if let Some((feats, proj)) = loc_feats {
        let vf = tape.matmul_bt(feats, proj)?;
        pre = tape.add(pre, vf)?;
    }
    Ok(pre)
}

fn one_row(tape: &mut Tape, g_t: Var) -> Result<Var> {
    tape.stack(&[g_t])
}

/// Content score `vᵀ tanh(U s + W g_t + b)` for one slot.
pub fn score_content(tape: &mut Tape, state: Var, g_t: Var, score: &ScoreVars) -> Result<Var> {
    let v = score
        .v
        .ok_or_else(|| Error::Config("content score needs v".into()))?;
    let g = one_row(tape, g_t)?;
    let pre = score_preactivations(tape, state, g, score, None)?;
    let e = tape.tanh(pre)?;
    let ev = tape.matvec(e, v)?;
    tape.take(ev, 0)
}

/// Hybrid score `vᵀ tanh(U s + W g_t + V f_{u,t} + b)` for window slot `slot`.
pub fn score_hybrid(
    tape: &mut Tape,
    state: Var,
    alpha_prev: Var,
    slot: usize,
    g_t: Var,
    score: &ScoreVars,
    loc: &LocationVars,
) -> Result<Var> {
    let v = score
        .v
        .ok_or_else(|| Error::Config("hybrid score needs v".into()))?;
    let feats = location_features(tape, alpha_prev, loc)?;
    let f_t = tape.take(feats, slot)?;
    let f_row = one_row(tape, f_t)?;
    let g = one_row(tape, g_t)?;
    let pre = score_preactivations(tape, state, g, score, Some((f_row, loc.proj)))?;
    let e = tape.tanh(pre)?;
    let ev = tape.matvec(e, v)?;
    tape.take(ev, 0)
}

/// Component score `tanh(U s + W g_t [+ V f_{u,t}] + b)`: `[n]`.
pub fn coma_score(
    tape: &mut Tape,
    state: Var,
    alpha_prev: Var,
    slot: usize,
    g_t: Var,
    score: &ScoreVars,
    loc: Option<&LocationVars>,
) -> Result<Var> {
    let g = one_row(tape, g_t)?;
    let loc_row = match loc {
        Some(l) => {
            let feats = location_features(tape, alpha_prev, l)?;
            let f_t = tape.take(feats, slot)?;
            Some((one_row(tape, f_t)?, l.proj))
        }
        None => None,
    };
    let pre = score_preactivations(tape, state, g, score, loc_row)?;
    let e = tape.tanh(pre)?;
    tape.take(e, 0)
}

/// Softmax of window scores `[C]`.
pub fn normalize_scores(tape: &mut Tape, e: Var) -> Var {
    tape.softmax(e)
}

/// Per-component softmax over the window of a `[C × n]` score block.
pub fn coma_normalize(tape: &mut Tape, e: Var) -> Result<Var> {
    tape.softmax_cols(e)
}

/// One implicit-LM step on `[z_{u−1}; c_{u−1}]`; returns the new hidden
/// state (the attention state vector) and cell.
pub fn lm_step(
    tape: &mut Tape,
    z_prev: Var,
    c_prev: Var,
    lm_h: Var,
    lm_c: Var,
    lm: &LstmVars,
) -> Result<(Var, Var)> {
    let x = tape.concat(&[z_prev, c_prev])?;
    lstm_cell(tape, x, lm_h, lm_c, lm)
}

/// Output of one [`head_step`].
#[derive(Clone, Copy, Debug)]
pub struct HeadStep {
    /// Logits `z_u`: `[K]`
    pub logits: Var,
    /// Posteriors `y_u = softmax(z_u)`
    pub posteriors: Var,
    /// Weights used for this step (uniform for pure time convolution).
    pub alpha: Option<Var>,
    pub state: AttentionState,
}

/// Computes step `u` of the head from the hidden sequence `h: [T × n]`.
pub fn head_step(
    tape: &mut Tape,
    h: Var,
    u: usize,
    state: &AttentionState,
    cfg: &AttnConfig,
    p: &HeadVars,
) -> Result<HeadStep> {
    let f = cfg.features;
    let Some(w_prime) = p.tc.filter(|_| f.time_conv) else {
        let h_u = tape.take(h, u)?;
        let wz = tape.matvec(p.w_soft, h_u)?;
        let z = tape.add(wz, p.b_soft)?;
        let y = tape.softmax(z);
        return Ok(HeadStep {
            logits: z,
            posteriors: y,
            alpha: None,
            state: AttentionState { z_prev: z, ..*state },
        });
    };

    let window = tc_filter(tape, h, w_prime, u, cfg.tau)?;
    let g = tape.stack(&window)?;
    let mut next = *state;
    let alpha = match p.score.filter(|_| f.content) {
        None => {
            let c = cfg.window();
            tape.constant(Tensor::vector(vec![1.0 / c as f64; c]))
        }
        Some(score) => {
            let query = match (&p.lm, state.lm_h, state.lm_c) {
                (Some(lm), Some(lm_h), Some(lm_c)) if f.implicit_lm => {
                    let (h_lm, c_lm) = lm_step(tape, state.z_prev, state.c_prev, lm_h, lm_c, lm)?;
                    next.lm_h = Some(h_lm);
                    next.lm_c = Some(c_lm);
                    h_lm
                }
                _ if f.implicit_lm => {
                    return Err(Error::Config("implicit LM enabled without LM state".into()))
                }
                _ => state.z_prev,
            };
            let loc = match p.location.filter(|_| f.location) {
                Some(l) => Some((location_features(tape, state.alpha_prev, &l)?, l.proj)),
                None => None,
            };
            let pre = score_preactivations(tape, query, g, &score, loc)?;
            let e = tape.tanh(pre)?;
            if f.component {
                coma_normalize(tape, e)?
            } else {
                let v = score
                    .v
                    .ok_or_else(|| Error::Config("scalar attention needs v".into()))?;
                let scores = tape.matvec(e, v)?;
                normalize_scores(tape, scores)
            }
        }
    };
    let c = annotate(tape, alpha, g, cfg.gamma())?;
    let wz = tape.matvec(p.w_soft, c)?;
    let z = tape.add(wz, p.b_soft)?;
    let y = tape.softmax(z);
    next.alpha_prev = alpha;
    next.z_prev = z;
    next.c_prev = c;
    Ok(HeadStep {
        logits: z,
        posteriors: y,
        alpha: Some(alpha),
        state: next,
    })
}

/// All steps of the head over `h: [T × n]`.
#[derive(Clone, Debug)]
pub struct HeadOutput {
    pub steps: Vec<HeadStep>,
    /// Stacked logits `[T × K]`.
    pub logits: Var,
}

pub fn run_head(tape: &mut Tape, h: Var, cfg: &AttnConfig, p: &HeadVars) -> Result<HeadOutput> {
    let len = tape.shape(h)[0];
    let mut state = AttentionState::initial(tape, cfg);
    let mut steps = Vec::with_capacity(len);
    for u in 0..len {
        let step = head_step(tape, h, u, &state, cfg, p)?;
        state = step.state;
        steps.push(step);
    }
    let rows: Vec<Var> = steps.iter().map(|s| s.logits).collect();
    let logits = tape.stack(&rows)?;
    Ok(HeadOutput { steps, logits })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ladder_is_cumulative() {
        let mut prev = 0;
        for m in Mode::LADDER {
            let f = m.features();
            let on = [f.time_conv, f.content, f.location, f.implicit_lm, f.component]
                .iter()
                .filter(|b| **b)
                .count();
            assert!(on >= prev);
            prev = on;
            assert_eq!(m.name().parse::<Mode>().unwrap(), m);
        }
        assert_eq!("+COMA".parse::<Mode>().unwrap(), Mode::Coma);
        assert_eq!("tc+ca".parse::<Mode>().unwrap(), Mode::Ca);
        assert!("attention".parse::<Mode>().is_err());
    }

    #[test]
    fn window_and_gamma() {
        let cfg = AttnConfig::new(Mode::Coma, 4, 8, 28);
        assert_eq!(cfg.window(), 9);
        assert_eq!(cfg.gamma(), 9.0);
        assert_eq!(cfg.mode(), Some(Mode::Coma));
    }

    #[test]
    fn location_width_must_fit_window() {
        let mut cfg = AttnConfig::new(Mode::Ha, 1, 4, 5);
        cfg.loc_width = 5;
        assert!(cfg.validate().is_err());
        cfg.loc_width = 3;
        assert!(cfg.validate().is_ok());
    }

    #[test]
    fn annotate_rejects_unnormalized_weights() {
        let mut tape = Tape::new();
        let alpha = tape.constant(Tensor::vector(vec![0.5, 0.6]));
        let g = tape.zeros(vec![2, 3]);
        assert!(matches!(annotate(&mut tape, alpha, g, 2.0), Err(Error::InvariantFault(_))));
    }

    #[test]
    fn state_projection_changes_with_lm() {
        assert_eq!(AttnConfig::new(Mode::Ha, 2, 8, 5).state_dim(), 5);
        assert_eq!(AttnConfig::new(Mode::Lm, 2, 8, 5).state_dim(), 8);
    }
}
