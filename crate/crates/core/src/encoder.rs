//! Stacked uni/bi-directional LSTM encoder with a linear output projection.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{stack_and_skip, FeatureSequence};
use crate::lstm::{lstm_recur, LstmIds, LstmVars};
use crate::params::{ParamId, ParamSet};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderConfig {
    /// Base feature dimension before stacking.
    pub input_dim: usize,
    pub layers: usize,
    pub cells_per_dir: usize,
    pub bidirectional: bool,
    /// Frames stacked into one input vector.
    pub stack: usize,
    /// Frame decimation factor.
    pub skip: usize,
    /// Output dimension `n` after projection.
    pub proj_dim: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            input_dim: 16,
            layers: 2,
            cells_per_dir: 64,
            bidirectional: false,
            stack: 1,
            skip: 1,
            proj_dim: 64,
        }
    }
}

impl EncoderConfig {
    /// 5×1024 unidirectional LSTM over 8 stacked 80-dim frames, skip 3,
    /// projected to 512.
    pub fn large_unidirectional() -> Self {
        EncoderConfig {
            input_dim: 80,
            layers: 5,
            cells_per_dir: 1024,
            bidirectional: false,
            stack: 8,
            skip: 3,
            proj_dim: 512,
        }
    }

    /// 5×(2×512) bidirectional LSTM over 3 stacked 80-dim frames, skip 3,
    /// projected to 512.
    pub fn large_bidirectional() -> Self {
        EncoderConfig {
            input_dim: 80,
            layers: 5,
            cells_per_dir: 512,
            bidirectional: true,
            stack: 3,
            skip: 3,
            proj_dim: 512,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.stack == 0 || self.skip == 0 {
            return Err(Error::Config("stack and skip must be ≥ 1".into()));
        }
        if self.proj_dim == 0 || self.layers == 0 || self.cells_per_dir == 0 || self.input_dim == 0 {
            return Err(Error::Config(
                "encoder layers, cells, input and projection dims must be > 0".into(),
            ));
        }
        Ok(())
    }

    pub fn directions(&self) -> usize {
        if self.bidirectional {
            2
        } else {
            1
        }
    }

    /// Dimension of one stacked input frame.
    pub fn frame_dim(&self) -> usize {
        self.input_dim * self.stack
    }

    /// Number of encoder frames produced from `raw_frames` input frames.
    pub fn output_len(&self, raw_frames: usize) -> usize {
        raw_frames.div_ceil(self.skip)
    }
}

/// Parameter handles of the encoder.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncoderParams {
    /// `layers[l][d]`, direction 0 forward and 1 backward.
    pub layers: Vec<Vec<LstmIds>>,
    pub proj_w: ParamId,
    pub proj_b: ParamId,
}

fn lstm_prefix(layer: usize, dir: usize) -> String {
    format!("enc.l{layer}.{}", if dir == 0 { "fwd" } else { "bwd" })
}

impl EncoderParams {
    pub fn init<R: Rng + ?Sized>(cfg: &EncoderConfig, params: &mut ParamSet, rng: &mut R) -> Self {
        let cells = cfg.cells_per_dir;
        let mut layers = Vec::with_capacity(cfg.layers);
        for l in 0..cfg.layers {
            let input = if l == 0 {
                cfg.frame_dim()
            } else {
                cells * cfg.directions()
            };
            let dirs = (0..cfg.directions())
                .map(|d| LstmIds::init(params, &lstm_prefix(l, d), input, cells, rng))
                .collect();
            layers.push(dirs);
        }
        let top = cells * cfg.directions();
        let proj_w = params.add_uniform("enc.proj.w", &[cfg.proj_dim, top], top, rng);
        let proj_b = params.add_uniform("enc.proj.b", &[cfg.proj_dim], top, rng);
        EncoderParams {
            layers,
            proj_w,
            proj_b,
        }
    }

    /// Looks up the handles of an already populated set by name.
    pub fn locate(cfg: &EncoderConfig, params: &ParamSet) -> Result<Self> {
        let find = |name: String| {
            params
                .id(&name)
                .ok_or_else(|| Error::Format(format!("missing parameter {name}")))
        };
        let mut layers = Vec::with_capacity(cfg.layers);
        for l in 0..cfg.layers {
            let mut dirs = Vec::new();
            for d in 0..cfg.directions() {
                let p = lstm_prefix(l, d);
                dirs.push(LstmIds {
                    w_ih: find(format!("{p}.w_ih"))?,
                    w_hh: find(format!("{p}.w_hh"))?,
                    bias: find(format!("{p}.bias"))?,
                });
            }
            layers.push(dirs);
        }
        Ok(EncoderParams {
            layers,
            proj_w: find("enc.proj.w".into())?,
            proj_b: find("enc.proj.b".into())?,
        })
    }

    pub fn bind(&self, tape: &mut Tape, params: &ParamSet) -> EncoderVars {
        EncoderVars {
            layers: self
                .layers
                .iter()
                .map(|dirs| dirs.iter().map(|ids| ids.bind(tape, params)).collect())
                .collect(),
            proj_w: tape.param(params, self.proj_w),
            proj_b: tape.param(params, self.proj_b),
        }
    }
}

/// Encoder parameters bound to a tape.
#[derive(Clone, Debug)]
pub struct EncoderVars {
    pub layers: Vec<Vec<LstmVars>>,
    pub proj_w: Var,
    pub proj_b: Var,
}

fn run_direction(tape: &mut Tape, x: Var, p: &LstmVars, reverse: bool) -> Result<Vec<Var>> {
    let len = tape.shape(x)[0];
    let d = p.hidden(tape);
    let pre = tape.matmul_bt(x, p.w_ih)?;
    let pre = tape.add_row(pre, p.bias)?;
    let mut h = tape.zeros(vec![d]);
    let mut c = tape.zeros(vec![d]);
    let mut out = vec![h; len];
    for step in 0..len {
        let t = if reverse { len - 1 - step } else { step };
        let pre_t = tape.take(pre, t)?;
        (h, c) = lstm_recur(tape, pre_t, h, c, p.w_hh)?;
        out[t] = h;
    }
    Ok(out)
}

/// Runs the LSTM stack over already stacked/skipped frames and returns the
/// top layer's hidden sequence `[T × dirs·cells]` before projection.
pub fn encode_hidden(tape: &mut Tape, frames: &FeatureSequence, p: &EncoderVars) -> Result<Var> {
    let first = p
        .layers
        .first()
        .and_then(|dirs| dirs.first())
        .ok_or_else(|| Error::Config("encoder has no layers".into()))?;
    let expect = first.input(tape);
    if frames.dim() != expect {
        return Err(Error::shape("encode", &[frames.len(), frames.dim()], &[expect]));
    }
    let mut x = tape.constant(Tensor::new(vec![frames.len(), frames.dim()], frames.data().to_vec())?);
    for dirs in &p.layers {
        let fwd = run_direction(tape, x, &dirs[0], false)?;
        x = match dirs.get(1) {
            Some(bwd_p) => {
                let bwd = run_direction(tape, x, bwd_p, true)?;
                let rows = fwd
                    .iter()
                    .zip(&bwd)
                    .map(|(&f, &b)| tape.concat(&[f, b]))
                    .collect::<Result<Vec<_>>>()?;
                tape.stack(&rows)?
            }
            None => tape.stack(&fwd)?,
        };
    }
    Ok(x)
}

/// Maps raw features to hidden vectors `h: [T × n]`: stacking and skipping,
/// the LSTM stack, then one linear projection.
pub fn encode(
    tape: &mut Tape,
    f: &FeatureSequence,
    cfg: &EncoderConfig,
    p: &EncoderVars,
) -> Result<Var> {
    if f.dim() != cfg.input_dim {
        return Err(Error::shape("encode", &[f.dim()], &[cfg.input_dim]));
    }
    let frames = stack_and_skip(f, cfg.stack, cfg.skip)?;
    let hidden = encode_hidden(tape, &frames, p)?;
    let proj = tape.matmul_bt(hidden, p.proj_w)?;
    tape.add_row(proj, p.proj_b)
}
