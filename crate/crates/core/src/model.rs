//! Encoder plus output head as one trainable model.

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::attention::{run_head, AttnConfig, HeadOutput, HeadParams, HeadVars, Mode};
use crate::ctc::{ctc_loss, LabelSequence, LogPosteriorLattice};
use crate::encoder::{encode, EncoderConfig, EncoderParams, EncoderVars};
use crate::error::{Error, Result};
use crate::features::FeatureSequence;
use crate::params::ParamSet;
use crate::tape::{Tape, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub attn: AttnConfig,
    /// Blank label id.
    pub blank: usize,
}

impl ModelConfig {
    /// Head sized to the encoder's projection, blank at id 0.
    pub fn new(encoder: EncoderConfig, mode: Mode, tau: usize, labels: usize) -> Self {
        let attn = AttnConfig::new(mode, tau, encoder.proj_dim, labels);
        ModelConfig {
            encoder,
            attn,
            blank: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        self.attn.validate()?;
        if self.attn.hidden != self.encoder.proj_dim {
            return Err(Error::Config(format!(
                "head hidden size {} differs from encoder output {}",
                self.attn.hidden, self.encoder.proj_dim
            )));
        }
        if self.blank >= self.attn.labels {
            return Err(Error::Config(format!("blank id {} out of range", self.blank)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    cfg: ModelConfig,
    params: ParamSet,
    encoder: EncoderParams,
    head: HeadParams,
}

#[derive(Clone, Debug)]
pub struct ModelVars {
    pub encoder: EncoderVars,
    pub head: HeadVars,
}

/// Nodes produced by [`Model::forward`].
#[derive(Clone, Debug)]
pub struct Forward {
    /// Encoder output `h: [T × n]`.
    pub hidden: Var,
    pub head: HeadOutput,
    /// Per-frame log posteriors `[T × K]`.
    pub log_probs: Var,
}

impl Model {
    pub fn init<R: Rng + ?Sized>(cfg: ModelConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let mut params = ParamSet::new();
        let encoder = EncoderParams::init(&cfg.encoder, &mut params, rng);
        let head = HeadParams::init(&cfg.attn, &mut params, rng)?;
        Ok(Model {
            cfg,
            params,
            encoder,
            head,
        })
    }

    /// Wraps a parameter set with the layout `cfg` expects.
    pub fn from_params(cfg: ModelConfig, params: ParamSet) -> Result<Self> {
        cfg.validate()?;
        let mut rng = StdRng::seed_from_u64(0);
        let reference = Model::init(cfg.clone(), &mut rng)?;
        if !reference.params.same_layout(&params) {
            return Err(Error::Format("parameter names or shapes do not match the configuration".into()));
        }
        let encoder = EncoderParams::locate(&cfg.encoder, &params)?;
        let head = HeadParams::locate(&cfg.attn, &params)?;
        Ok(Model {
            cfg,
            params,
            encoder,
            head,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn encoder_params(&self) -> &EncoderParams {
        &self.encoder
    }

    pub fn head_params(&self) -> &HeadParams {
        &self.head
    }

    pub fn bind(&self, tape: &mut Tape) -> ModelVars {
        ModelVars {
            encoder: self.encoder.bind(tape, &self.params),
            head: self.head.bind(tape, &self.params),
        }
    }

    pub fn forward(&self, tape: &mut Tape, vars: &ModelVars, f: &FeatureSequence) -> Result<Forward> {
        let hidden = encode(tape, f, &self.cfg.encoder, &vars.encoder)?;
        let head = run_head(tape, hidden, &self.cfg.attn, &vars.head)?;
        let log_probs = tape.log_softmax(head.logits);
        Ok(Forward {
            hidden,
            head,
            log_probs,
        })
    }

    /// Frames the encoder produces for `raw_frames` input frames.
    pub fn output_len(&self, raw_frames: usize) -> usize {
        self.cfg.encoder.output_len(raw_frames)
    }

    pub fn lattice(&self, f: &FeatureSequence) -> Result<LogPosteriorLattice> {
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape);
        let out = self.forward(&mut tape, &vars, f)?;
        LogPosteriorLattice::new(tape.to_tensor(out.log_probs), self.cfg.blank)
    }

    pub fn loss(&self, f: &FeatureSequence, labels: &LabelSequence) -> Result<f64> {
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape);
        let out = self.forward(&mut tape, &vars, f)?;
        let loss = ctc_loss(&mut tape, out.log_probs, labels, self.cfg.blank)?;
        Ok(tape.scalar(loss))
    }

    /// CTC loss of one utterance and its gradient for every parameter, in
    /// [`ParamSet`] order.
    pub fn loss_and_grads(&self, f: &FeatureSequence, labels: &LabelSequence) -> Result<(f64, Vec<Vec<f64>>)> {
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape);
        let out = self.forward(&mut tape, &vars, f)?;
        let loss = ctc_loss(&mut tape, out.log_probs, labels, self.cfg.blank)?;
        tape.backward(loss)?;
        Ok((tape.scalar(loss), tape.param_grads(&self.params)))
    }
}
