//! End-to-end finite-difference check of every parameter through the CTC
//! loss.

use ctcattn::{ctc_loss, EncoderConfig, FeatureSequence, LabelSequence, Mode, Model, ModelConfig, OpKind, Tape};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::Result;

/// Largest accepted relative error.
pub const GRAD_TOLERANCE: f64 = 1e-4;
/// Central-difference step.
pub const FD_STEP: f64 = 1e-5;
/// Derivatives smaller than this are compared absolutely: below it the
/// difference quotient is dominated by rounding.
pub const FD_FLOOR: f64 = 1e-5;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FD_FLOOR)
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckConfig {
    pub mode: Mode,
    pub hidden: usize,
    pub labels: usize,
    pub tau: usize,
    pub frames: usize,
    pub input_dim: usize,
    pub layers: usize,
    pub cells: usize,
    pub bidirectional: bool,
    pub target_len: usize,
}

impl GradCheckConfig {
    /// `n = 8`, `K = 5`, `τ = 2`, `T = 6` over a two-layer bidirectional
    /// encoder of 4 cells per direction.
    pub fn desk(mode: Mode) -> Self {
        GradCheckConfig {
            mode,
            hidden: 8,
            labels: 5,
            tau: 2,
            frames: 6,
            input_dim: 3,
            layers: 2,
            cells: 4,
            bidirectional: true,
            target_len: 3,
        }
    }

    pub fn model_config(&self) -> ModelConfig {
        let enc = EncoderConfig {
            input_dim: self.input_dim,
            layers: self.layers,
            cells_per_dir: self.cells,
            bidirectional: self.bidirectional,
            stack: 1,
            skip: 1,
            proj_dim: self.hidden,
        };
        ModelConfig::new(enc, self.mode, self.tau, self.labels)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GroupReport {
    pub name: String,
    pub values: usize,
    pub max_rel_err: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradReport {
    pub mode: Mode,
    pub loss: f64,
    pub groups: Vec<GroupReport>,
}

impl GradReport {
    pub fn max_rel_err(&self) -> f64 {
        self.groups.iter().map(|g| g.max_rel_err).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.max_rel_err() < GRAD_TOLERANCE
    }
}

/// Random model, input and target for `cfg`, all derived from `seed`.
pub fn instance(cfg: &GradCheckConfig, seed: u64) -> Result<(Model, FeatureSequence, LabelSequence)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let model = Model::init(cfg.model_config(), &mut rng)?;
    let data: Vec<f64> = (0..cfg.frames * cfg.input_dim)
        .map(|_| rng.sample::<f64, _>(StandardNormal))
        .collect();
    let features = FeatureSequence::new(data, cfg.input_dim, 10.0)?;
    let blank = model.config().blank;
    let ids: Vec<usize> = (0..cfg.target_len)
        .map(|_| {
            let l = rng.random_range(0..cfg.labels - 1);
            if l >= blank {
                l + 1
            } else {
                l
            }
        })
        .collect();
    Ok((model, features, LabelSequence::new(ids, blank)?))
}

/// Runs the check; `fault` corrupts one gradient rule (negative control).
pub fn grad_check_with(cfg: &GradCheckConfig, seed: u64, fault: Option<(OpKind, f64)>) -> Result<GradReport> {
    let (mut model, features, labels) = instance(cfg, seed)?;
    let mut tape = Tape::new();
    if let Some((kind, factor)) = fault {
        tape.inject_fault(kind, factor);
    }
    let vars = model.bind(&mut tape);
    let out = model.forward(&mut tape, &vars, &features)?;
    let loss = ctc_loss(&mut tape, out.log_probs, &labels, model.config().blank)?;
    tape.backward(loss)?;
    let analytic = tape.param_grads(model.params());
    let loss = tape.scalar(loss);

    let ids: Vec<_> = model.params().ids().collect();
    let mut groups = Vec::with_capacity(ids.len());
    for (k, id) in ids.into_iter().enumerate() {
        let name = model.params().name(id).to_string();
        let count = model.params().get(id).numel();
        let mut worst: f64 = 0.0;
        for j in 0..count {
            let orig = model.params().get(id).data()[j];
            model.params_mut().get_mut(id).data_mut()[j] = orig + FD_STEP;
            let plus = model.loss(&features, &labels)?;
            model.params_mut().get_mut(id).data_mut()[j] = orig - FD_STEP;
            let minus = model.loss(&features, &labels)?;
            model.params_mut().get_mut(id).data_mut()[j] = orig;
            let numeric = (plus - minus) / (2.0 * FD_STEP);
            worst = worst.max(relative_error(analytic[k][j], numeric));
        }
        groups.push(GroupReport {
            name,
            values: count,
            max_rel_err: worst,
        });
    }
    Ok(GradReport {
        mode: cfg.mode,
        loss,
        groups,
    })
}

pub fn grad_check(cfg: &GradCheckConfig, seed: u64) -> Result<GradReport> {
    grad_check_with(cfg, seed, None)
}
