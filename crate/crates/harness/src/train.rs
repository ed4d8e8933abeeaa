//! Training loop, evaluation and the per-epoch metrics log.

use std::io::Write;
use std::path::PathBuf;

use ctcattn::checkpoint;
use ctcattn::decode::greedy_decode_text;
use ctcattn::{Charset, ErrorTally, LabelSequence, Model};
use log::{info, warn};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};
use crate::optim::{clip_global_norm, Momentum};
use crate::synth::Utterance;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub momentum: f64,
    /// Multiplier applied to the step size when dev CER stops improving.
    pub decay: f64,
    /// Epochs without improvement before decaying.
    pub patience: usize,
    pub batch: usize,
    pub epochs: usize,
    pub clip: f64,
    /// Evaluate on dev every this many epochs (and after the last).
    pub eval_every: usize,
    /// Where to save the best-dev model, if anywhere.
    pub checkpoint: Option<PathBuf>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 0.01,
            momentum: 0.9,
            decay: 0.5,
            patience: 1,
            batch: 8,
            epochs: 10,
            clip: 5.0,
            eval_every: 1,
            checkpoint: None,
            seed: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) || self.epochs == 0 || self.batch == 0 || self.eval_every == 0 {
            return Err(HarnessError::Config(
                "need lr > 0 and epochs, batch, eval_every ≥ 1".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.momentum) || !(self.decay > 0.0 && self.decay <= 1.0) {
            return Err(HarnessError::Config("momentum must be in [0, 1) and decay in (0, 1]".into()));
        }
        if !(self.clip > 0.0) {
            return Err(HarnessError::Config("clip norm must be > 0".into()));
        }
        Ok(())
    }
}

/// One line of the metrics log.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    /// `None` on epochs without evaluation.
    pub dev: Option<Scores>,
}

impl EpochMetrics {
    pub fn tsv(&self) -> String {
        let (cer, wer) = self.dev.map_or((f64::NAN, f64::NAN), |s| (s.cer, s.wer));
        format!("{}\t{:.6}\t{:.6}\t{:.6}", self.epoch, self.train_loss, cer, wer)
    }
}

pub fn write_metrics<W: Write>(mut w: W, metrics: &[EpochMetrics]) -> Result<()> {
    writeln!(w, "epoch\ttrain_loss\tdev_cer\tdev_wer")?;
    for m in metrics {
        writeln!(w, "{}", m.tsv())?;
    }
    Ok(())
}

/// Corpus-level error rates as fractions.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Scores {
    pub cer: f64,
    pub wer: f64,
}

#[derive(Clone, Debug)]
pub struct TrainReport {
    pub metrics: Vec<EpochMetrics>,
    /// Mean training loss before the first update.
    pub initial_loss: f64,
    pub best_epoch: usize,
    pub best_dev: Scores,
    /// Parameters from the best dev epoch.
    pub best_model: Model,
}

/// An utterance with its encoded target.
#[derive(Clone, Debug)]
pub struct Example<'a> {
    pub utt: &'a Utterance,
    pub labels: LabelSequence,
}

/// Encodes every target and drops utterances the model cannot align, with a
/// warning for each.
pub fn prepare<'a>(model: &Model, utts: &'a [Utterance], cs: &Charset) -> Result<Vec<Example<'a>>> {
    let mut out = Vec::with_capacity(utts.len());
    for utt in utts {
        let labels = utt.labels(cs)?;
        let frames = model.output_len(utt.features.len());
        if !labels.fits(frames) {
            warn!(
                "skipping {}: {} labels ({} repeats) do not fit {} frames",
                utt.id,
                labels.len(),
                labels.repeats(),
                frames
            );
            continue;
        }
        out.push(Example { utt, labels });
    }
    Ok(out)
}

pub fn mean_loss(model: &Model, data: &[Example]) -> Result<f64> {
    let losses: Vec<ctcattn::Result<f64>> = data
        .par_iter()
        .map(|ex| model.loss(&ex.utt.features, &ex.labels))
        .collect();
    let mut total = 0.0;
    for l in losses {
        total += l?;
    }
    Ok(total / data.len().max(1) as f64)
}

/// Greedy transcripts in input order.
pub fn decode_all(model: &Model, utts: &[Utterance], cs: &Charset) -> Result<Vec<String>> {
    let out: Vec<ctcattn::Result<String>> = utts
        .par_iter()
        .map(|u| greedy_decode_text(&model.lattice(&u.features)?, cs))
        .collect();
    out.into_iter().map(|r| r.map_err(HarnessError::from)).collect()
}

pub fn score(references: &[&str], hypotheses: &[String]) -> Result<Scores> {
    let (mut chars, mut words) = (ErrorTally::default(), ErrorTally::default());
    for (r, h) in references.iter().zip(hypotheses) {
        chars.add_chars(r, h);
        words.add_words(r, h);
    }
    Ok(Scores {
        cer: chars.rate()?,
        wer: words.rate()?,
    })
}

pub fn evaluate(model: &Model, utts: &[Utterance], cs: &Charset) -> Result<Scores> {
    let hyps = decode_all(model, utts, cs)?;
    let refs: Vec<&str> = utts.iter().map(|u| u.text.as_str()).collect();
    score(&refs, &hyps)
}

/// Mean loss and summed gradients of one batch. Per-utterance passes may run
/// in parallel; their results are combined in batch order.
fn batch_gradient(model: &Model, batch: &[&Example]) -> Result<(f64, Vec<Vec<f64>>)> {
    let results: Vec<ctcattn::Result<(f64, Vec<Vec<f64>>)>> = batch
        .par_iter()
        .map(|ex| model.loss_and_grads(&ex.utt.features, &ex.labels))
        .collect();
    let mut loss = 0.0;
    let mut sum: Option<Vec<Vec<f64>>> = None;
    for r in results {
        let (l, g) = r?;
        loss += l;
        match &mut sum {
            None => sum = Some(g),
            Some(acc) => {
                for (a, b) in acc.iter_mut().zip(&g) {
                    a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
                }
            }
        }
    }
    let n = batch.len() as f64;
    let mut grads = sum.unwrap_or_default();
    grads.iter_mut().flat_map(|g| g.iter_mut()).for_each(|v| *v /= n);
    Ok((loss / n, grads))
}

/// Minimizes the mean CTC loss over `train`, evaluating greedy CER/WER on
/// `dev` and keeping the best-dev parameters.
pub fn train(
    mut model: Model,
    train: &[Utterance],
    dev: &[Utterance],
    cs: &Charset,
    tc: &TrainConfig,
) -> Result<TrainReport> {
    tc.validate()?;
    let data = prepare(&model, train, cs)?;
    if data.is_empty() {
        return Err(HarnessError::EmptyData("training set".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(tc.seed);
    let mut opt = Momentum::new(model.params(), tc.lr, tc.momentum);
    let initial_loss = mean_loss(&model, &data)?;
    info!("initial train loss {initial_loss:.4} over {} utterances", data.len());

    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut metrics = Vec::with_capacity(tc.epochs);
    let mut best: Option<(usize, Scores, Model)> = None;
    let mut stale = 0;
    for epoch in 1..=tc.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for (b, chunk) in order.chunks(tc.batch).enumerate() {
            let batch: Vec<&Example> = chunk.iter().map(|&i| &data[i]).collect();
            let (loss, mut grads) = batch_gradient(&model, &batch)?;
            if !loss.is_finite() || grads.iter().flatten().any(|g| !g.is_finite()) {
                return Err(HarnessError::Diverged { epoch, batch: b, loss });
            }
            total += loss * batch.len() as f64;
            clip_global_norm(&mut grads, tc.clip);
            opt.step(model.params_mut(), &grads);
        }
        let train_loss = total / data.len() as f64;
        let dev_scores = if epoch % tc.eval_every == 0 || epoch == tc.epochs {
            Some(evaluate(&model, dev, cs)?)
        } else {
            None
        };
        if let Some(s) = dev_scores {
            let improved = best.as_ref().is_none_or(|(_, b, _)| s.cer < b.cer);
            if improved {
                stale = 0;
                if let Some(path) = &tc.checkpoint {
                    checkpoint::save(&model, path)?;
                }
                best = Some((epoch, s, model.clone()));
            } else {
                stale += 1;
                if stale >= tc.patience {
                    opt.lr *= tc.decay;
                    stale = 0;
                    info!("dev CER plateau, step size now {:.3e}", opt.lr);
                }
            }
            info!(
                "epoch {epoch}: train loss {train_loss:.4}, dev CER {:.2}%, WER {:.2}%",
                100.0 * s.cer,
                100.0 * s.wer
            );
        } else {
            info!("epoch {epoch}: train loss {train_loss:.4}");
        }
        metrics.push(EpochMetrics {
            epoch,
            train_loss,
            dev: dev_scores,
        });
    }
    let (best_epoch, best_dev, best_model) = best.expect("the last epoch is always evaluated");
    Ok(TrainReport {
        metrics,
        initial_loss,
        best_epoch,
        best_dev,
        best_model,
    })
}
