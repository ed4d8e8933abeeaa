//! CTC objective over a posterior lattice.
//!
//! The loss is `−log Σ_π Π_t p(π_t | x)` over all frame paths `π` that
//! collapse to the target. It is computed with the log-space forward
//! recursion over the blank-interleaved target `−, l₁, −, l₂, …, −` built from
//! tape operations, so its gradient comes from the recursion itself.

use crate::error::{Error, Result};
use crate::kernels;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Loss reported for a target with zero probability by
/// [`ctc_loss_bruteforce`].
pub const INFEASIBLE_LOSS: f64 = 1e30;

/// Largest number of paths [`ctc_loss_bruteforce`] will enumerate.
pub const MAX_ENUMERATED_PATHS: f64 = 1e6;

/// `T × K` matrix of per-frame log posteriors.
#[derive(Clone, Debug, PartialEq)]
pub struct LogPosteriorLattice {
    logp: Tensor,
    blank: usize,
}

impl LogPosteriorLattice {
    pub fn new(logp: Tensor, blank: usize) -> Result<Self> {
        match logp.shape() {
            &[t, k] if t > 0 && blank < k => Ok(LogPosteriorLattice { logp, blank }),
            s => Err(Error::shape("lattice", s, &[0, blank + 1])),
        }
    }

    /// Normalizes each row of unnormalized scores with a log-softmax.
    pub fn from_logits(logits: &Tensor, blank: usize) -> Result<Self> {
        let mut t = logits.clone();
        if t.shape().len() != 2 {
            return Err(Error::shape("lattice", t.shape(), &[0, 0]));
        }
        let k = t.shape()[1];
        for row in t.data_mut().chunks_exact_mut(k) {
            kernels::log_softmax_in_place(row);
        }
        LogPosteriorLattice::new(t, blank)
    }

    pub fn frames(&self) -> usize {
        self.logp.shape()[0]
    }

    pub fn labels(&self) -> usize {
        self.logp.shape()[1]
    }

    pub fn blank(&self) -> usize {
        self.blank
    }

    pub fn row(&self, t: usize) -> &[f64] {
        self.logp.row(t)
    }

    pub fn tensor(&self) -> &Tensor {
        &self.logp
    }

    /// Largest `|log Σ_k p(k)|` over frames.
    pub fn normalization_error(&self) -> f64 {
        (0..self.frames())
            .map(|t| {
                let row = self.row(t);
                let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                (m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln()).abs()
            })
            .fold(0.0, f64::max)
    }

    /// Most likely label per frame; ties go to the lowest index.
    pub fn argmax_path(&self) -> Vec<usize> {
        (0..self.frames())
            .map(|t| {
                let row = self.row(t);
                let mut best = 0;
                for (k, &v) in row.iter().enumerate() {
                    if v > row[best] {
                        best = k;
                    }
                }
                best
            })
            .collect()
    }
}

/// Target label ids, none of which is the blank.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Default)]
pub struct LabelSequence {
    ids: Vec<usize>,
}

impl LabelSequence {
    pub fn new(ids: Vec<usize>, blank: usize) -> Result<Self> {
        if ids.contains(&blank) {
            return Err(Error::Config("label sequence contains the blank".into()));
        }
        Ok(LabelSequence { ids })
    }

    pub fn ids(&self) -> &[usize] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Adjacent equal pairs; each needs a separating blank frame.
    pub fn repeats(&self) -> usize {
        self.ids.windows(2).filter(|w| w[0] == w[1]).count()
    }

    /// Fewest frames any path for this target needs.
    pub fn min_frames(&self) -> usize {
        self.len() + self.repeats()
    }

    pub fn fits(&self, frames: usize) -> bool {
        frames >= self.min_frames()
    }

    fn check_fits(&self, frames: usize) -> Result<()> {
        if self.fits(frames) {
            Ok(())
        } else {
            Err(Error::Infeasible {
                labels: self.len(),
                repeats: self.repeats(),
                frames,
            })
        }
    }
}

/// Merges consecutive duplicates, then drops blanks.
pub fn collapse(path: &[usize], blank: usize) -> LabelSequence {
    let mut ids = Vec::new();
    let mut prev = None;
    for &p in path {
        if Some(p) != prev && p != blank {
            ids.push(p);
        }
        prev = Some(p);
    }
    LabelSequence { ids }
}

/// CTC negative log-likelihood of `labels` under the `[T × K]` log-posterior
/// node `log_probs`, as a differentiable scalar.
pub fn ctc_loss(tape: &mut Tape, log_probs: Var, labels: &LabelSequence, blank: usize) -> Result<Var> {
    let (frames, k) = match tape.shape(log_probs) {
        &[t, k] if t > 0 => (t, k),
        s => return Err(Error::shape("ctc_loss", s, &[0, 0])),
    };
    if blank >= k {
        return Err(Error::shape("ctc_loss", &[frames, k], &[blank]));
    }
    if let Some(&bad) = labels.ids().iter().find(|&&l| l >= k || l == blank) {
        return Err(Error::Config(format!("label {bad} is not a non-blank label of {k}")));
    }
    labels.check_fits(frames)?;

    let mut ext = Vec::with_capacity(2 * labels.len() + 1);
    ext.push(blank);
    for &l in labels.ids() {
        ext.push(l);
        ext.push(blank);
    }
    let states = ext.len();
    let ninf = f64::NEG_INFINITY;
    let skip_mask: Vec<f64> = (0..states)
        .map(|s| {
            if s >= 2 && ext[s] != blank && ext[s] != ext[s - 2] {
                0.0
            } else {
                ninf
            }
        })
        .collect();
    let init_mask: Vec<f64> = (0..states).map(|s| if s < 2 { 0.0 } else { ninf }).collect();
    let skip_mask = tape.constant(Tensor::vector(skip_mask));
    let init_mask = tape.constant(Tensor::vector(init_mask));

    let row = tape.take(log_probs, 0)?;
    let emit = tape.gather(row, &ext)?;
    let mut alpha = tape.add(emit, init_mask)?;
    for t in 1..frames {
        let stay_or_advance = {
            let prev1 = tape.shift(alpha, -1, ninf)?;
            tape.log_add_exp(alpha, prev1)?
        };
        let prev2 = tape.shift(alpha, -2, ninf)?;
        let skip = tape.add(prev2, skip_mask)?;
        let total = tape.log_add_exp(stay_or_advance, skip)?;
        let row = tape.take(log_probs, t)?;
        let emit = tape.gather(row, &ext)?;
        alpha = tape.add(total, emit)?;
    }
    let last = tape.slice(alpha, states - 1, 1)?;
    let end = if states > 1 {
        let before = tape.slice(alpha, states - 2, 1)?;
        tape.log_add_exp(last, before)?
    } else {
        last
    };
    let ll = tape.value(end)[0];
    if !ll.is_finite() {
        return Err(Error::Domain {
            op: "ctc_loss",
            detail: format!("target log-likelihood is {ll}"),
        });
    }
    let total = tape.sum(end);
    Ok(tape.scale(total, -1.0))
}

/// Loss value for a fixed lattice.
pub fn ctc_loss_value(lat: &LogPosteriorLattice, labels: &LabelSequence) -> Result<f64> {
    let mut tape = Tape::new();
    let lp = tape.constant(lat.tensor().clone());
    let loss = ctc_loss(&mut tape, lp, labels, lat.blank())?;
    Ok(tape.scalar(loss))
}

/// Reference loss by enumerating all `K^T` paths. Returns
/// [`INFEASIBLE_LOSS`] when no path collapses to `labels`.
pub fn ctc_loss_bruteforce(lat: &LogPosteriorLattice, labels: &LabelSequence) -> Result<f64> {
    let (t, k) = (lat.frames(), lat.labels());
    let paths = (k as f64).powi(t as i32);
    if paths > MAX_ENUMERATED_PATHS {
        return Err(Error::TooLarge { paths });
    }
    let mut path = vec![0usize; t];
    let mut total = 0.0;
    loop {
        if collapse(&path, lat.blank()) == *labels {
            let logp: f64 = path.iter().enumerate().map(|(i, &p)| lat.row(i)[p]).sum();
            total += logp.exp();
        }
        // odometer increment
        let mut i = 0;
        loop {
            if i == t {
                return Ok(if total > 0.0 { -total.ln() } else { INFEASIBLE_LOSS });
            }
            path[i] += 1;
            if path[i] < k {
                break;
            }
            path[i] = 0;
            i += 1;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn uniform(t: usize, k: usize) -> LogPosteriorLattice {
        let v = -(k as f64).ln();
        LogPosteriorLattice::new(Tensor::new(vec![t, k], vec![v; t * k]).unwrap(), k - 1).unwrap()
    }

    fn labels(ids: &[usize]) -> LabelSequence {
        LabelSequence::new(ids.to_vec(), usize::MAX).unwrap()
    }

    #[test]
    fn collapse_rules() {
        let (a, b, blank) = (0, 1, 2);
        assert_eq!(collapse(&[a, a, blank, b], blank).ids(), &[a, b]);
        assert!(collapse(&[blank, blank, blank], blank).is_empty());
        assert_eq!(collapse(&[a, blank, a], blank).ids(), &[a, a]);
    }

    #[test]
    fn single_frame_single_label() {
        let p = [0.2f64, 0.5, 0.3];
        let logp = Tensor::new(vec![1, 3], p.iter().map(|v| v.ln()).collect()).unwrap();
        let lat = LogPosteriorLattice::new(logp, 2).unwrap();
        let loss = ctc_loss_value(&lat, &labels(&[1])).unwrap();
        assert!((loss + 0.5f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn six_paths_for_one_label_in_three_frames() {
        let lat = uniform(3, 3);
        let want = -(6.0f64 / 27.0).ln();
        assert!((ctc_loss_value(&lat, &labels(&[0])).unwrap() - want).abs() < 1e-12);
        assert!((ctc_loss_bruteforce(&lat, &labels(&[0])).unwrap() - want).abs() < 1e-12);
    }

    #[test]
    fn repeated_label_needs_separator() {
        let lat = uniform(2, 3);
        let err = ctc_loss_value(&lat, &labels(&[0, 0])).unwrap_err();
        assert!(matches!(err, Error::Infeasible { labels: 2, repeats: 1, frames: 2 }));
        assert_eq!(ctc_loss_bruteforce(&lat, &labels(&[0, 0])).unwrap(), INFEASIBLE_LOSS);
    }

    #[test]
    fn two_frame_hand_enumeration() {
        // p(a) = .9, p(blank) = .1 in both frames: aa + a− + −a = .99
        let row = [0.9f64.ln(), 0.1f64.ln()];
        let logp = Tensor::new(vec![2, 2], [row, row].concat()).unwrap();
        let lat = LogPosteriorLattice::new(logp, 1).unwrap();
        let want = -(0.99f64).ln();
        assert!((ctc_loss_bruteforce(&lat, &labels(&[0])).unwrap() - want).abs() < 1e-12);
        assert!((ctc_loss_value(&lat, &labels(&[0])).unwrap() - want).abs() < 1e-12);
    }

    #[test]
    fn empty_target_is_all_blanks() {
        let lat = uniform(4, 3);
        let want = -4.0 * (1.0f64 / 3.0).ln();
        assert!((ctc_loss_value(&lat, &LabelSequence::default()).unwrap() - want).abs() < 1e-12);
    }

    #[test]
    fn bruteforce_refuses_huge_instances() {
        let lat = uniform(12, 4);
        assert!(matches!(
            ctc_loss_bruteforce(&lat, &labels(&[0])),
            Err(Error::TooLarge { .. })
        ));
    }

    #[test]
    fn blank_in_target_is_rejected() {
        assert!(LabelSequence::new(vec![0, 2], 2).is_err());
    }

    #[test]
    fn argmax_ties_take_lowest_index() {
        let logp = Tensor::new(vec![1, 3], vec![-1.0, -0.5, -0.5]).unwrap();
        let lat = LogPosteriorLattice::new(logp, 0).unwrap();
        assert_eq!(lat.argmax_path(), vec![1]);
    }
}
