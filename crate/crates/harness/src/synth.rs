//! Synthetic sequence-labeling task standing in for speech.
//!
//! Every non-blank label owns a prototype feature vector. An utterance is a
//! random label string; each label is rendered as its prototype repeated for
//! a random number of frames, plus Gaussian noise.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use ctcattn::decode::{read_transcripts, write_transcripts};
use ctcattn::features::DEFAULT_FRAME_PERIOD_MS;
use ctcattn::{Charset, FeatureSequence, LabelSequence, Transcript};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};

/// Serializable description of a [`SynthTaskSpec`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaskConfig {
    /// Letters of the charset; blank and space are added.
    pub letters: String,
    pub dim: usize,
    pub min_duration: usize,
    pub max_duration: usize,
    pub sigma: f64,
    pub min_labels: usize,
    pub max_labels: usize,
    /// Allow the same letter twice in a row.
    pub allow_repeats: bool,
    pub train: usize,
    pub dev: usize,
    pub test: usize,
}

impl Default for TaskConfig {
    /// The standard toy task.
    fn default() -> Self {
        TaskConfig {
            letters: "abcdefg".into(),
            dim: 16,
            min_duration: 2,
            max_duration: 5,
            sigma: 0.3,
            min_labels: 3,
            max_labels: 8,
            allow_repeats: false,
            train: 2000,
            dev: 200,
            test: 200,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthTaskSpec {
    pub vocab: Charset,
    /// One prototype per label id; the blank's entry is unused.
    pub prototypes: Vec<Vec<f64>>,
    pub durations: (usize, usize),
    pub sigma: f64,
    pub lengths: (usize, usize),
    pub allow_repeats: bool,
    pub seed: u64,
}

impl SynthTaskSpec {
    /// Draws unit-norm Gaussian prototypes from `seed`.
    pub fn new(cfg: &TaskConfig, seed: u64) -> Result<Self> {
        let vocab = Charset::from_letters(&cfg.letters)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let prototypes = (0..vocab.len())
            .map(|_| {
                let v: Vec<f64> = (0..cfg.dim).map(|_| StandardNormal.sample(&mut rng)).collect();
                let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
                v.into_iter().map(|x| x / norm).collect()
            })
            .collect();
        let spec = SynthTaskSpec {
            vocab,
            prototypes,
            durations: (cfg.min_duration, cfg.max_duration),
            sigma: cfg.sigma,
            lengths: (cfg.min_labels, cfg.max_labels),
            allow_repeats: cfg.allow_repeats,
            seed,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn standard(seed: u64) -> Self {
        SynthTaskSpec::new(&TaskConfig::default(), seed).expect("standard task is valid")
    }

    pub fn validate(&self) -> Result<()> {
        let (dmin, dmax) = self.durations;
        let (lmin, lmax) = self.lengths;
        if dmin == 0 || dmin > dmax {
            return Err(HarnessError::Config(format!("bad duration range {dmin}..={dmax}")));
        }
        if lmin == 0 || lmin > lmax {
            return Err(HarnessError::Config(format!("bad length range {lmin}..={lmax}")));
        }
        if !(self.sigma >= 0.0) {
            return Err(HarnessError::Config(format!("sigma {} must be ≥ 0", self.sigma)));
        }
        if self.letters().len() < 2 && !self.allow_repeats {
            return Err(HarnessError::Config("need two letters when repeats are forbidden".into()));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.prototypes.first().map_or(0, Vec::len)
    }

    /// Non-blank, non-space label ids.
    pub fn letters(&self) -> Vec<usize> {
        (0..self.vocab.len())
            .filter(|&i| i != self.vocab.blank() && i != self.vocab.space())
            .collect()
    }

    /// Labels allowed after `prev` at position `pos` of a `len`-label
    /// string. Spaces never start, end or double up; letters repeat only
    /// when allowed.
    pub fn allowed_next(&self, prev: Option<usize>, pos: usize, len: usize) -> Vec<usize> {
        let space = self.vocab.space();
        let mut out = Vec::new();
        for id in (0..self.vocab.len()).filter(|&i| i != self.vocab.blank()) {
            if id == space {
                if pos == 0 || pos + 1 == len || prev == Some(space) {
                    continue;
                }
            } else if prev == Some(id) && !self.allow_repeats {
                continue;
            }
            out.push(id);
        }
        out
    }

    pub fn sample_labels<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<usize> {
        let len = rng.random_range(self.lengths.0..=self.lengths.1);
        let mut ids: Vec<usize> = Vec::with_capacity(len);
        for pos in 0..len {
            let choices = self.allowed_next(ids.last().copied(), pos, len);
            ids.push(choices[rng.random_range(0..choices.len())]);
        }
        ids
    }

    pub fn render<R: Rng + ?Sized>(&self, labels: &[usize], rng: &mut R) -> Result<FeatureSequence> {
        let noise = Normal::new(0.0, self.sigma).map_err(|e| HarnessError::Config(e.to_string()))?;
        let mut data = Vec::new();
        for &l in labels {
            let frames = rng.random_range(self.durations.0..=self.durations.1);
            for _ in 0..frames {
                data.extend(self.prototypes[l].iter().map(|p| p + noise.sample(rng)));
            }
        }
        Ok(FeatureSequence::new(data, self.dim(), DEFAULT_FRAME_PERIOD_MS)?)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Utterance {
    pub id: String,
    pub features: FeatureSequence,
    pub text: String,
}

impl Utterance {
    pub fn labels(&self, cs: &Charset) -> Result<LabelSequence> {
        Ok(cs.encode(&self.text)?)
    }
}

/// `count` utterances drawn from the spec's data stream; identical specs give
/// identical datasets.
pub fn gen_dataset(spec: &SynthTaskSpec, count: usize) -> Result<Vec<Utterance>> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(1);
    (0..count)
        .map(|i| {
            let labels = spec.sample_labels(&mut rng);
            let features = spec.render(&labels, &mut rng)?;
            Ok(Utterance {
                id: format!("utt{i:05}"),
                features,
                text: spec.vocab.decode(&labels),
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct Splits {
    pub train: Vec<Utterance>,
    pub dev: Vec<Utterance>,
    pub test: Vec<Utterance>,
}

impl Splits {
    pub fn generate(spec: &SynthTaskSpec, cfg: &TaskConfig) -> Result<Self> {
        let mut all = gen_dataset(spec, cfg.train + cfg.dev + cfg.test)?;
        let test = all.split_off(cfg.train + cfg.dev);
        let dev = all.split_off(cfg.train);
        Ok(Splits { train: all, dev, test })
    }

    pub fn parts(&self) -> [(&'static str, &[Utterance]); 3] {
        [("train", &self.train), ("dev", &self.dev), ("test", &self.test)]
    }
}

/// Writes `<dir>/charset.txt`, `<dir>/<split>.txt` transcripts and binary
/// features under `<dir>/feats/`.
pub fn save_splits(dir: &Path, cs: &Charset, splits: &Splits) -> Result<()> {
    fs::create_dir_all(dir.join("feats"))?;
    cs.write(BufWriter::new(File::create(dir.join("charset.txt"))?))?;
    for (name, utts) in splits.parts() {
        let items: Vec<(String, Transcript)> = utts
            .iter()
            .map(|u| (u.id.clone(), Transcript::from_text(&u.text)))
            .collect();
        let mut w = BufWriter::new(File::create(dir.join(format!("{name}.txt")))?);
        write_transcripts(&mut w, &items)?;
        w.flush()?;
        for u in utts {
            let mut w = BufWriter::new(File::create(feature_path(dir, &u.id))?);
            u.features.write_binary(&mut w)?;
            w.flush()?;
        }
    }
    Ok(())
}

fn feature_path(dir: &Path, id: &str) -> std::path::PathBuf {
    dir.join("feats").join(format!("{id}.ctcf"))
}

pub fn load_charset(dir: &Path) -> Result<Charset> {
    Ok(Charset::read(BufReader::new(File::open(dir.join("charset.txt"))?))?)
}

/// Reads one split written by [`save_splits`].
pub fn load_split(dir: &Path, name: &str) -> Result<Vec<Utterance>> {
    let items = read_transcripts(BufReader::new(File::open(dir.join(format!("{name}.txt")))?))?;
    items
        .into_iter()
        .map(|(id, t)| {
            let features = FeatureSequence::read_binary(BufReader::new(File::open(feature_path(dir, &id))?))?;
            Ok(Utterance {
                id,
                features,
                text: t.text(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn noiseless_single_frame_is_the_prototype() {
        let cfg = TaskConfig {
            sigma: 0.0,
            min_duration: 1,
            max_duration: 1,
            min_labels: 1,
            max_labels: 1,
            ..TaskConfig::default()
        };
        let spec = SynthTaskSpec::new(&cfg, 3).unwrap();
        let utts = gen_dataset(&spec, 20).unwrap();
        for u in &utts {
            let id = spec.vocab.encode(&u.text).unwrap().ids()[0];
            assert_eq!(u.features.len(), 1);
            assert_eq!(u.features.frame(0), spec.prototypes[id].as_slice());
        }
    }

    #[test]
    fn prototypes_are_unit_norm() {
        let spec = SynthTaskSpec::standard(1);
        assert_eq!(spec.vocab.len(), 9);
        for p in &spec.prototypes {
            assert!((p.iter().map(|x| x * x).sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn texts_are_canonical_word_strings() {
        let spec = SynthTaskSpec::standard(2);
        for u in gen_dataset(&spec, 300).unwrap() {
            assert_eq!(Transcript::from_text(&u.text).text(), u.text);
            let ids = spec.vocab.encode(&u.text).unwrap();
            assert!((3..=8).contains(&ids.len()));
            assert_eq!(ids.repeats(), 0);
            assert!((2 * ids.len()..=5 * ids.len()).contains(&u.features.len()));
        }
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let bad = TaskConfig {
            min_duration: 0,
            ..TaskConfig::default()
        };
        assert!(SynthTaskSpec::new(&bad, 0).is_err());
        let bad = TaskConfig {
            sigma: -1.0,
            ..TaskConfig::default()
        };
        assert!(SynthTaskSpec::new(&bad, 0).is_err());
    }
}
