//! Acoustic feature sequences and their on-disk formats.
//!
//! Binary layout (all little-endian):
//!
//! ```text
//! magic    4 bytes  "CTCF"
//! version  u32      1
//! frames   u32      T′
//! dim      u32      d_base
//! data     f32 × T′·d_base, row-major
//! ```
//!
//! The text alternative has a header line `ctcf 1 <T′> <d_base>` followed by
//! one whitespace-separated frame per line. Values are rounded to 32-bit in
//! both formats so the two are interchangeable.

use std::io::{BufRead, Read, Write};

use crate::error::{Error, Result};

pub const FEATURE_MAGIC: [u8; 4] = *b"CTCF";
pub const FEATURE_VERSION: u32 = 1;
pub const DEFAULT_FRAME_PERIOD_MS: f64 = 10.0;

/// `T′ × d_base` matrix of frame features.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSequence {
    frames: Vec<f64>,
    dim: usize,
    frame_period_ms: f64,
}

impl FeatureSequence {
    pub fn new(frames: Vec<f64>, dim: usize, frame_period_ms: f64) -> Result<Self> {
        if dim == 0 || frames.is_empty() {
            return Err(Error::EmptyInput);
        }
        if !frames.len().is_multiple_of(dim) {
            return Err(Error::shape("feature_sequence", &[frames.len()], &[dim]));
        }
        if let Some(bad) = frames.iter().find(|v| !v.is_finite()) {
            return Err(Error::Domain {
                op: "feature_sequence",
                detail: format!("non-finite feature value {bad}"),
            });
        }
        Ok(FeatureSequence {
            frames,
            dim,
            frame_period_ms,
        })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::Format("ragged feature rows".into()));
        }
        FeatureSequence::new(rows.concat(), dim, DEFAULT_FRAME_PERIOD_MS)
    }

    pub fn len(&self) -> usize {
        self.frames.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn frame_period_ms(&self) -> f64 {
        self.frame_period_ms
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        &self.frames[t * self.dim..(t + 1) * self.dim]
    }

    pub fn data(&self) -> &[f64] {
        &self.frames
    }

    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        let header_len = |v: usize| {
            u32::try_from(v).map_err(|_| Error::Format(format!("{v} does not fit the header")))
        };
        w.write_all(&FEATURE_MAGIC)?;
        w.write_all(&FEATURE_VERSION.to_le_bytes())?;
        w.write_all(&header_len(self.len())?.to_le_bytes())?;
        w.write_all(&header_len(self.dim)?.to_le_bytes())?;
        let mut buf = Vec::with_capacity(self.frames.len() * 4);
        for &v in &self.frames {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<Self> {
        let mut word = [0u8; 4];
        r.read_exact(&mut word)?;
        if word != FEATURE_MAGIC {
            return Err(Error::Format(format!("bad feature magic {word:?}")));
        }
        let mut read_u32 = |r: &mut R| -> Result<u32> {
            r.read_exact(&mut word)?;
            Ok(u32::from_le_bytes(word))
        };
        let version = read_u32(&mut r)?;
        if version != FEATURE_VERSION {
            return Err(Error::Format(format!("unsupported feature version {version}")));
        }
        let frames = read_u32(&mut r)? as usize;
        let dim = read_u32(&mut r)? as usize;
        let mut raw = vec![0u8; frames * dim * 4];
        r.read_exact(&mut raw)?;
        let data = raw
            .chunks_exact(4)
            .map(|b| f64::from(f32::from_le_bytes([b[0], b[1], b[2], b[3]])))
            .collect();
        FeatureSequence::new(data, dim, DEFAULT_FRAME_PERIOD_MS)
    }

    pub fn write_text<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "ctcf {} {} {}", FEATURE_VERSION, self.len(), self.dim)?;
        for t in 0..self.len() {
            let line: Vec<String> = self.frame(t).iter().map(|&v| (v as f32).to_string()).collect();
            writeln!(w, "{}", line.join(" "))?;
        }
        Ok(())
    }

    pub fn read_text<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Format("missing text feature header".into()))??;
        let fields: Vec<&str> = header.split_whitespace().collect();
        if fields.len() != 4 || fields[0] != "ctcf" {
            return Err(Error::Format(format!("bad text feature header {header:?}")));
        }
        let parse = |s: &str| {
            s.parse::<usize>()
                .map_err(|e| Error::Format(format!("header field {s:?}: {e}")))
        };
        if parse(fields[1])? != FEATURE_VERSION as usize {
            return Err(Error::Format(format!("unsupported feature version {}", fields[1])));
        }
        let (frames, dim) = (parse(fields[2])?, parse(fields[3])?);
        let mut data = Vec::with_capacity(frames * dim);
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let before = data.len();
            for tok in line.split_whitespace() {
                let v: f32 = tok
                    .parse()
                    .map_err(|e| Error::Format(format!("feature value {tok:?}: {e}")))?;
                data.push(f64::from(v));
            }
            if data.len() - before != dim {
                return Err(Error::Format(format!(
                    "frame has {} values, expected {dim}",
                    data.len() - before
                )));
            }
        }
        if data.len() != frames * dim {
            return Err(Error::Format(format!(
                "expected {frames} frames, found {}",
                data.len() / dim.max(1)
            )));
        }
        FeatureSequence::new(data, dim, DEFAULT_FRAME_PERIOD_MS)
    }
}

/// Frame stacking with decimation. Output frame `t` concatenates input frames
/// `[t·skip, t·skip + stack)`, zero-padding past the end; the output has
/// `ceil(T′ / skip)` frames of dimension `stack · d_base`.
pub fn stack_and_skip(f: &FeatureSequence, stack: usize, skip: usize) -> Result<FeatureSequence> {
    if stack == 0 || skip == 0 {
        return Err(Error::Config(format!("stack ({stack}) and skip ({skip}) must be ≥ 1")));
    }
    if f.is_empty() {
        return Err(Error::EmptyInput);
    }
    let (len, dim) = (f.len(), f.dim());
    let out_len = len.div_ceil(skip);
    let mut out = vec![0.0; out_len * stack * dim];
    for t in 0..out_len {
        for j in 0..stack {
            let src = t * skip + j;
            if src < len {
                let dst = (t * stack + j) * dim;
                out[dst..dst + dim].copy_from_slice(f.frame(src));
            }
        }
    }
    FeatureSequence::new(out, stack * dim, f.frame_period_ms * skip as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(frames: usize, dim: usize) -> FeatureSequence {
        let data = (0..frames * dim).map(|i| i as f64).collect();
        FeatureSequence::new(data, dim, DEFAULT_FRAME_PERIOD_MS).unwrap()
    }

    #[test]
    fn unit_stack_and_skip_is_identity() {
        let f = ramp(5, 3);
        let g = stack_and_skip(&f, 1, 1).unwrap();
        assert_eq!(g.data(), f.data());
        assert_eq!(g.len(), 5);
    }

    #[test]
    fn six_frames_stack_two_skip_three() {
        let f = ramp(6, 2);
        let g = stack_and_skip(&f, 2, 3).unwrap();
        assert_eq!(g.len(), 2);
        assert_eq!(g.frame(0), [f.frame(0), f.frame(1)].concat().as_slice());
        assert_eq!(g.frame(1), [f.frame(3), f.frame(4)].concat().as_slice());
    }

    #[test]
    fn eight_stacked_80_dim_frames_give_640() {
        let f = FeatureSequence::new(vec![0.5; 10 * 80], 80, 10.0).unwrap();
        let g = stack_and_skip(&f, 8, 3).unwrap();
        assert_eq!(g.dim(), 640);
        assert_eq!(g.len(), 4);
        // the last output frame starts at input 9 and runs off the end
        assert!(g.frame(3)[80..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rejects_bad_arguments() {
        let f = ramp(3, 2);
        assert!(stack_and_skip(&f, 0, 1).is_err());
        assert!(stack_and_skip(&f, 1, 0).is_err());
        assert!(matches!(
            FeatureSequence::new(Vec::new(), 2, 10.0),
            Err(Error::EmptyInput)
        ));
        assert!(FeatureSequence::new(vec![f64::NAN, 0.0], 2, 10.0).is_err());
    }

    #[test]
    fn binary_and_text_agree() {
        let f = FeatureSequence::new(vec![0.1, -2.5, 3.25, 1e-3, 7.0, -0.0], 3, 10.0).unwrap();
        let mut bin = Vec::new();
        f.write_binary(&mut bin).unwrap();
        assert_eq!(&bin[..4], b"CTCF");
        assert_eq!(bin.len(), 16 + 6 * 4);
        let from_bin = FeatureSequence::read_binary(bin.as_slice()).unwrap();
        let mut txt = Vec::new();
        f.write_text(&mut txt).unwrap();
        let from_txt = FeatureSequence::read_text(txt.as_slice()).unwrap();
        assert_eq!(from_bin, from_txt);
        for (a, b) in from_bin.data().iter().zip(f.data()) {
            assert_eq!(*a as f32, *b as f32);
        }
    }

    #[test]
    fn truncated_binary_is_an_error() {
        let f = ramp(2, 2);
        let mut bin = Vec::new();
        f.write_binary(&mut bin).unwrap();
        bin.truncate(bin.len() - 1);
        assert!(FeatureSequence::read_binary(bin.as_slice()).is_err());
        bin[0] = b'X';
        assert!(matches!(
            FeatureSequence::read_binary(bin.as_slice()),
            Err(Error::Format(_))
        ));
    }
}
