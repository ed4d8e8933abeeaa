//! Model checkpoints: configuration plus named tensors.
//!
//! Layout (little-endian):
//!
//! ```text
//! magic     4 bytes "CTCM"
//! version   u32     1
//! config    u32 length + UTF-8 JSON of ModelConfig
//! count     u32     number of tensors
//! per tensor:
//!   name    u32 length + UTF-8
//!   dtype   u8      0 = f64
//!   ndim    u32
//!   extents u64 × ndim
//!   values  f64 × product(extents)
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig};
use crate::params::ParamSet;
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"CTCM";
pub const CHECKPOINT_VERSION: u32 = 1;
const DTYPE_F64: u8 = 0;

fn put_len<W: Write>(w: &mut W, len: usize) -> Result<()> {
    let v = u32::try_from(len).map_err(|_| Error::Format(format!("length {len} too large")))?;
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn get_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn get_bytes<R: Read>(r: &mut R) -> Result<Vec<u8>> {
    let len = get_u32(r)? as usize;
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    Ok(buf)
}

pub fn write_checkpoint<W: Write>(model: &Model, mut w: W) -> Result<()> {
    w.write_all(&CHECKPOINT_MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    let cfg = serde_json::to_vec(model.config()).map_err(|e| Error::Format(e.to_string()))?;
    put_len(&mut w, cfg.len())?;
    w.write_all(&cfg)?;
    put_len(&mut w, model.params().len())?;
    for (name, t) in model.params().iter() {
        put_len(&mut w, name.len())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&[DTYPE_F64])?;
        put_len(&mut w, t.shape().len())?;
        for &d in t.shape() {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(t.numel() * 8);
        for &v in t.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    Ok(())
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Model> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if magic != CHECKPOINT_MAGIC {
        return Err(Error::Format(format!("bad checkpoint magic {magic:?}")));
    }
    let version = get_u32(&mut r)?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let cfg: ModelConfig =
        serde_json::from_slice(&get_bytes(&mut r)?).map_err(|e| Error::Format(e.to_string()))?;
    let count = get_u32(&mut r)?;
    let mut params = ParamSet::new();
    for _ in 0..count {
        let name = String::from_utf8(get_bytes(&mut r)?)
            .map_err(|e| Error::Format(format!("tensor name: {e}")))?;
        let mut dtype = [0u8; 1];
        r.read_exact(&mut dtype)?;
        if dtype[0] != DTYPE_F64 {
            return Err(Error::Format(format!("tensor {name}: unknown dtype {}", dtype[0])));
        }
        let ndim = get_u32(&mut r)? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            let mut b = [0u8; 8];
            r.read_exact(&mut b)?;
            shape.push(
                usize::try_from(u64::from_le_bytes(b))
                    .map_err(|_| Error::Format(format!("tensor {name}: extent overflow")))?,
            );
        }
        let numel: usize = shape.iter().product();
        let mut raw = vec![0u8; numel * 8];
        r.read_exact(&mut raw)?;
        let data = raw
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("8-byte chunk")))
            .collect();
        if params.id(&name).is_some() {
            return Err(Error::Format(format!("duplicate tensor {name}")));
        }
        params.add(name, Tensor::new(shape, data)?);
    }
    Model::from_params(cfg, params)
}

pub fn save(model: &Model, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_checkpoint(model, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<Model> {
    read_checkpoint(BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attention::Mode;
    use crate::encoder::EncoderConfig;
    use rand::SeedableRng;

    fn small(mode: Mode) -> Model {
        let enc = EncoderConfig {
            input_dim: 3,
            layers: 1,
            cells_per_dir: 4,
            bidirectional: true,
            stack: 2,
            skip: 2,
            proj_dim: 5,
        };
        let mut rng = rand::rngs::StdRng::seed_from_u64(3);
        Model::init(ModelConfig::new(enc, mode, 1, 4), &mut rng).unwrap()
    }

    #[test]
    fn round_trip_every_mode() {
        for mode in Mode::LADDER {
            let m = small(mode);
            let mut buf = Vec::new();
            write_checkpoint(&m, &mut buf).unwrap();
            assert_eq!(read_checkpoint(buf.as_slice()).unwrap(), m);
        }
    }

    #[test]
    fn corrupt_checkpoints_are_rejected() {
        let m = small(Mode::Coma);
        let mut buf = Vec::new();
        write_checkpoint(&m, &mut buf).unwrap();
        assert!(read_checkpoint(&buf[..buf.len() - 3]).is_err());
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(read_checkpoint(bad.as_slice()), Err(Error::Format(_))));
        let mut bad = buf;
        bad[4] = 9;
        assert!(matches!(read_checkpoint(bad.as_slice()), Err(Error::Format(_))));
    }

    #[test]
    fn layout_must_match_config() {
        let m = small(Mode::Ha);
        let mut cfg = m.config().clone();
        cfg.attn = crate::attention::AttnConfig::new(Mode::Coma, 1, 5, 4);
        assert!(Model::from_params(cfg, m.params().clone()).is_err());
    }
}
