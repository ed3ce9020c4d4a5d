//! Binary checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic      8 bytes  "MXEDCKPT"
//! version    u32      1
//! config     u64 length + UTF-8 JSON of ModelConfig
//! count      u32      number of tensors
//! per tensor:
//!   name     u32 length + UTF-8 bytes
//!   rank     u32
//!   dims     rank × u64
//!   values   numel × f64 (IEEE-754 bits, little-endian)
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{ModelConfig, ModelParams, Seq2Seq};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const MAGIC: &[u8; 8] = b"MXEDCKPT";
const VERSION: u32 = 1;
const MAX_NAME: usize = 4096;

pub fn write_checkpoint(
    mut w: impl Write,
    config: &ModelConfig,
    params: &ModelParams,
) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    let cfg = serde_json::to_vec(config)?;
    w.write_all(&(cfg.len() as u64).to_le_bytes())?;
    w.write_all(&cfg)?;
    w.write_all(&(params.len() as u32).to_le_bytes())?;
    for (name, t) in params.iter() {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(t.shape().len() as u32).to_le_bytes())?;
        for &d in t.shape() {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(t.numel() * 8);
        for &x in t.data() {
            buf.extend_from_slice(&x.to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    w.flush()?;
    Ok(())
}

fn bad(detail: impl std::fmt::Display) -> Error {
    Error::parse("checkpoint", detail)
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

pub fn read_checkpoint(mut r: impl Read) -> Result<(ModelConfig, ModelParams)> {
    let mut magic = [0; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(bad("not a checkpoint file"));
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let cfg_len = read_u64(&mut r)? as usize;
    if cfg_len > 1 << 20 {
        return Err(bad("config block too large"));
    }
    let mut cfg = vec![0; cfg_len];
    r.read_exact(&mut cfg)?;
    let config: ModelConfig = serde_json::from_slice(&cfg)?;
    let count = read_u32(&mut r)? as usize;
    let mut names = Vec::with_capacity(count);
    let mut tensors = Vec::with_capacity(count);
    for _ in 0..count {
        let len = read_u32(&mut r)? as usize;
        if len > MAX_NAME {
            return Err(bad("tensor name too long"));
        }
        let mut name = vec![0; len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|_| bad("tensor name is not UTF-8"))?;
        let rank = read_u32(&mut r)? as usize;
        if rank > 8 {
            return Err(bad(format!("tensor {name} has rank {rank}")));
        }
        let shape = (0..rank)
            .map(|_| read_u64(&mut r).map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let numel = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .filter(|&n| n <= 1 << 28)
            .ok_or_else(|| bad(format!("tensor {name} is too large")))?;
        let mut raw = vec![0; numel * 8];
        r.read_exact(&mut raw)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        names.push(name);
        tensors.push(Tensor::new(shape, data)?);
    }
    let mut rest = [0; 1];
    if r.read(&mut rest)? != 0 {
        return Err(bad("trailing bytes"));
    }
    Ok((config, ModelParams::from_parts(names, tensors)))
}

pub fn save_checkpoint(path: impl AsRef<Path>, model: &Seq2Seq) -> Result<()> {
    let f = BufWriter::new(File::create(path)?);
    write_checkpoint(f, model.config(), model.params())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Seq2Seq> {
    let (config, params) = read_checkpoint(BufReader::new(File::open(path)?))?;
    Seq2Seq::from_params(config, params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::TagMode;

    fn model() -> Seq2Seq {
        let mut c = ModelConfig::desk_scale(40, 3);
        c.model_dim = 8;
        c.num_heads = 2;
        c.ffn_dim = 12;
        c.tag_mode = TagMode::LanguageEmbedding;
        Seq2Seq::new(c, 11).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let mut m = model();
        m.params_mut().tensors_mut()[0].data_mut()[0] = -0.0;
        m.params_mut().tensors_mut()[0].data_mut()[1] = f64::MIN_POSITIVE / 3.0;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        save_checkpoint(&path, &m).unwrap();
        let back = load_checkpoint(&path).unwrap();
        assert_eq!(back.config(), m.config());
        for (a, b) in m.params().tensors().iter().zip(back.params().tensors()) {
            assert_eq!(a.shape(), b.shape());
            let bits = |t: &Tensor| t.data().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(a), bits(b));
        }
    }

    #[test]
    fn corrupt_inputs_are_rejected() {
        let m = model();
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, m.config(), m.params()).unwrap();
        assert!(read_checkpoint(&buf[..buf.len() - 3]).is_err());
        let mut extra = buf.clone();
        extra.push(0);
        assert!(read_checkpoint(&extra[..]).is_err());
        let mut wrong = buf.clone();
        wrong[0] = b'X';
        assert!(matches!(
            read_checkpoint(&wrong[..]),
            Err(Error::Parse { .. })
        ));
    }
}
