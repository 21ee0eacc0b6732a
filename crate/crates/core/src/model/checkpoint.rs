//! Binary checkpoint format.
//!
//! ```text
//! "KWSUM1"
//! u64 × 9   vocab_size max_len n_layers n_heads d_model d_ff seed epoch step
//! u32       tensor count
//! per tensor:
//!   u32 name length, name (UTF-8), u32 rows, u32 cols, rows·cols × f32
//! ```
//!
//! All integers and floats are little-endian. Model tensors come first in
//! canonical order; optional optimiser state follows as `adam.m.*`,
//! `adam.v.*` and a 1×1 `adam.t` holding the update count.

use std::fs;
use std::path::Path;

use super::{Matrix, Model, ModelConfig, ModelParams};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 6] = b"KWSUM1";

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct TrainingProgress {
    /// Completed epochs.
    pub epoch: u64,
    /// Completed optimisation steps (examples or batches seen).
    pub step: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: ModelParams,
    pub v: ModelParams,
    pub t: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    pub progress: TrainingProgress,
    pub optimizer: Option<AdamState>,
}

fn put_tensor(buf: &mut Vec<u8>, name: &str, t: &Matrix) {
    buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
    buf.extend_from_slice(name.as_bytes());
    buf.extend_from_slice(&(t.rows as u32).to_le_bytes());
    buf.extend_from_slice(&(t.cols as u32).to_le_bytes());
    for &v in &t.data {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
}

pub fn encode_checkpoint(ckpt: &Checkpoint) -> Vec<u8> {
    let c = &ckpt.model.config;
    let mut buf = Vec::new();
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    for v in [
        c.vocab_size as u64,
        c.max_len as u64,
        c.n_layers as u64,
        c.n_heads as u64,
        c.d_model as u64,
        c.d_ff as u64,
        c.seed,
        ckpt.progress.epoch,
        ckpt.progress.step,
    ] {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    let names = ModelParams::names(c);
    let n_tensors = names.len() * if ckpt.optimizer.is_some() { 3 } else { 1 }
        + usize::from(ckpt.optimizer.is_some());
    buf.extend_from_slice(&(n_tensors as u32).to_le_bytes());
    for (name, t) in names.iter().zip(ckpt.model.params.tensors()) {
        put_tensor(&mut buf, name, t);
    }
    if let Some(opt) = &ckpt.optimizer {
        for (name, t) in names.iter().zip(opt.m.tensors()) {
            put_tensor(&mut buf, &format!("adam.m.{name}"), t);
        }
        for (name, t) in names.iter().zip(opt.v.tensors()) {
            put_tensor(&mut buf, &format!("adam.v.{name}"), t);
        }
        put_tensor(&mut buf, "adam.t", &Matrix::from_vec(1, 1, vec![opt.t as f64]));
    }
    buf
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    fs::write(path, encode_checkpoint(ckpt)).map_err(|e| Error::io(path, e))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| format!("truncated at byte {}", self.pos))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> std::result::Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> std::result::Result<u64, String> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn tensor(&mut self) -> std::result::Result<(String, Matrix), String> {
        let len = self.u32()? as usize;
        let name = std::str::from_utf8(self.take(len)?)
            .map_err(|_| "tensor name is not UTF-8".to_string())?
            .to_string();
        let rows = self.u32()? as usize;
        let cols = self.u32()? as usize;
        let raw = self.take(rows * cols * 4)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        Ok((name, Matrix::from_vec(rows, cols, data)))
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> std::result::Result<Checkpoint, String> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(CHECKPOINT_MAGIC.len())? != CHECKPOINT_MAGIC {
        return Err("bad magic".into());
    }
    let mut header = [0u64; 9];
    for h in &mut header {
        *h = r.u64()?;
    }
    let config = ModelConfig {
        vocab_size: header[0] as usize,
        max_len: header[1] as usize,
        n_layers: header[2] as usize,
        n_heads: header[3] as usize,
        d_model: header[4] as usize,
        d_ff: header[5] as usize,
        seed: header[6],
    };
    config.validate().map_err(|e| e.to_string())?;
    let progress = TrainingProgress {
        epoch: header[7],
        step: header[8],
    };
    let count = r.u32()? as usize;
    let mut tensors = Vec::with_capacity(count);
    for _ in 0..count {
        tensors.push(r.tensor()?);
    }
    if r.pos != bytes.len() {
        return Err(format!("{} trailing bytes", bytes.len() - r.pos));
    }

    let names = ModelParams::names(&config);
    let take_group = |prefix: &str, offset: usize| -> std::result::Result<ModelParams, String> {
        let group = tensors
            .get(offset..offset + names.len())
            .ok_or_else(|| format!("missing {prefix}tensors"))?;
        for (name, (got, _)) in names.iter().zip(group) {
            if *got != format!("{prefix}{name}") {
                return Err(format!("expected tensor {prefix}{name}, found {got}"));
            }
        }
        let params =
            ModelParams::from_tensors(&config, group.iter().map(|(_, t)| t.clone()).collect());
        params.check_shapes(&config).map_err(|e| e.to_string())?;
        Ok(params)
    };
    let params = take_group("", 0)?;
    let optimizer = match count {
        n if n == names.len() => None,
        n if n == 3 * names.len() + 1 => {
            let m = take_group("adam.m.", names.len())?;
            let v = take_group("adam.v.", 2 * names.len())?;
            let (name, t) = &tensors[3 * names.len()];
            if name != "adam.t" || t.len() != 1 {
                return Err("missing adam.t".into());
            }
            Some(AdamState { m, v, t: t.data[0] as u64 })
        }
        n => return Err(format!("unexpected tensor count {n}")),
    };
    Ok(Checkpoint {
        model: Model { config, params },
        progress,
        optimizer,
    })
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes).map_err(|reason| Error::Format {
        path: path.to_path_buf(),
        reason,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model() -> Model {
        Model::init(ModelConfig {
            vocab_size: 10,
            max_len: 8,
            n_layers: 1,
            n_heads: 2,
            d_model: 4,
            d_ff: 8,
            seed: 5,
        })
        .unwrap()
    }

    /// Parameters rounded to f32, so a save/load cycle is lossless.
    fn rounded(mut m: Model) -> Model {
        for t in m.params.tensors_mut() {
            for v in &mut t.data {
                *v = *v as f32 as f64;
            }
        }
        m
    }

    #[test]
    fn header_layout() {
        let ckpt = Checkpoint {
            model: model(),
            progress: TrainingProgress { epoch: 2, step: 40 },
            optimizer: None,
        };
        let bytes = encode_checkpoint(&ckpt);
        assert_eq!(&bytes[..6], b"KWSUM1");
        assert_eq!(u64::from_le_bytes(bytes[6..14].try_into().unwrap()), 10);
        assert_eq!(u64::from_le_bytes(bytes[70..78].try_into().unwrap()), 40);
        let n = u32::from_le_bytes(bytes[78..82].try_into().unwrap());
        assert_eq!(n as usize, ModelParams::names(&ckpt.model.config).len());
        // First tensor: name "tok_emb", 10x4.
        assert_eq!(u32::from_le_bytes(bytes[82..86].try_into().unwrap()), 7);
        assert_eq!(&bytes[86..93], b"tok_emb");
    }

    #[test]
    fn round_trip_with_optimizer_state() {
        let m = rounded(model());
        let mut opt_m = m.params.zeros_like();
        opt_m.fill(0.5);
        let ckpt = Checkpoint {
            progress: TrainingProgress { epoch: 1, step: 7 },
            optimizer: Some(AdamState {
                m: opt_m,
                v: m.params.zeros_like(),
                t: 3,
            }),
            model: m,
        };
        let back = decode_checkpoint(&encode_checkpoint(&ckpt)).unwrap();
        assert_eq!(back, ckpt);
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let ckpt = Checkpoint {
            model: model(),
            progress: TrainingProgress::default(),
            optimizer: None,
        };
        let bytes = encode_checkpoint(&ckpt);
        assert!(decode_checkpoint(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode_checkpoint(&bad).is_err());
        let mut extra = bytes;
        extra.push(0);
        assert!(decode_checkpoint(&extra).is_err());
    }
}
