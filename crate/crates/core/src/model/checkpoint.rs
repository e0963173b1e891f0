//! Binary checkpoint format, all integers and floats little-endian:
//!
//! ```text
//! magic        8 bytes  "WAVNETCK"
//! version      u32      CHECKPOINT_VERSION
//! config_len   u64
//! config       config_len bytes of JSON (ModelConfig)
//! kernels      u32      number of kernels
//! per kernel   u32 width, u32 c_in, u32 c_out, u32 dilation,
//!              f32 x width*c_in*c_out weights, f32 x c_out biases
//! checksum     u64      FNV-1a 64 of every preceding byte
//! ```

use std::fs;
use std::hash::Hasher;
use std::io::{Read, Write};
use std::path::Path;

use fnv::FnvHasher;

use crate::tensor_ops::{ConvKernel, Real};
use crate::{Error, Result};

use super::{ModelConfig, WaveNetModel};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"WAVNETCK";
pub const CHECKPOINT_VERSION: u32 = 1;

fn checksum(bytes: &[u8]) -> u64 {
    let mut h = FnvHasher::default();
    h.write(bytes);
    h.finish()
}

pub fn write_checkpoint<S: Real, W: Write>(model: &WaveNetModel<S>, mut out: W) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    let cfg = serde_json::to_vec(model.config())
        .map_err(|e| Error::Format(format!("cannot serialize config: {e}")))?;
    buf.extend_from_slice(&(cfg.len() as u64).to_le_bytes());
    buf.extend_from_slice(&cfg);
    buf.extend_from_slice(&(model.kernels().len() as u32).to_le_bytes());
    for k in model.kernels() {
        for dim in [k.width, k.c_in, k.c_out, k.dilation] {
            buf.extend_from_slice(&(dim as u32).to_le_bytes());
        }
        for v in k.values() {
            buf.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
        }
    }
    let sum = checksum(&buf);
    buf.extend_from_slice(&sum.to_le_bytes());
    out.write_all(&buf)?;
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::Integrity(format!("checkpoint truncated while reading {what}"))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

pub fn read_checkpoint<R: Read>(mut input: R) -> Result<WaveNetModel<f32>> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    if bytes.len() < CHECKPOINT_MAGIC.len() {
        return Err(Error::Integrity("checkpoint shorter than its magic".into()));
    }
    if &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(Error::Format("not a checkpoint file (bad magic)".into()));
    }
    if bytes.len() < 12 {
        return Err(Error::Integrity("checkpoint truncated before its version".into()));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!(
            "checkpoint format version {version}, expected {CHECKPOINT_VERSION}"
        )));
    }
    if bytes.len() < 20 {
        return Err(Error::Integrity("checkpoint truncated".into()));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 8);
    let stored = u64::from_le_bytes(tail.try_into().unwrap());
    if stored != checksum(body) {
        return Err(Error::Integrity(
            "checkpoint checksum mismatch (file truncated or modified)".into(),
        ));
    }

    let mut cur = Cursor { bytes: body, pos: 12 };
    let cfg_len = cur.u64("config length")? as usize;
    let config: ModelConfig = serde_json::from_slice(cur.take(cfg_len, "config")?)
        .map_err(|e| Error::Format(format!("invalid config in checkpoint: {e}")))?;
    let count = cur.u32("kernel count")? as usize;
    let mut kernels = Vec::with_capacity(count.min(1 << 16));
    for i in 0..count {
        let what = format!("kernel {i}");
        let width = cur.u32(&what)? as usize;
        let c_in = cur.u32(&what)? as usize;
        let c_out = cur.u32(&what)? as usize;
        let dilation = cur.u32(&what)? as usize;
        let n_weights = width
            .checked_mul(c_in)
            .and_then(|v| v.checked_mul(c_out))
            .ok_or_else(|| Error::Format(format!("{what} has an impossible shape")))?;
        let mut floats = |n: usize| -> Result<Vec<f32>> {
            let raw = cur.take(n.checked_mul(4).unwrap_or(usize::MAX), &what)?;
            Ok(raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect())
        };
        let weights = floats(n_weights)?;
        let bias = floats(c_out)?;
        kernels.push(
            ConvKernel::new(width, c_in, c_out, dilation, weights, bias)
                .map_err(|e| Error::Format(format!("{what}: {e}")))?,
        );
    }
    if cur.pos != body.len() {
        return Err(Error::Format(format!(
            "{} unexpected bytes after the parameter payload",
            body.len() - cur.pos
        )));
    }
    WaveNetModel::from_parts(config, kernels)
}

pub fn save_checkpoint<S: Real>(model: &WaveNetModel<S>, path: impl AsRef<Path>) -> Result<()> {
    let mut buf = Vec::new();
    write_checkpoint(model, &mut buf)?;
    fs::write(path, buf)?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<WaveNetModel<f32>> {
    read_checkpoint(fs::File::open(path)?)
}
