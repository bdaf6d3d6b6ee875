//! Versioned binary parameter checkpoints with a JSON sidecar.
//!
//! Layout (little-endian): magic `SPMCKPT\0`, `u32` format version, `u32`
//! tensor count, then per tensor a `u32`-prefixed UTF-8 name, `u32` rank,
//! `u64` extents and row-major `f64` values. The sidecar `<path>.json` holds
//! the model configuration.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use spotmatch_core::{ModelConfig, ModelParams, Tensor};

use crate::{read_json, write_json, Error, Result};

pub const MAGIC: &[u8; 8] = b"SPMCKPT\0";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub format_version: u32,
    pub model: ModelConfig,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

pub fn encode(params: &ModelParams) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + params.num_scalars() * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for p in &params.params {
        out.extend_from_slice(&(p.name.len() as u32).to_le_bytes());
        out.extend_from_slice(p.name.as_bytes());
        out.extend_from_slice(&(p.value.shape().len() as u32).to_le_bytes());
        for &d in p.value.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in p.value.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::format(self.path, "checkpoint is truncated"))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn decode(bytes: &[u8], config: ModelConfig, path: &Path) -> Result<ModelParams> {
    let mut r = Reader { bytes, pos: 0, path };
    if r.take(8)? != MAGIC {
        return Err(Error::format(path, "not a checkpoint (bad magic)"));
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(Error::format(path, format!("unsupported checkpoint version {version}")));
    }
    let count = r.u32()? as usize;
    let mut tensors = Vec::with_capacity(count);
    for _ in 0..count {
        let len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| Error::format(path, "tensor name is not UTF-8"))?
            .to_owned();
        let rank = r.u32()? as usize;
        let shape = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let n = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
        let n = n.ok_or_else(|| Error::format(path, "tensor extents overflow"))?;
        let raw = r.take(n.checked_mul(8).ok_or_else(|| Error::format(path, "tensor too large"))?)?;
        let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
        tensors.push((name, Tensor::new(shape, data)?));
    }
    if r.pos != bytes.len() {
        return Err(Error::format(path, "trailing bytes after the last tensor"));
    }
    Ok(ModelParams::from_named(config, tensors)?)
}

pub fn save(path: &Path, params: &ModelParams) -> Result<()> {
    fs::write(path, encode(params)).map_err(|e| Error::io(path, e))?;
    write_json(&sidecar_path(path), &Sidecar { format_version: FORMAT_VERSION, model: params.config })
}

pub fn load(path: &Path) -> Result<ModelParams> {
    let sidecar: Sidecar = read_json(&sidecar_path(path))?;
    if sidecar.format_version != FORMAT_VERSION {
        return Err(Error::format(path, format!("unsupported sidecar version {}", sidecar.format_version)));
    }
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, sidecar.model, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let cfg = ModelConfig { model_dim: 8, ffn_dim: 8, frames: 6, queries: 3, ..ModelConfig::default() };
        let p = ModelParams::init(cfg, 4).unwrap();
        let bytes = encode(&p);
        assert_eq!(decode(&bytes, cfg, Path::new("x")).unwrap(), p);
    }

    #[test]
    fn corrupt_input_is_rejected() {
        let cfg = ModelConfig { model_dim: 8, ffn_dim: 8, frames: 6, queries: 3, ..ModelConfig::default() };
        let bytes = encode(&ModelParams::init(cfg, 4).unwrap());
        let path = Path::new("x");
        assert!(decode(&bytes[..bytes.len() - 1], cfg, path).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode(&bad, cfg, path).is_err());
        let other = ModelConfig { queries: 4, ..cfg };
        assert!(decode(&bytes, other, path).is_err());
    }
}
