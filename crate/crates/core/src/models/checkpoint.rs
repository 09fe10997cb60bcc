//! Binary checkpoint format.
//!
//! Layout, all integers little-endian:
//! `"ABRAM1"`, `u32` version, `u32` layer count, `u32` per layer size,
//! `u8` activation tag, `u64` parameter count, `f64` parameters,
//! `u64` seed, `u64` config length, UTF-8 config text.

use std::fs;
use std::path::Path;

use super::{Activation, Architecture, ModelParams};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 6] = b"ABRAM1";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Trained parameters plus the configuration and seed that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub config: String,
    pub seed: u64,
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let arch = &ckpt.params.arch;
    let mut b = Vec::with_capacity(64 + 8 * ckpt.params.theta.len() + ckpt.config.len());
    b.extend_from_slice(CHECKPOINT_MAGIC);
    b.extend_from_slice(&ckpt.params.version.to_le_bytes());
    b.extend_from_slice(&(arch.sizes.len() as u32).to_le_bytes());
    for s in &arch.sizes {
        b.extend_from_slice(&(*s as u32).to_le_bytes());
    }
    b.push(arch.activation.tag());
    b.extend_from_slice(&(ckpt.params.theta.len() as u64).to_le_bytes());
    for v in &ckpt.params.theta {
        b.extend_from_slice(&v.to_le_bytes());
    }
    b.extend_from_slice(&ckpt.seed.to_le_bytes());
    b.extend_from_slice(&(ckpt.config.len() as u64).to_le_bytes());
    b.extend_from_slice(ckpt.config.as_bytes());
    fs::write(path, b).map_err(|e| Error::io(path, e))
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let out = self
            .bytes
            .get(self.pos..self.pos + n)
            .ok_or_else(|| Error::parse(self.path, format!("truncated checkpoint at byte offset {}", self.pos)))?;
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut c = Cursor { bytes: &bytes, pos: 0, path };
    if c.take(6)? != CHECKPOINT_MAGIC {
        return Err(Error::parse(path, "bad checkpoint magic"));
    }
    let version = c.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::parse(path, format!("unsupported checkpoint version {version}")));
    }
    let layers = c.u32()? as usize;
    let sizes = (0..layers).map(|_| c.u32().map(|s| s as usize)).collect::<Result<Vec<_>>>()?;
    let activation = Activation::from_tag(c.take(1)?[0]).map_err(|e| Error::parse(path, e.to_string()))?;
    let mut arch = Architecture::new(sizes).map_err(|e| Error::parse(path, e.to_string()))?;
    arch.activation = activation;
    let n = c.u64()? as usize;
    if n != arch.num_params() {
        return Err(Error::parse(
            path,
            format!("parameter count {n} does not match architecture ({})", arch.num_params()),
        ));
    }
    let theta = (0..n)
        .map(|_| c.take(8).map(|b| f64::from_le_bytes(b.try_into().unwrap())))
        .collect::<Result<Vec<_>>>()?;
    let seed = c.u64()?;
    let len = c.u64()? as usize;
    let config = String::from_utf8(c.take(len)?.to_vec()).map_err(|_| Error::parse(path, "config snapshot is not UTF-8"))?;
    Ok(Checkpoint {
        params: ModelParams { arch, theta, version },
        config,
        seed,
    })
}
