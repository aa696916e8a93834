//! Binary checkpoint container.
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! magic      8 bytes  "DIFFMEM\0"
//! version    u32
//! dim        u32
//! embed      u32
//! layers     u32      number of hidden layers (2)
//! hidden     u32 × layers
//! norm_dim   u32
//! mean       f64 × norm_dim
//! scale      f64
//! n_params   u64
//! params     f64 × n_params
//! ```

use std::path::Path;

use crate::data::Normalizer;
use crate::error::{Error, Result};
use crate::nn::{Architecture, DenoiserNet};

pub const MAGIC: &[u8; 8] = b"DIFFMEM\0";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub net: DenoiserNet,
    pub normalizer: Normalizer,
}

impl Checkpoint {
    pub fn new(net: DenoiserNet, normalizer: Normalizer) -> Result<Self> {
        if normalizer.mean.len() != net.dim() {
            return Err(Error::Checkpoint("normalizer and network dimensions differ".into()));
        }
        Ok(Self { net, normalizer })
    }

    pub fn encode(&self) -> Vec<u8> {
        let arch = self.net.arch();
        let params = self.net.params();
        let mut out = Vec::with_capacity(64 + 8 * (params.len() + arch.dim));
        out.extend_from_slice(MAGIC);
        put_u32(&mut out, FORMAT_VERSION);
        put_u32(&mut out, arch.dim as u32);
        put_u32(&mut out, arch.embed as u32);
        put_u32(&mut out, arch.hidden.len() as u32);
        for h in arch.hidden {
            put_u32(&mut out, h as u32);
        }
        put_u32(&mut out, self.normalizer.mean.len() as u32);
        for m in &self.normalizer.mean {
            out.extend_from_slice(&m.to_le_bytes());
        }
        out.extend_from_slice(&self.normalizer.scale.to_le_bytes());
        out.extend_from_slice(&(params.len() as u64).to_le_bytes());
        for p in params {
            out.extend_from_slice(&p.to_le_bytes());
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported format version {version}")));
        }
        let dim = r.u32()? as usize;
        let embed = r.u32()? as usize;
        let layers = r.u32()? as usize;
        if layers != 2 {
            return Err(Error::Checkpoint(format!("expected 2 hidden layers, found {layers}")));
        }
        let hidden = [r.u32()? as usize, r.u32()? as usize];
        let arch = Architecture { dim, embed, hidden };
        if arch != Architecture::new(dim) {
            return Err(Error::Checkpoint(format!("unsupported architecture {arch:?}")));
        }
        let norm_dim = r.u32()? as usize;
        let mean = (0..norm_dim).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        let scale = r.f64()?;
        let count = r.u64()? as usize;
        if count != arch.param_count() {
            return Err(Error::Checkpoint(format!("expected {} parameters, found {count}", arch.param_count())));
        }
        let params = (0..count).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint("trailing bytes".into()));
        }
        let net = DenoiserNet::from_params(arch, params).map_err(|e| Error::Checkpoint(e.to_string()))?;
        Self::new(net, Normalizer { mean, scale })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.encode()).map_err(|source| Error::Io { path: path.to_path_buf(), source })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|source| Error::Io { path: path.to_path_buf(), source })?;
        Self::decode(&bytes)
    }
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Checkpoint("truncated file".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}
