//! Binary checkpoint format, version 1. All integers and floats little-endian.
//!
//! ```text
//! magic            4 bytes  "PSCK"
//! version          u32      1
//! input_dim        u32
//! num_classes      u32
//! activation       u8       0 = relu, 1 = tanh
//! n_hidden         u32
//! hidden widths    n_hidden x u32
//! seed             u64
//! stream_id        u64
//! dataset fp       u32 length + UTF-8 bytes
//! config fp        u32 length + UTF-8 bytes
//! param_count      u64
//! params           param_count x f64
//! ```

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use super::{Activation, ModelCheckpoint, ModelSpec, Provenance};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"PSCK";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn write_checkpoint<W: Write>(model: &ModelCheckpoint, mut w: W) -> Result<()> {
    let spec = model.spec();
    let prov = model.provenance();
    let mut buf = Vec::with_capacity(64 + 8 * model.params().len());
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(spec.input_dim as u32).to_le_bytes());
    buf.extend_from_slice(&(spec.num_classes as u32).to_le_bytes());
    buf.push(match spec.activation {
        Activation::Relu => 0,
        Activation::Tanh => 1,
    });
    buf.extend_from_slice(&(spec.hidden_widths.len() as u32).to_le_bytes());
    for &h in &spec.hidden_widths {
        buf.extend_from_slice(&(h as u32).to_le_bytes());
    }
    buf.extend_from_slice(&prov.seed.to_le_bytes());
    buf.extend_from_slice(&prov.stream_id.to_le_bytes());
    for s in [&prov.dataset_fingerprint, &prov.config_fingerprint] {
        buf.extend_from_slice(&(s.len() as u32).to_le_bytes());
        buf.extend_from_slice(s.as_bytes());
    }
    buf.extend_from_slice(&(model.params().len() as u64).to_le_bytes());
    for p in model.params() {
        buf.extend_from_slice(&p.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| Error::Parse {
            offset: self.bytes.len() as u64,
            message: format!("truncated checkpoint: needed {n} bytes at offset {}", self.pos),
        })?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn string(&mut self) -> Result<String> {
        let at = self.pos as u64;
        let len = self.u32()? as usize;
        String::from_utf8(self.take(len)?.to_vec())
            .map_err(|_| Error::Parse { offset: at, message: "fingerprint is not UTF-8".into() })
    }
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<ModelCheckpoint> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    let mut c = Cursor { bytes: &bytes, pos: 0 };
    if c.take(4)? != CHECKPOINT_MAGIC {
        return Err(Error::Parse { offset: 0, message: "wrong magic: not a checkpoint file".into() });
    }
    let version = c.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Parse { offset: 4, message: format!("unsupported checkpoint version {version}") });
    }
    let input_dim = c.u32()? as usize;
    let num_classes = c.u32()? as usize;
    let activation = match c.u8()? {
        0 => Activation::Relu,
        1 => Activation::Tanh,
        other => {
            return Err(Error::Parse { offset: 12, message: format!("unknown activation tag {other}") });
        }
    };
    let n_hidden = c.u32()? as usize;
    let hidden_widths = (0..n_hidden).map(|_| c.u32().map(|v| v as usize)).collect::<Result<Vec<_>>>()?;
    let seed = c.u64()?;
    let stream_id = c.u64()?;
    let dataset_fingerprint = c.string()?;
    let config_fingerprint = c.string()?;
    let count = c.u64()? as usize;
    let raw = c.take(count.checked_mul(8).ok_or_else(|| Error::Parse {
        offset: c.pos as u64,
        message: "parameter count overflows".into(),
    })?)?;
    let params = raw.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes"))).collect();
    if c.pos != bytes.len() {
        return Err(Error::Parse { offset: c.pos as u64, message: "trailing bytes after parameters".into() });
    }
    let spec = ModelSpec { input_dim, hidden_widths, num_classes, activation };
    ModelCheckpoint::new(spec, params, Provenance { seed, stream_id, dataset_fingerprint, config_fingerprint })
}

pub fn save_checkpoint(model: &ModelCheckpoint, path: impl AsRef<Path>) -> Result<()> {
    let mut buf = Vec::new();
    write_checkpoint(model, &mut buf)?;
    fs::write(path, buf)?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<ModelCheckpoint> {
    read_checkpoint(fs::File::open(path)?)
}
