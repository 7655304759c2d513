//! Binary checkpoint format.
//!
//! ```text
//! "OFCNN1"
//! u64 LE     tensor count
//! per tensor:
//!   u64 LE   name length, then UTF-8 name bytes
//!   4×u64 LE shape (N, C, H, W)
//!   f64 LE   values, row-major
//! u64 LE     config length, then the ArchitectureConfig as JSON
//! ```

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use super::{ArchitectureConfig, Model};
use crate::error::{Error, Result};
use crate::ndtensor::{Parameter, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 6] = b"OFCNN1";

fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

pub fn write_checkpoint(model: &Model) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    put_u64(&mut out, model.params().len() as u64);
    for p in model.params() {
        put_u64(&mut out, p.name.len() as u64);
        out.extend_from_slice(p.name.as_bytes());
        for d in p.value.shape() {
            put_u64(&mut out, d as u64);
        }
        for v in p.value.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let config = serde_json::to_vec(model.config())?;
    put_u64(&mut out, config.len() as u64);
    out.extend_from_slice(&config);
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::invalid("checkpoint", format!("truncated at byte {}", self.pos)));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn len(&mut self) -> Result<usize> {
        let v = self.u64()?;
        usize::try_from(v)
            .ok()
            .filter(|&v| v <= self.bytes.len())
            .ok_or_else(|| Error::invalid("checkpoint", format!("implausible length {v}")))
    }
}

pub fn read_checkpoint(bytes: &[u8]) -> Result<Model> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(CHECKPOINT_MAGIC.len())? != CHECKPOINT_MAGIC {
        return Err(Error::invalid("checkpoint", "bad magic"));
    }
    let count = r.len()?;
    let mut params = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = r.len()?;
        let name = String::from_utf8(r.take(name_len)?.to_vec())
            .map_err(|_| Error::invalid("checkpoint", "tensor name is not UTF-8"))?;
        let mut shape = [0usize; 4];
        for d in &mut shape {
            *d = r.len()?;
        }
        let n: usize = shape.iter().product();
        let raw = r.take(n.checked_mul(8).ok_or_else(|| Error::invalid("checkpoint", "tensor too large"))?)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        params.push(Parameter::new(name, Tensor::from_vec(shape, data)?, false));
    }
    let config_len = r.len()?;
    let config: ArchitectureConfig = serde_json::from_slice(r.take(config_len)?)?;
    if r.pos != bytes.len() {
        return Err(Error::invalid("checkpoint", "trailing bytes"));
    }
    Model::from_parameters(&config, params)
}

pub fn save_checkpoint(model: &Model, path: &Path) -> Result<()> {
    let bytes = write_checkpoint(model)?;
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Model> {
    let mut bytes = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    read_checkpoint(&bytes)
}
