//! Binary parameter checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic      8 bytes  "TMAPCKPT"
//! version    u32      1
//! config     u32 × 8  d_model heads d_ff layers vocab_in vocab_out max_in_len max_out_len
//!            f64      dropout
//! count      u32      number of tensors
//! tensor     u32 name length, UTF-8 name, u32 rank, u32 × rank dims,
//!            f32 × product(dims) values
//! ```

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{ModelConfig, ModelParams};
use crate::tensor::{Scalar, Tensor};

pub const MAGIC: &[u8; 8] = b"TMAPCKPT";
pub const VERSION: u32 = 1;

pub fn encode<T: Scalar>(params: &ModelParams<T>) -> Vec<u8> {
    let c = params.config();
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    for v in [
        c.d_model,
        c.heads,
        c.d_ff,
        c.layers,
        c.vocab_in,
        c.vocab_out,
        c.max_in_len,
        c.max_out_len,
    ] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    out.extend_from_slice(&c.dropout.to_le_bytes());
    out.extend_from_slice(&(params.tensors().len() as u32).to_le_bytes());
    for (name, t) in params.names().iter().zip(params.tensors()) {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
        }
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.at.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Input(format!("checkpoint truncated at byte {}", self.at)))?;
        let out = &self.bytes[self.at..end];
        self.at = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

pub fn decode<T: Scalar>(bytes: &[u8]) -> Result<ModelParams<T>> {
    let mut cur = Cursor { bytes, at: 0 };
    if cur.take(8)? != MAGIC {
        return Err(Error::Input("not a checkpoint (bad magic)".into()));
    }
    let version = cur.u32()?;
    if version != VERSION {
        return Err(Error::Input(format!("unsupported checkpoint version {version}")));
    }
    let mut dims = [0usize; 8];
    for d in dims.iter_mut() {
        *d = cur.u32()? as usize;
    }
    let dropout = f64::from_le_bytes(cur.take(8)?.try_into().expect("8 bytes"));
    let config = ModelConfig {
        d_model: dims[0],
        heads: dims[1],
        d_ff: dims[2],
        layers: dims[3],
        vocab_in: dims[4],
        vocab_out: dims[5],
        max_in_len: dims[6],
        max_out_len: dims[7],
        dropout,
    };
    config.validate().map_err(|e| Error::Input(format!("checkpoint header: {e}")))?;
    let count = cur.u32()? as usize;
    let mut named = Vec::with_capacity(count.min(4096));
    for _ in 0..count {
        let len = cur.u32()? as usize;
        let name = std::str::from_utf8(cur.take(len)?)
            .map_err(|_| Error::Input("tensor name is not UTF-8".into()))?
            .to_string();
        let rank = cur.u32()? as usize;
        let shape = (0..rank).map(|_| cur.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let raw = cur.take(n.checked_mul(4).ok_or_else(|| Error::Input("tensor too large".into()))?)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| T::from_f64(f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64))
            .collect();
        named.push((name, Tensor::new(shape, data)?));
    }
    if cur.at != bytes.len() {
        return Err(Error::Input("trailing bytes after last tensor".into()));
    }
    ModelParams::from_tensors(config, named)
}

pub fn save<T: Scalar>(path: &Path, params: &ModelParams<T>) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&encode(params)).map_err(|e| Error::io(path, e))
}

pub fn load<T: Scalar>(path: &Path) -> Result<ModelParams<T>> {
    let mut bytes = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    decode(&bytes).map_err(|e| e.context(path.display().to_string()))
}
