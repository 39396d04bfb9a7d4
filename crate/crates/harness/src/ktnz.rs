//! KTNZ v1 model container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "KTNZ"                      4 bytes
//! version                     u16 (= 1)
//! description length          u32, then that many UTF-8 bytes
//! tensor count                u32
//! per tensor, sorted by name:
//!   name length               u32, then UTF-8 bytes
//!   dtype                     u8 (0 = f64, 1 = f32)
//!   rank                      u8
//!   dims                      rank × u64
//!   payload                   row-major values
//! ```
//!
//! The description is the text block produced by [`crate::model::describe`].
//! Models are always written as f64; f32 payloads are widened on load.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use kerneltn_core::DenseTensor;
use thiserror::Error;

use crate::model::{describe, parse_layers, ModelError, ModelSpec};

pub const MAGIC: [u8; 4] = *b"KTNZ";
pub const VERSION: u16 = 1;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("bad magic {found:02x?} at offset 0")]
    BadMagic { found: Vec<u8> },
    #[error("unsupported version {version} at offset 4")]
    UnsupportedVersion { version: u16 },
    #[error("file truncated at offset {offset} while reading {field}")]
    TruncatedFile { offset: usize, field: String },
    #[error("shape inconsistency at offset {offset}: {msg}")]
    ShapeInconsistency { offset: usize, msg: String },
    #[error("invalid {field} at offset {offset}")]
    BadField { offset: usize, field: String },
    #[error("{0} trailing bytes after the tensor table")]
    TrailingBytes(usize),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, FormatError>;

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

pub fn encode(m: &ModelSpec) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    put_str(&mut out, &describe(m));
    out.extend_from_slice(&(m.params.len() as u32).to_le_bytes());
    for (name, t) in &m.params {
        put_str(&mut out, name);
        out.push(0);
        out.push(t.rank() as u8);
        for &d in t.dims() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, field: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        match end {
            Some(end) => {
                let s = &self.buf[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(FormatError::TruncatedFile { offset: self.pos, field: field.to_string() }),
        }
    }

    fn array<const N: usize>(&mut self, field: &str) -> Result<[u8; N]> {
        Ok(self.take(N, field)?.try_into().expect("length checked"))
    }

    fn u8(&mut self, field: &str) -> Result<u8> {
        Ok(self.take(1, field)?[0])
    }

    fn u32(&mut self, field: &str) -> Result<u32> {
        self.array(field).map(u32::from_le_bytes)
    }

    fn u64(&mut self, field: &str) -> Result<u64> {
        self.array(field).map(u64::from_le_bytes)
    }

    fn string(&mut self, field: &str) -> Result<String> {
        let len = self.u32(field)? as usize;
        let at = self.pos;
        let bytes = self.take(len, field)?;
        String::from_utf8(bytes.to_vec()).map_err(|_| FormatError::BadField { offset: at, field: field.to_string() })
    }
}

pub fn decode(buf: &[u8]) -> Result<ModelSpec> {
    let mut r = Reader { buf, pos: 0 };
    let magic = r.take(4.min(buf.len()), "magic")?;
    if magic != MAGIC {
        return Err(FormatError::BadMagic { found: magic.to_vec() });
    }
    let version = u16::from_le_bytes(r.array("version")?);
    if version != VERSION {
        return Err(FormatError::UnsupportedVersion { version });
    }
    let text = r.string("layer description")?;
    let (input, layers) = parse_layers(&text)?;
    let count = r.u32("tensor count")?;
    let mut params = BTreeMap::new();
    for i in 0..count {
        let name = r.string(&format!("name of tensor {i}"))?;
        let dtype_at = r.pos;
        let dtype = r.u8(&format!("dtype of '{name}'"))?;
        let width = match dtype {
            0 => 8,
            1 => 4,
            _ => return Err(FormatError::BadField { offset: dtype_at, field: format!("dtype {dtype} of '{name}'") }),
        };
        let rank = r.u8(&format!("rank of '{name}'"))? as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(r.u64(&format!("dims of '{name}'"))? as usize);
        }
        let payload_at = r.pos;
        let n = dims.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d)).ok_or_else(|| {
            FormatError::ShapeInconsistency { offset: payload_at, msg: format!("dims {dims:?} of '{name}' overflow") }
        })?;
        let bytes = n
            .checked_mul(width)
            .ok_or_else(|| FormatError::TruncatedFile { offset: payload_at, field: format!("payload of '{name}'") })?;
        let raw = r.take(bytes, &format!("payload of '{name}'"))?;
        let data: Vec<f64> = if width == 8 {
            raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect()
        } else {
            raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64).collect()
        };
        let t = DenseTensor::new(dims, data)
            .map_err(|e| FormatError::ShapeInconsistency { offset: payload_at, msg: e.to_string() })?;
        params.insert(name, t);
    }
    if r.pos != buf.len() {
        return Err(FormatError::TrailingBytes(buf.len() - r.pos));
    }
    let m = ModelSpec { input, layers, params };
    m.validate().map_err(|e| match e {
        ModelError::ShapeInconsistency(msg) | ModelError::MissingParameter(msg) => {
            FormatError::ShapeInconsistency { offset: r.pos, msg }
        }
        other => other.into(),
    })?;
    Ok(m)
}

pub fn save_model(m: &ModelSpec, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode(m))?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<ModelSpec> {
    decode(&fs::read(path)?)
}
