//! Flat binary checkpoint format.
//!
//! ```text
//! "FFTENSORS\0"
//! repeated until end of file:
//!   name_len: u32 LE, name: UTF-8 bytes,
//!   rank: u32 LE, extents: rank × u32 LE,
//!   data: product(extents) × f32 LE
//! ```
//!
//! Values are stored as `f32` whatever the in-memory element type.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use super::{numel, Element, Tensor};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 10] = b"FFTENSORS\0";

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl NamedTensor {
    pub fn from_tensor<T: Element>(name: &str, t: &Tensor<T>) -> Self {
        NamedTensor {
            name: name.to_string(),
            shape: t.shape().to_vec(),
            data: t.data().iter().map(|v| v.as_f64() as f32).collect(),
        }
    }
}

pub fn encode(entries: &[NamedTensor]) -> Vec<u8> {
    let mut out = MAGIC.to_vec();
    for e in entries {
        out.extend_from_slice(&(e.name.len() as u32).to_le_bytes());
        out.extend_from_slice(e.name.as_bytes());
        out.extend_from_slice(&(e.shape.len() as u32).to_le_bytes());
        for &d in &e.shape {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in &e.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| {
            Error::Format(format!(
                "checkpoint truncated reading {what} at byte {} ({} bytes total)",
                self.pos,
                self.bytes.len()
            ))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

pub fn decode(bytes: &[u8]) -> Result<Vec<NamedTensor>> {
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::Format("missing FFTENSORS magic".into()));
    }
    let mut cur = Cursor {
        bytes,
        pos: MAGIC.len(),
    };
    let mut out = Vec::new();
    while cur.pos < bytes.len() {
        let name_len = cur.u32("name length")? as usize;
        let name = std::str::from_utf8(cur.take(name_len, "name")?)
            .map_err(|e| Error::Format(format!("tensor name is not UTF-8: {e}")))?
            .to_string();
        let rank = cur.u32("rank")? as usize;
        let mut shape = Vec::with_capacity(rank.min(16));
        for _ in 0..rank {
            shape.push(cur.u32("extent")? as usize);
        }
        let count = numel(&shape);
        let raw = cur.take(count.saturating_mul(4), &format!("data of `{name}`"))?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        out.push(NamedTensor { name, shape, data });
    }
    Ok(out)
}

pub fn save<T: Element>(path: impl AsRef<Path>, params: &[(String, Tensor<T>)]) -> Result<()> {
    let entries: Vec<_> = params.iter().map(|(n, t)| NamedTensor::from_tensor(n, t)).collect();
    fs::write(path, encode(&entries))?;
    Ok(())
}

/// Overwrites `params` in place from `entries`. Names must match exactly in
/// both directions and shapes must agree.
pub fn assign<T: Element>(params: &[(String, Tensor<T>)], entries: Vec<NamedTensor>) -> Result<()> {
    let mut by_name: HashMap<String, NamedTensor> = entries.into_iter().map(|e| (e.name.clone(), e)).collect();
    for (name, t) in params {
        let e = by_name.remove(name).ok_or_else(|| Error::Checkpoint {
            name: name.clone(),
            detail: "missing from checkpoint".into(),
        })?;
        if e.shape != t.shape() {
            return Err(Error::Checkpoint {
                name: name.clone(),
                detail: format!("shape {:?} in checkpoint, {:?} in model", e.shape, t.shape()),
            });
        }
        t.update_data(|d| {
            d.iter_mut()
                .zip(&e.data)
                .for_each(|(dst, &v)| *dst = T::lit(f64::from(v)))
        });
    }
    if let Some(extra) = by_name.keys().min() {
        return Err(Error::Checkpoint {
            name: extra.clone(),
            detail: "not a parameter of this model".into(),
        });
    }
    Ok(())
}

pub fn load_into<T: Element>(path: impl AsRef<Path>, params: &[(String, Tensor<T>)]) -> Result<()> {
    let bytes = fs::read(path)?;
    assign(params, decode(&bytes)?)
}
