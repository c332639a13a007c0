//! Binary checkpoint files.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "DSUM"  u32 version  u32 len + model kind  u32 len + config text
//! u32 tensor count
//! per tensor: u32 len + name  u32 rank  u32 dims[rank]  f64 values[numel]
//! ```
//!
//! The config text is one `key=value` line per hyperparameter.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{AnyModel, ModelKind, Summarizer};
use crate::tensor::Array;

pub const MAGIC: &[u8; 4] = b"DSUM";
pub const VERSION: u32 = 1;

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    put_u32(out, s.len());
    out.extend_from_slice(s.as_bytes());
}

/// Serializes a model to checkpoint bytes.
pub fn to_bytes(model: &dyn Summarizer) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, VERSION as usize);
    put_str(&mut out, model.kind().as_str());
    let config: String = model
        .config_entries()
        .iter()
        .map(|(k, v)| format!("{k}={v}\n"))
        .collect();
    put_str(&mut out, &config);
    let store = model.params();
    put_u32(&mut out, store.len());
    for id in store.ids() {
        let value = store.value(id);
        put_str(&mut out, store.name(id));
        put_u32(&mut out, value.rank());
        for &d in value.shape() {
            put_u32(&mut out, d);
        }
        for v in value.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Format(format!("checkpoint truncated while reading {what}")))?;
        let slice = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(slice)
    }

    fn u32(&mut self, what: &str) -> Result<usize> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }

    fn string(&mut self, what: &str) -> Result<&'a str> {
        let len = self.u32(what)?;
        std::str::from_utf8(self.take(len, what)?).map_err(|_| Error::Format(format!("{what} is not UTF-8")))
    }
}

fn parse_config(text: &str) -> Result<BTreeMap<String, String>> {
    text.lines()
        .map(|line| {
            line.split_once('=')
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .ok_or_else(|| Error::Format(format!("bad config line {line:?}")))
        })
        .collect()
}

/// Rebuilds a model from checkpoint bytes.
pub fn from_bytes(bytes: &[u8]) -> Result<AnyModel> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(Error::Format("not a checkpoint file (bad magic)".into()));
    }
    let version = r.u32("version")?;
    if version != VERSION as usize {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let kind: ModelKind = r.string("model kind")?.parse().map_err(|e: Error| Error::Format(e.to_string()))?;
    let config = parse_config(r.string("config")?)?;
    let mut model = AnyModel::from_config(kind, &config, 0)?;
    let count = r.u32("tensor count")?;
    if count != model.params().len() {
        return Err(Error::Format(format!(
            "checkpoint has {count} tensors, config implies {}",
            model.params().len()
        )));
    }
    for _ in 0..count {
        let name = r.string("tensor name")?.to_string();
        let rank = r.u32("tensor rank")?;
        let shape = (0..rank).map(|_| r.u32("tensor dims")).collect::<Result<Vec<_>>>()?;
        let id = model
            .params()
            .find(&name)
            .ok_or_else(|| Error::Format(format!("unknown tensor {name:?}")))?;
        if model.params().value(id).shape() != shape.as_slice() {
            return Err(Error::Format(format!(
                "tensor {name:?} has shape {shape:?}, config implies {:?}",
                model.params().value(id).shape()
            )));
        }
        let numel: usize = shape.iter().product();
        let raw = r.take(numel * 8, "tensor values")?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect();
        model.params_mut().set(id, Array::new(shape, data)?)?;
    }
    if r.pos != bytes.len() {
        return Err(Error::Format("trailing bytes after last tensor".into()));
    }
    Ok(model)
}

pub fn save_checkpoint(model: &dyn Summarizer, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, to_bytes(model))?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<AnyModel> {
    from_bytes(&fs::read(path)?)
}
