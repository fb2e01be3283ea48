//! Checkpoint containers of named `TNSR1` tensors.
//!
//! ```text
//! TNSR1-PACK\n
//! <entry count>\n
//! per entry, in key order: <key>\n followed by one TNSR1 block
//! ```

use std::path::Path;

use super::heads::is_head_key;
use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::{read_line, Tensor};

pub const PACK_MAGIC: &[u8] = b"TNSR1-PACK\n";

pub fn checkpoint_bytes(params: &ParamStore) -> Vec<u8> {
    let mut out = PACK_MAGIC.to_vec();
    out.extend(format!("{}\n", params.len()).into_bytes());
    for (name, t) in params.iter() {
        out.extend_from_slice(name.as_bytes());
        out.push(b'\n');
        out.extend(t.to_tnsr1_bytes());
    }
    out
}

pub fn parse_checkpoint(bytes: &[u8]) -> Result<ParamStore> {
    let fail = |offset: usize, msg: String| Error::Checkpoint { offset, msg };
    if !bytes.starts_with(PACK_MAGIC) {
        return Err(fail(0, "missing TNSR1-PACK magic".into()));
    }
    let mut pos = PACK_MAGIC.len();
    let (line, next) = read_line(bytes, pos).ok_or_else(|| fail(pos, "unterminated entry count".into()))?;
    let count: usize = line
        .parse()
        .map_err(|_| fail(pos, format!("invalid entry count {line:?}")))?;
    pos = next;
    let mut params = ParamStore::new();
    for _ in 0..count {
        let (name, next) = read_line(bytes, pos).ok_or_else(|| fail(pos, "unterminated key line".into()))?;
        if name.is_empty() || params.contains(name) {
            return Err(fail(pos, format!("empty or duplicate key {name:?}")));
        }
        let name = name.to_string();
        let (t, used) = Tensor::parse_tnsr1(&bytes[next..], next).map_err(|e| match e {
            Error::Format { offset, msg } => fail(offset, format!("entry `{name}`: {msg}")),
            other => other,
        })?;
        params.insert(name, t);
        pos = next + used;
    }
    if pos != bytes.len() {
        return Err(fail(pos, "trailing bytes after last entry".into()));
    }
    Ok(params)
}

pub fn save_checkpoint(path: impl AsRef<Path>, params: &ParamStore) -> Result<()> {
    std::fs::write(path, checkpoint_bytes(params))?;
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LoadMode {
    /// Restore backbone keys; heads keep their fresh initialization.
    BackboneOnly,
    /// Restore backbone and every matching head key.
    WithDecoders,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LoadReport {
    pub params: ParamStore,
    pub restored: Vec<String>,
    /// Keys of `fresh` left at their initialization.
    pub reinitialized: Vec<String>,
    /// Checkpoint keys that were not used, with the reason.
    pub unmatched: Vec<(String, String)>,
}

/// Overlays a checkpoint onto freshly initialized parameters `fresh`.
/// Every backbone key of `fresh` must be present with the same shape.
pub fn load_into(ckpt: &ParamStore, fresh: ParamStore, mode: LoadMode) -> Result<LoadReport> {
    let mut params = fresh;
    let mut restored = Vec::new();
    let mut reinitialized = Vec::new();
    let mut unmatched = Vec::new();
    let names: Vec<String> = params.names().map(String::from).collect();
    for name in &names {
        let head = is_head_key(name);
        let want_shape = params.get(name)?.shape().to_vec();
        match ckpt.get(name) {
            Ok(t) if t.shape() == want_shape.as_slice() => {
                if head && mode == LoadMode::BackboneOnly {
                    reinitialized.push(name.clone());
                    unmatched.push((name.clone(), "head skipped in backbone-only mode".into()));
                } else {
                    params.insert(name.clone(), t.clone());
                    restored.push(name.clone());
                }
            }
            Ok(t) if head => {
                reinitialized.push(name.clone());
                unmatched.push((
                    name.clone(),
                    format!("shape {:?} differs from {want_shape:?}", t.shape()),
                ));
            }
            Ok(t) => {
                return Err(Error::Checkpoint {
                    offset: 0,
                    msg: format!(
                        "backbone key `{name}` has shape {:?}, expected {want_shape:?}",
                        t.shape()
                    ),
                })
            }
            Err(_) if head => reinitialized.push(name.clone()),
            Err(_) => {
                return Err(Error::Checkpoint {
                    offset: 0,
                    msg: format!("missing backbone key `{name}`"),
                })
            }
        }
    }
    for name in ckpt.names() {
        if !params.contains(name) {
            unmatched.push((name.to_string(), "no such parameter in the model".into()));
        }
    }
    Ok(LoadReport {
        params,
        restored,
        reinitialized,
        unmatched,
    })
}

pub fn load_checkpoint(path: impl AsRef<Path>, fresh: ParamStore, mode: LoadMode) -> Result<LoadReport> {
    let ckpt = parse_checkpoint(&std::fs::read(path)?)?;
    load_into(&ckpt, fresh, mode)
}
