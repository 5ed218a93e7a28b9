//! Self-describing model files.
//!
//! Layout: the magic `R2UPP1\0`, a little-endian `u32` header length, a
//! JSON header with the architecture and an ordered tensor table, then the
//! tensors as little-endian `f32` in table order. Running statistics are
//! stored as `<site>.mean` and `<site>.var` entries after the parameters.

use std::fs;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::ArchitectureConfig;
use crate::network::Network;
use crate::tensor::Shape;

pub const MAGIC: &[u8; 7] = b"R2UPP1\0";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: [usize; 4],
    /// Byte offset into the payload.
    pub offset: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Header {
    pub architecture: ArchitectureConfig,
    pub tensors: Vec<TensorEntry>,
}

fn ckpt_err(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

/// Name, shape and values of everything a checkpoint stores, in order.
fn entries(net: &Network) -> Vec<(String, Shape, Vec<f64>)> {
    let mut out: Vec<_> = net
        .params
        .iter()
        .map(|p| (p.name.clone(), p.value.shape(), p.value.data().to_vec()))
        .collect();
    for (name, s) in net.buffers.iter() {
        let shape = Shape::new(1, s.mean.len(), 1, 1);
        out.push((format!("{name}.mean"), shape, s.mean.clone()));
        out.push((format!("{name}.var"), shape, s.var.clone()));
    }
    out
}

pub fn to_bytes(net: &Network) -> Result<Vec<u8>> {
    let items = entries(net);
    let mut offset = 0;
    let mut tensors = Vec::with_capacity(items.len());
    for (name, shape, values) in &items {
        tensors.push(TensorEntry {
            name: name.clone(),
            shape: shape.dims(),
            offset,
        });
        offset += values.len() * 4;
    }
    let header = Header {
        architecture: net.config.clone(),
        tensors,
    };
    let json = serde_json::to_vec(&header).map_err(|e| ckpt_err(format!("cannot encode header: {e}")))?;
    let len = u32::try_from(json.len()).map_err(|_| ckpt_err("header too large"))?;
    let mut out = Vec::with_capacity(MAGIC.len() + 4 + json.len() + offset);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&len.to_le_bytes());
    out.extend_from_slice(&json);
    for (_, _, values) in &items {
        for &v in values {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    Ok(out)
}

pub fn read_header(bytes: &[u8]) -> Result<(Header, &[u8])> {
    let rest = bytes
        .strip_prefix(MAGIC.as_slice())
        .ok_or_else(|| ckpt_err("not a checkpoint: bad magic"))?;
    if rest.len() < 4 {
        return Err(ckpt_err("truncated header length"));
    }
    let len = u32::from_le_bytes([rest[0], rest[1], rest[2], rest[3]]) as usize;
    let json = rest.get(4..4 + len).ok_or_else(|| ckpt_err("truncated header"))?;
    let header: Header = serde_json::from_slice(json).map_err(|e| ckpt_err(format!("bad header: {e}")))?;
    Ok((header, &rest[4 + len..]))
}

pub fn from_bytes(bytes: &[u8]) -> Result<Network> {
    let (header, payload) = read_header(bytes)?;
    let mut net = Network::new(header.architecture.clone(), 0)
        .map_err(|e| ckpt_err(format!("header architecture is invalid: {e}")))?;
    let expected = entries(&net);
    if expected.len() != header.tensors.len() {
        return Err(ckpt_err(format!(
            "checkpoint has {} tensors, architecture needs {}",
            header.tensors.len(),
            expected.len()
        )));
    }
    let mut values = Vec::with_capacity(expected.len());
    for ((name, shape, _), entry) in expected.iter().zip(&header.tensors) {
        if *name != entry.name || shape.dims() != entry.shape {
            return Err(ckpt_err(format!(
                "tensor {} {:?} does not match expected {name} {:?}",
                entry.name,
                entry.shape,
                shape.dims()
            )));
        }
        let n = shape.numel();
        let raw = payload
            .get(entry.offset..entry.offset + 4 * n)
            .ok_or_else(|| ckpt_err(format!("payload truncated in {name}")))?;
        let v: Vec<f64> = raw
            .chunks_exact(4)
            .map(|b| f64::from(f32::from_le_bytes([b[0], b[1], b[2], b[3]])))
            .collect();
        values.push(v);
    }
    let mut it = values.into_iter();
    for p in net.params.iter_mut() {
        let v = it.next().unwrap_or_default();
        p.value = Arc::new(crate::tensor::Tensor::from_vec(p.value.shape(), v)?);
    }
    for s in net.buffers.iter_mut() {
        s.mean = it.next().unwrap_or_default();
        s.var = it.next().unwrap_or_default();
    }
    Ok(net)
}

pub fn save(net: &Network, path: &Path) -> Result<()> {
    fs::write(path, to_bytes(net)?)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Network> {
    let bytes = fs::read(path).map_err(|e| ckpt_err(format!("cannot read {}: {e}", path.display())))?;
    from_bytes(&bytes)
}
