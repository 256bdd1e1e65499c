use std::path::Path;

use serde::{Deserialize, Serialize};

use super::unet::{build_model, ModelSpec, VolNet};
use crate::error::FormatError;
use crate::fileio::{decode_framed, encode_framed, f32_payload, read_f32_payload, write_bytes};
use crate::scalar::Scalar;

pub const MODEL_MAGIC: &[u8] = b"TMDL1\n";

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelHeader {
    spec: ModelSpec,
    #[serde(default)]
    meta: serde_json::Value,
    tensors: Vec<TensorEntry>,
}

/// Serializes the spec, caller metadata, and every parameter and buffer as f32.
pub fn encode_model<T: Scalar>(net: &VolNet<T>, meta: &serde_json::Value) -> Vec<u8> {
    let mut tensors = Vec::new();
    let mut values = Vec::new();
    net.visit(&mut |p| {
        tensors.push(TensorEntry {
            name: p.name.clone(),
            shape: p.shape.clone(),
        });
        values.extend(p.value.iter().map(|v| v.to_f64_lossy() as f32));
    });
    let header = ModelHeader {
        spec: net.spec.clone(),
        meta: meta.clone(),
        tensors,
    };
    encode_framed(MODEL_MAGIC, &header, &f32_payload(&values))
}

/// Inverse of [`encode_model`]; returns the network and its metadata.
pub fn decode_model<T: Scalar>(bytes: &[u8]) -> Result<(VolNet<T>, serde_json::Value), FormatError> {
    let (header, payload): (ModelHeader, _) = decode_framed(bytes, MODEL_MAGIC)?;
    let mut net = build_model::<T>(&header.spec, 0)
        .map_err(|e| FormatError::InvariantViolation(e.to_string()))?;
    let total = header.tensors.iter().map(|t| t.shape.iter().product::<usize>()).sum();
    let values = read_f32_payload(payload, total)?;
    let mut mismatch = None;
    let mut idx = 0;
    let mut offset = 0;
    net.visit_mut(&mut |p| {
        match header.tensors.get(idx) {
            Some(e) if e.name == p.name && e.shape == p.shape => {
                for (dst, &src) in p.value.iter_mut().zip(&values[offset..]) {
                    *dst = T::from_f64_lossy(src as f64);
                }
                offset += p.value.len();
            }
            _ if mismatch.is_none() => mismatch = Some(p.name.clone()),
            _ => {}
        }
        idx += 1;
    });
    if let Some(name) = mismatch {
        return Err(FormatError::InvariantViolation(format!("tensor {name} missing or misshapen")));
    }
    if idx != header.tensors.len() {
        return Err(FormatError::InvariantViolation(format!(
            "checkpoint has {} tensors, model has {idx}",
            header.tensors.len()
        )));
    }
    Ok((net, header.meta))
}

pub fn save_model<T: Scalar>(net: &VolNet<T>, meta: &serde_json::Value, path: impl AsRef<Path>) -> Result<(), FormatError> {
    write_bytes(path.as_ref(), &encode_model(net, meta))
}

pub fn load_model<T: Scalar>(path: impl AsRef<Path>) -> Result<(VolNet<T>, serde_json::Value), FormatError> {
    decode_model(&std::fs::read(path)?)
}
