// SPDX-License-Identifier: MIT OR Apache-2.0

//! `LPW1` weight files.
//!
//! ```text
//! "LPW1"                  4 bytes
//! header_length           u32 little-endian
//! header                  JSON: {"config": {...}, "tensors": [{"name", "shape", "offset"}]}
//! payload                 f32 little-endian, tensors concatenated in schema order
//! ```
//!
//! Offsets are bytes from the start of the payload.

use std::collections::{HashMap, HashSet};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io_util::write_atomic;
use crate::model::{tensor_schema, ModelConfig, ModelWeights, TensorRole};

pub const WEIGHTS_MAGIC: &[u8; 4] = b"LPW1";

/// Standard deviation of Gaussian-initialized tensors.
const INIT_STD: f32 = 0.02;

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    offset: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    tensors: Vec<TensorEntry>,
}

/// Serializes `weights` to `LPW1` bytes.
pub fn write_weights(weights: &ModelWeights) -> Result<Vec<u8>> {
    weights.validate()?;
    let named = weights.named_tensors();
    let mut offset = 0u64;
    let tensors = named
        .iter()
        .map(|(spec, data)| {
            let entry = TensorEntry {
                name: spec.name.clone(),
                shape: spec.shape.clone(),
                offset,
            };
            offset += 4 * data.len() as u64;
            entry
        })
        .collect();
    let header = serde_json::to_vec(&Header {
        config: weights.config.clone(),
        tensors,
    })
    .map_err(|e| Error::Format(format!("cannot encode header: {e}")))?;
    let header_len = u32::try_from(header.len())
        .map_err(|_| Error::Format("header longer than 4 GiB".into()))?;

    let mut out = Vec::with_capacity(8 + header.len() + offset as usize);
    out.extend_from_slice(WEIGHTS_MAGIC);
    out.extend_from_slice(&header_len.to_le_bytes());
    out.extend_from_slice(&header);
    for (_, data) in named {
        for v in data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn save_weights(weights: &ModelWeights, path: impl AsRef<Path>) -> Result<()> {
    let bytes = write_weights(weights)?;
    write_atomic(path.as_ref(), &bytes)
}

/// Parses `LPW1` bytes, checking magic, bounds, overlap and schema.
pub fn read_weights(bytes: &[u8]) -> Result<ModelWeights> {
    if bytes.len() < 4 || &bytes[..4] != WEIGHTS_MAGIC {
        return Err(Error::Format("missing LPW1 magic".into()));
    }
    if bytes.len() < 8 {
        return Err(Error::Truncated("header length field cut short".into()));
    }
    let header_len = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let payload_start = 8 + header_len;
    if bytes.len() < payload_start {
        return Err(Error::Truncated(format!(
            "header of {header_len} bytes, only {} available",
            bytes.len() - 8
        )));
    }
    let header: Header = serde_json::from_slice(&bytes[8..payload_start])
        .map_err(|e| Error::Format(format!("bad header JSON: {e}")))?;
    let payload = &bytes[payload_start..];
    header.config.validate()?;

    let schema: HashMap<String, Vec<usize>> = tensor_schema(&header.config)
        .into_iter()
        .map(|s| (s.name, s.shape))
        .collect();
    let mut seen = HashSet::new();
    let mut spans: Vec<(u64, u64, &str)> = Vec::with_capacity(header.tensors.len());
    let mut tensors = HashMap::with_capacity(header.tensors.len());
    for entry in &header.tensors {
        if !seen.insert(entry.name.as_str()) {
            return Err(Error::Schema(format!("tensor `{}` listed twice", entry.name)));
        }
        match schema.get(&entry.name) {
            None => return Err(Error::Schema(format!("unexpected tensor `{}`", entry.name))),
            Some(shape) if *shape != entry.shape => {
                return Err(Error::Schema(format!(
                    "tensor `{}` has shape {:?}, expected {:?}",
                    entry.name, entry.shape, shape
                )))
            }
            Some(_) => {}
        }
        let numel: usize = entry.shape.iter().product();
        let end = entry.offset + 4 * numel as u64;
        if end > payload.len() as u64 {
            return Err(Error::Truncated(format!(
                "tensor `{}` ends at payload byte {end}, payload has {}",
                entry.name,
                payload.len()
            )));
        }
        spans.push((entry.offset, end, &entry.name));
        let data: Vec<f32> = payload[entry.offset as usize..end as usize]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Format(format!("tensor `{}` holds non-finite values", entry.name)));
        }
        tensors.insert(entry.name.clone(), data);
    }
    spans.sort_unstable();
    for pair in spans.windows(2) {
        if pair[1].0 < pair[0].1 {
            return Err(Error::Format(format!(
                "tensors `{}` and `{}` overlap",
                pair[0].2, pair[1].2
            )));
        }
    }
    ModelWeights::from_named(header.config, tensors)
}

pub fn load_weights(path: impl AsRef<Path>) -> Result<ModelWeights> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    read_weights(&bytes)
}

/// Gaussian(0, 0.02) weights and embeddings, unit gains, zero biases; a pure
/// function of `config` and `seed`.
pub fn generate_random_model(config: &ModelConfig, seed: u64) -> Result<ModelWeights> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0f32, INIT_STD).expect("finite positive std");
    ModelWeights::from_fn(config.clone(), |spec| match spec.role {
        TensorRole::Weight => (0..spec.numel()).map(|_| normal.sample(&mut rng)).collect(),
        TensorRole::Gain => vec![1.0; spec.numel()],
        TensorRole::Bias => vec![0.0; spec.numel()],
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ModelConfig {
        ModelConfig::llama_like(2, 4, 2, 8, 6, 3)
    }

    #[test]
    fn seeds_determine_weights() {
        let a = generate_random_model(&small(), 1).unwrap();
        let b = generate_random_model(&small(), 1).unwrap();
        let c = generate_random_model(&small(), 2).unwrap();
        assert_eq!(write_weights(&a).unwrap(), write_weights(&b).unwrap());
        assert_ne!(a, c);
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let w = generate_random_model(&ModelConfig::gpt2_like(3, 8, 2, 16, 11, 5), 3).unwrap();
        let bytes = write_weights(&w).unwrap();
        let back = read_weights(&bytes).unwrap();
        for ((spec, a), (_, b)) in w.named_tensors().into_iter().zip(back.named_tensors()) {
            let a: Vec<u32> = a.iter().map(|v| v.to_bits()).collect();
            let b: Vec<u32> = b.iter().map(|v| v.to_bits()).collect();
            assert_eq!(a, b, "{}", spec.name);
        }
        assert_eq!(write_weights(&back).unwrap(), bytes);
    }

    #[test]
    fn corrupt_files_fail_distinctly() {
        let bytes = write_weights(&generate_random_model(&small(), 0).unwrap()).unwrap();

        let mut bad_magic = bytes.clone();
        bad_magic[0] = b'X';
        assert!(matches!(read_weights(&bad_magic), Err(Error::Format(_))));

        let truncated = &bytes[..bytes.len() - 1];
        assert!(matches!(read_weights(truncated), Err(Error::Truncated(_))));
        assert!(matches!(read_weights(&bytes[..6]), Err(Error::Truncated(_))));
    }

    fn rewrite_header(bytes: &[u8], edit: impl FnOnce(&mut serde_json::Value)) -> Vec<u8> {
        let len = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let mut header: serde_json::Value = serde_json::from_slice(&bytes[8..8 + len]).unwrap();
        edit(&mut header);
        let header = serde_json::to_vec(&header).unwrap();
        let mut out = b"LPW1".to_vec();
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&bytes[8 + len..]);
        out
    }

    #[test]
    fn missing_final_norm_names_the_tensor() {
        let bytes = write_weights(&generate_random_model(&small(), 0).unwrap()).unwrap();
        let edited = rewrite_header(&bytes, |h| {
            h["tensors"]
                .as_array_mut()
                .unwrap()
                .retain(|t| t["name"] != "final_norm.weight");
        });
        let err = read_weights(&edited).unwrap_err();
        assert!(matches!(err, Error::Schema(_)));
        assert!(err.to_string().contains("final_norm.weight"), "{err}");
    }

    #[test]
    fn shape_mismatch_and_overlap() {
        let bytes = write_weights(&generate_random_model(&small(), 0).unwrap()).unwrap();
        let wrong_shape = rewrite_header(&bytes, |h| {
            h["tensors"][0]["shape"] = serde_json::json!([4, 6]);
        });
        assert!(matches!(read_weights(&wrong_shape), Err(Error::Schema(_))));

        let overlapping = rewrite_header(&bytes, |h| {
            h["tensors"][1]["offset"] = serde_json::json!(4);
        });
        assert!(matches!(read_weights(&overlapping), Err(Error::Format(_))));
    }
}
