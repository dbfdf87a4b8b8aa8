//! Model directory format: `manifest.json` plus a flat little-endian `f32` blob.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ModelSpec, ModelWeights, NetworkParam, Param};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const WEIGHTS_FILE: &str = "weights.bin";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorRecord {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: String,
    pub offset_bytes: usize,
    pub len_elems: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub network_param: NetworkParam,
    pub freq_bins: usize,
    pub tensors: Vec<TensorRecord>,
}

impl Manifest {
    pub fn for_weights(w: &ModelWeights) -> Self {
        let mut offset = 0;
        let tensors = w
            .tensors()
            .map(|(p, t)| {
                let rec = TensorRecord {
                    name: p.name(),
                    shape: t.shape().to_vec(),
                    dtype: "f32".into(),
                    offset_bytes: offset,
                    len_elems: t.len(),
                };
                offset += 4 * t.len();
                rec
            })
            .collect();
        Self {
            version: FORMAT_VERSION,
            network_param: w.spec().params,
            freq_bins: w.spec().freq_bins,
            tensors,
        }
    }
}

/// Writes `dir/manifest.json` and `dir/weights.bin`, creating `dir` if needed.
pub fn save_model(w: &ModelWeights, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

    let manifest = Manifest::for_weights(w);
    let mut blob = Vec::with_capacity(4 * w.param_count());
    for (_, t) in w.tensors() {
        for x in t.data() {
            blob.extend_from_slice(&x.to_le_bytes());
        }
    }

    let manifest_path = dir.join(MANIFEST_FILE);
    let json = serde_json::to_string_pretty(&manifest)?;
    fs::write(&manifest_path, json).map_err(|e| Error::io(&manifest_path, e))?;
    let weights_path = dir.join(WEIGHTS_FILE);
    fs::write(&weights_path, blob).map_err(|e| Error::io(&weights_path, e))?;
    Ok(())
}

pub fn load_model(dir: impl AsRef<Path>) -> Result<ModelWeights> {
    let dir = dir.as_ref();
    let manifest_path = dir.join(MANIFEST_FILE);
    let fail = |reason: String| Error::Load {
        path: dir.to_path_buf(),
        reason,
    };

    let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| fail(format!("malformed {MANIFEST_FILE}: {e}")))?;
    if manifest.version != FORMAT_VERSION {
        return Err(fail(format!(
            "unsupported format version {} (expected {FORMAT_VERSION})",
            manifest.version
        )));
    }
    let spec = ModelSpec::new(manifest.network_param, manifest.freq_bins)
        .map_err(|e| fail(e.to_string()))?;

    let weights_path = dir.join(WEIGHTS_FILE);
    let blob = fs::read(&weights_path).map_err(|e| Error::io(&weights_path, e))?;

    let params = Param::all();
    if manifest.tensors.len() != params.len() {
        return Err(fail(format!(
            "manifest lists {} tensors, expected {}",
            manifest.tensors.len(),
            params.len()
        )));
    }

    let mut expected_offset = 0usize;
    let mut tensors = Vec::with_capacity(params.len());
    for (rec, p) in manifest.tensors.iter().zip(params) {
        let name = p.name();
        if rec.name != name {
            return Err(fail(format!("expected tensor {name}, found {}", rec.name)));
        }
        if rec.dtype != "f32" {
            return Err(fail(format!("tensor {name}: unsupported dtype {:?}", rec.dtype)));
        }
        let want_shape = spec.shape_of(p);
        if rec.shape != want_shape {
            return Err(fail(format!(
                "tensor {name}: shape {:?} does not match network_param (expected {want_shape:?})",
                rec.shape
            )));
        }
        let n: usize = want_shape.iter().product();
        if rec.len_elems != n {
            return Err(fail(format!(
                "tensor {name}: len_elems {} disagrees with shape ({n})",
                rec.len_elems
            )));
        }
        if rec.offset_bytes != expected_offset {
            return Err(fail(format!(
                "tensor {name}: offset_bytes {} (expected {expected_offset})",
                rec.offset_bytes
            )));
        }
        let end = expected_offset + 4 * n;
        let Some(bytes) = blob.get(expected_offset..end) else {
            return Err(fail(format!(
                "tensor {name}: {WEIGHTS_FILE} ends at byte {} but the tensor needs bytes {expected_offset}..{end}",
                blob.len()
            )));
        };
        let data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        tensors.push(Tensor::new(want_shape, data).map_err(|e| fail(e.to_string()))?);
        expected_offset = end;
    }
    if blob.len() != expected_offset {
        return Err(fail(format!(
            "{WEIGHTS_FILE} has {} trailing bytes after the last tensor",
            blob.len() - expected_offset
        )));
    }
    ModelWeights::new(spec, tensors)
}
