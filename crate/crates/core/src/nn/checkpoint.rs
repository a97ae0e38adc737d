//! Parameter checkpoints: raw little-endian `f32` values plus a JSON
//! manifest with layer order, shapes and seed.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::network::{Network, NetworkSpec};
use super::Real;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorEntry {
    pub layer: usize,
    pub kind: String,
    pub name: String,
    pub shape: [usize; 4],
    /// Offset into the data file, in values.
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointManifest {
    pub dtype: String,
    pub seed: u64,
    pub spec: NetworkSpec,
    pub data_file: String,
    pub tensors: Vec<TensorEntry>,
}

const PARAM_NAMES: [[&str; 2]; 2] = [["weight", "bias"], ["gamma", "beta"]];

fn data_path(manifest: &Path) -> PathBuf {
    manifest.with_extension("bin")
}

/// Writes `<path>` (manifest) and `<path>` with a `.bin` extension (data).
pub fn save<T: Real>(net: &Network<T>, path: &Path) -> Result<CheckpointManifest> {
    let data_file = data_path(path);
    let mut tensors = Vec::new();
    let mut bytes = Vec::new();
    let mut offset = 0;
    for (k, layer) in net.layers.iter().enumerate() {
        let names = if layer.kind() == "conv3x3" {
            PARAM_NAMES[0]
        } else {
            PARAM_NAMES[1]
        };
        for (p, name) in layer.parameters().into_iter().zip(names) {
            tensors.push(TensorEntry {
                layer: k,
                kind: layer.kind().to_string(),
                name: name.to_string(),
                shape: p.shape(),
                offset,
            });
            offset += p.len();
            for v in &p.data {
                bytes.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
            }
        }
    }
    let manifest = CheckpointManifest {
        dtype: "f32le".into(),
        seed: net.seed,
        spec: net.spec,
        data_file: data_file
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default(),
        tensors,
    };
    fs::write(&data_file, bytes).map_err(|e| Error::io(&data_file, e))?;
    let json = serde_json::to_vec_pretty(&manifest).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })?;
    fs::write(path, json).map_err(|e| Error::io(path, e))?;
    Ok(manifest)
}

/// Rebuilds the network described by a manifest and fills in its values.
pub fn load<T: Real>(path: &Path) -> Result<Network<T>> {
    let text = fs::read(path).map_err(|e| Error::io(path, e))?;
    let manifest: CheckpointManifest = serde_json::from_slice(&text).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })?;
    let data_file = path.with_file_name(&manifest.data_file);
    let bytes = fs::read(&data_file).map_err(|e| Error::io(&data_file, e))?;
    let mut net = Network::<T>::new(manifest.spec, manifest.seed)?;
    let expected: Vec<[usize; 4]> = net.parameters().iter().map(|p| p.shape()).collect();
    let stored: Vec<[usize; 4]> = manifest.tensors.iter().map(|t| t.shape).collect();
    if expected != stored {
        return Err(Error::Format {
            path: path.to_path_buf(),
            offset: 0,
            message: "tensor list does not match the network spec".into(),
        });
    }
    for (p, entry) in net.parameters_mut().into_iter().zip(&manifest.tensors) {
        let start = entry.offset * 4;
        let end = start + p.len() * 4;
        let chunk = bytes.get(start..end).ok_or_else(|| Error::Format {
            path: data_file.clone(),
            offset: bytes.len() as u64,
            message: format!("data ends before tensor {} of layer {}", entry.name, entry.layer),
        })?;
        for (v, b) in p.data.iter_mut().zip(chunk.chunks_exact(4)) {
            *v = T::of(f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64);
        }
    }
    Ok(net)
}
