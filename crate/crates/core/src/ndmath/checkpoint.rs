//! Network checkpoints: `<name>.json` manifest plus `<name>.bin`, the
//! parameters as little-endian `f32`, layer by layer, weights (row-major)
//! then biases.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::net::{Activation, FeedForwardNet};
use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "dynae-net v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointManifest {
    pub format: String,
    pub layer_dims: Vec<usize>,
    /// One entry per layer; the last is always `identity`.
    pub activations: Vec<Activation>,
    pub seed: u64,
    pub param_count: usize,
    pub params_file: String,
}

fn paths(dir: &Path, name: &str) -> (PathBuf, PathBuf) {
    (dir.join(format!("{name}.json")), dir.join(format!("{name}.bin")))
}

pub fn encode_params(params: &[f64]) -> Vec<u8> {
    params.iter().flat_map(|&v| (v as f32).to_le_bytes()).collect()
}

pub fn save_checkpoint(net: &FeedForwardNet, dir: &Path, name: &str) -> Result<CheckpointManifest> {
    fs::create_dir_all(dir)?;
    let (json, bin) = paths(dir, name);
    let manifest = CheckpointManifest {
        format: CHECKPOINT_FORMAT.to_string(),
        layer_dims: net.dims().to_vec(),
        activations: (0..net.num_layers()).map(|l| net.activation(l)).collect(),
        seed: net.seed(),
        param_count: net.num_params(),
        params_file: format!("{name}.bin"),
    };
    fs::write(&bin, encode_params(net.params()))?;
    fs::write(&json, serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(manifest)
}

pub fn load_checkpoint(dir: &Path, name: &str) -> Result<FeedForwardNet> {
    let (json, _) = paths(dir, name);
    let manifest: CheckpointManifest = serde_json::from_str(&fs::read_to_string(&json)?)?;
    let bad = |reason: String| Error::Format {
        path: json.clone(),
        reason,
    };
    if manifest.format != CHECKPOINT_FORMAT {
        return Err(bad(format!("unsupported format {:?}", manifest.format)));
    }
    let n_layers = manifest.layer_dims.len().saturating_sub(1);
    if manifest.activations.len() != n_layers || n_layers == 0 {
        return Err(bad("activation list does not match layer dims".into()));
    }
    if manifest.activations[n_layers - 1] != Activation::Identity {
        return Err(bad("last layer must be identity".into()));
    }
    let hidden = if n_layers > 1 {
        let h = manifest.activations[0];
        if manifest.activations[..n_layers - 1].iter().any(|&a| a != h) {
            return Err(bad("mixed hidden activations are not supported".into()));
        }
        h
    } else {
        Activation::Identity
    };
    let bin_path = dir.join(&manifest.params_file);
    let bytes = fs::read(&bin_path)?;
    if bytes.len() != manifest.param_count * 4 {
        return Err(Error::Format {
            path: bin_path,
            reason: format!("expected {} bytes, found {}", manifest.param_count * 4, bytes.len()),
        });
    }
    let params = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    FeedForwardNet::from_params(&manifest.layer_dims, hidden, params, manifest.seed)
}
