//! Checkpoints: a JSON manifest next to a raw parameter blob.
//!
//! The blob holds every tensor in manifest order as little-endian `f32`.
//! Loading therefore rounds parameters to single precision.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{AdamConfig, NetShape, SegNetwork, TENSOR_NAMES};
use crate::error::{Result, SfsError};

pub const CHECKPOINT_FORMAT: &str = "sfs-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointManifest {
    pub format: String,
    pub version: u32,
    pub network: NetShape,
    pub layers: Vec<LayerEntry>,
    pub optimizer: AdamConfig,
    pub step: u64,
    /// File name of the parameter blob, relative to the manifest.
    pub blob: String,
    pub config_hash: String,
    pub seeds: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub net: SegNetwork,
    pub manifest: CheckpointManifest,
}

fn blob_path(manifest_path: &Path) -> PathBuf {
    manifest_path.with_extension("bin")
}

/// Write `<stem>.json` and `<stem>.bin`. `manifest_path` should end in `.json`.
pub fn save_checkpoint(
    manifest_path: &Path,
    net: &SegNetwork,
    optimizer: &AdamConfig,
    step: u64,
    config_hash: &str,
    seeds: &[u64],
) -> Result<CheckpointManifest> {
    let blob = blob_path(manifest_path);
    let shape = net.shape();
    let manifest = CheckpointManifest {
        format: CHECKPOINT_FORMAT.into(),
        version: CHECKPOINT_VERSION,
        network: shape,
        layers: TENSOR_NAMES
            .iter()
            .zip(shape.tensor_shapes())
            .map(|(name, shape)| LayerEntry {
                name: name.to_string(),
                shape,
            })
            .collect(),
        optimizer: *optimizer,
        step,
        blob: blob
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default(),
        config_hash: config_hash.into(),
        seeds: seeds.to_vec(),
    };
    let mut bytes = Vec::with_capacity(net.parameter_count() * 4);
    for v in net.tensors().iter().flatten() {
        bytes.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    if let Some(dir) = manifest_path.parent() {
        fs::create_dir_all(dir).map_err(|e| SfsError::io(dir, e))?;
    }
    fs::write(&blob, bytes).map_err(|e| SfsError::io(&blob, e))?;
    let json = serde_json::to_string_pretty(&manifest)?;
    fs::write(manifest_path, json).map_err(|e| SfsError::io(manifest_path, e))?;
    Ok(manifest)
}

pub fn load_checkpoint(manifest_path: &Path) -> Result<Checkpoint> {
    let text = fs::read_to_string(manifest_path).map_err(|e| SfsError::io(manifest_path, e))?;
    let manifest: CheckpointManifest = serde_json::from_str(&text)?;
    let bad = |reason: String| SfsError::Format {
        path: manifest_path.to_path_buf(),
        reason,
    };
    if manifest.format != CHECKPOINT_FORMAT || manifest.version != CHECKPOINT_VERSION {
        return Err(bad(format!(
            "unsupported checkpoint {} v{}",
            manifest.format, manifest.version
        )));
    }
    let expected = manifest.network.tensor_shapes();
    if manifest.layers.len() != expected.len()
        || manifest
            .layers
            .iter()
            .zip(&expected)
            .zip(TENSOR_NAMES)
            .any(|((l, s), n)| &l.shape != s || l.name != n)
    {
        return Err(bad("layer table does not match network shape".into()));
    }
    let blob = manifest_path
        .parent()
        .unwrap_or_else(|| Path::new("."))
        .join(&manifest.blob);
    let bytes = fs::read(&blob).map_err(|e| SfsError::io(&blob, e))?;
    let total: usize = expected.iter().map(|s| s.iter().product::<usize>()).sum();
    if bytes.len() != total * 4 {
        return Err(bad(format!(
            "blob has {} bytes, expected {}",
            bytes.len(),
            total * 4
        )));
    }
    let mut values = bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64);
    let tensors = expected
        .iter()
        .map(|s| values.by_ref().take(s.iter().product()).collect())
        .collect();
    let net = SegNetwork::from_tensors(manifest.network, tensors)?;
    Ok(Checkpoint { net, manifest })
}
