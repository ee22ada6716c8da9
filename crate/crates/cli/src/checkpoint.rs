//! Checkpoints: a named-tensor binary container (`<path>`, row-major
//! little-endian f32 payloads back to back) described by a JSON manifest
//! (`<path>.json` holding the model config and each tensor's name, shape,
//! and byte span). Feature-bank snapshots use the flat binary layout
//! defined in `spm_core::pseudolabel`.

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use spm_core::model::{ModelConfig, ParamSet};
use spm_core::pseudolabel::FeatureBank;
use std::path::Path;

#[derive(Serialize, Deserialize)]
struct CheckpointManifest {
    model: ModelConfig,
    tensors: Vec<TensorEntry>,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    byte_offset: usize,
    byte_len: usize,
}

pub fn save_checkpoint(params: &ParamSet<f32>, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let mut payload: Vec<u8> = Vec::new();
    let mut tensors = Vec::new();
    for t in params.tensors() {
        let byte_offset = payload.len();
        for &v in &t.data {
            payload.extend_from_slice(&v.to_le_bytes());
        }
        tensors.push(TensorEntry {
            name: t.name.to_string(),
            shape: t.shape.clone(),
            byte_offset,
            byte_len: payload.len() - byte_offset,
        });
    }
    std::fs::write(path, payload).with_context(|| format!("writing {}", path.display()))?;
    let manifest = CheckpointManifest { model: params.config().clone(), tensors };
    std::fs::write(manifest_path(path), serde_json::to_string_pretty(&manifest)?)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<ParamSet<f32>> {
    let manifest_text = std::fs::read_to_string(manifest_path(path))
        .with_context(|| format!("reading {}", manifest_path(path).display()))?;
    let manifest: CheckpointManifest = serde_json::from_str(&manifest_text)?;
    let payload = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;

    let mut raw = Vec::with_capacity(manifest.tensors.len());
    for entry in manifest.tensors {
        let end = entry.byte_offset + entry.byte_len;
        if end > payload.len() || entry.byte_len % 4 != 0 {
            bail!("checkpoint payload out of bounds for tensor `{}`", entry.name);
        }
        let data: Vec<f32> = payload[entry.byte_offset..end]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("chunk of 4")))
            .collect();
        raw.push((entry.name, entry.shape, data));
    }
    ParamSet::from_raw(manifest.model, raw).map_err(|e| anyhow::anyhow!("{e}"))
}

fn manifest_path(path: &Path) -> std::path::PathBuf {
    let mut os = path.as_os_str().to_owned();
    os.push(".json");
    os.into()
}

pub fn save_bank(bank: &FeatureBank, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(path, bank.to_bytes()).with_context(|| format!("writing {}", path.display()))
}

pub fn load_bank(path: &Path) -> Result<FeatureBank> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    FeatureBank::from_bytes(&bytes).map_err(|e| anyhow::anyhow!("{e}"))
}
