//! Dataset directories: `<root>/<domain>/<class_name>/<index>.png` plus a
//! `manifest.json` at the root recording filenames, labels, the domain
//! spec, and the generation seed. Loading trusts the manifest; stray PNGs
//! on disk are ignored with a warning.

use crate::pngio::{read_png, write_png};
use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use spm_core::data::{DomainSpec, LabeledDataset, CLASS_NAMES};
use std::collections::BTreeSet;
use std::path::Path;

#[derive(Serialize, Deserialize)]
struct Manifest {
    domain: DomainSpec,
    seed: u64,
    entries: Vec<ManifestEntry>,
}

#[derive(Serialize, Deserialize)]
struct ManifestEntry {
    file: String,
    label: usize,
}

pub fn class_name(label: usize) -> &'static str {
    CLASS_NAMES.get(label).copied().unwrap_or("unknown")
}

pub fn save_dataset(dataset: &LabeledDataset, root: &Path) -> Result<()> {
    let mut entries = Vec::with_capacity(dataset.len());
    for (i, (img, &label)) in dataset.images.iter().zip(&dataset.labels).enumerate() {
        let rel = format!("{}/{}/{}.png", dataset.domain.name, class_name(label), i);
        let path = root.join(&rel);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        write_png(img, &path)?;
        entries.push(ManifestEntry { file: rel, label });
    }
    let manifest = Manifest { domain: dataset.domain.clone(), seed: dataset.seed, entries };
    let json = serde_json::to_string_pretty(&manifest)?;
    std::fs::write(root.join("manifest.json"), json)?;
    Ok(())
}

pub fn load_dataset(root: &Path) -> Result<LabeledDataset> {
    let manifest_path = root.join("manifest.json");
    let text = std::fs::read_to_string(&manifest_path)
        .with_context(|| format!("reading {}", manifest_path.display()))?;
    let manifest: Manifest =
        serde_json::from_str(&text).with_context(|| "parsing manifest.json")?;

    let mut images = Vec::with_capacity(manifest.entries.len());
    let mut labels = Vec::with_capacity(manifest.entries.len());
    let mut listed = BTreeSet::new();
    for entry in &manifest.entries {
        let path = root.join(&entry.file);
        images.push(read_png(&path)?);
        labels.push(entry.label);
        listed.insert(path);
    }

    // stray images are not an error, just noise worth flagging
    for found in walk_pngs(root)? {
        if !listed.contains(&found) {
            eprintln!(
                "warning: {} is not in the manifest and was ignored",
                found.display()
            );
        }
    }

    if images.is_empty() {
        bail!("manifest at {} lists no images", manifest_path.display());
    }
    Ok(LabeledDataset { images, labels, domain: manifest.domain, seed: manifest.seed })
}

fn walk_pngs(root: &Path) -> Result<Vec<std::path::PathBuf>> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir)? {
            let path = entry?.path();
            if path.is_dir() {
                stack.push(path);
            } else if path.extension().is_some_and(|e| e == "png") {
                out.push(path);
            }
        }
    }
    out.sort();
    Ok(out)
}
