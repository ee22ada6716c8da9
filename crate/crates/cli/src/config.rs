//! The JSON run configuration. Every field has a default, unknown keys are
//! rejected, and the fully resolved document (defaults materialized,
//! overrides applied) is echoed to `<out>/config.resolved.json` so a run is
//! reproducible from that one file plus the seed inside it.

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use spm_core::augment::SpmParams;
use spm_core::model::ModelConfig;
use spm_core::reweight::WarmupPolicy;
use spm_core::trainer::{AdaptConfig, ExperimentConfig, SourceConfig};
use std::path::{Path, PathBuf};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    /// Load source training data from this dataset directory instead of
    /// generating it.
    pub source_data: Option<String>,
    /// Load target training data from this dataset directory instead of
    /// generating it.
    pub target_data: Option<String>,
    /// Checkpoint consumed by `adapt`/`eval` (defaults to the checkpoint
    /// `train-source` writes under `out`).
    pub checkpoint: Option<String>,
    /// Output directory for checkpoints, metrics, and the resolved config.
    pub out: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub paths: Paths,
    pub model: ModelConfig,
    pub source: SourceConfig,
    pub adapt: AdaptConfig,
    pub spm: SpmParams,
    pub warmup: WarmupPolicy,
    pub experiment: ExperimentConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            paths: Paths { out: "out".into(), ..Paths::default() },
            model: ModelConfig::default(),
            source: SourceConfig::default(),
            adapt: AdaptConfig::default(),
            spm: SpmParams::default(),
            warmup: WarmupPolicy::default(),
            experiment: ExperimentConfig::default(),
        }
    }
}

impl RunConfig {
    /// Parse a config file, apply `key=value` overrides, and materialize
    /// derived fields (the adaptation seed follows the run seed).
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut value = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .with_context(|| format!("reading config {}", p.display()))?;
                serde_json::from_str::<serde_json::Value>(&text)
                    .with_context(|| format!("parsing config {}", p.display()))?
            }
            None => serde_json::json!({}),
        };
        for item in overrides {
            apply_override(&mut value, item)?;
        }
        let mut cfg: RunConfig = serde_json::from_value(value).context("validating config")?;
        cfg.adapt.seed = cfg.seed;
        Ok(cfg)
    }

    pub fn out_dir(&self) -> PathBuf {
        PathBuf::from(&self.paths.out)
    }

    /// Write the fully resolved config next to the run's outputs.
    pub fn echo_resolved(&self) -> Result<PathBuf> {
        let out = self.out_dir();
        std::fs::create_dir_all(&out)?;
        let path = out.join("config.resolved.json");
        std::fs::write(&path, serde_json::to_string_pretty(self)?)?;
        Ok(path)
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        match &self.paths.checkpoint {
            Some(p) => PathBuf::from(p),
            None => self.out_dir().join("source.ckpt"),
        }
    }
}

// `--override adapt.epochs=0` navigates dotted paths from the root;
// a bare key (`epochs=0`) is resolved against the top-level sections when
// unambiguous.
fn apply_override(root: &mut serde_json::Value, item: &str) -> Result<()> {
    let Some((key, raw)) = item.split_once('=') else {
        bail!("override `{item}` is not of the form key=value");
    };
    let parsed: serde_json::Value = match serde_json::from_str(raw) {
        Ok(v) => v,
        Err(_) => serde_json::Value::String(raw.to_string()),
    };

    let segments: Vec<&str> = key.split('.').collect();
    let defaults = serde_json::to_value(RunConfig::default()).expect("default config is json");

    // candidate paths: the key exactly as given wins; otherwise a bare key
    // may name a field one level under a section when unambiguous
    let mut candidates: Vec<Vec<String>> = Vec::new();
    if lookup(&defaults, &segments).is_some() {
        candidates.push(segments.iter().map(|s| s.to_string()).collect());
    } else if segments.len() == 1 {
        if let Some(sections) = defaults.as_object() {
            for (section, body) in sections {
                if body.get(segments[0]).is_some() {
                    candidates.push(vec![section.clone(), segments[0].to_string()]);
                }
            }
        }
    }
    match candidates.len() {
        0 => bail!("override key `{key}` does not name a config field"),
        1 => {}
        _ => bail!(
            "override key `{key}` is ambiguous; use a dotted path like `{}`",
            candidates
                .iter()
                .map(|c| c.join("."))
                .collect::<Vec<_>>()
                .join("` or `")
        ),
    }

    let mut node = root;
    let path = &candidates[0];
    for seg in &path[..path.len() - 1] {
        if !node.is_object() {
            bail!("override key `{key}` crosses a non-object");
        }
        node = node
            .as_object_mut()
            .unwrap()
            .entry(seg.clone())
            .or_insert_with(|| serde_json::json!({}));
    }
    if !node.is_object() {
        bail!("override key `{key}` crosses a non-object");
    }
    node.as_object_mut()
        .unwrap()
        .insert(path.last().unwrap().clone(), parsed);
    Ok(())
}

fn lookup<'v>(mut node: &'v serde_json::Value, segments: &[&str]) -> Option<&'v serde_json::Value> {
    for seg in segments {
        node = node.get(seg)?;
    }
    Some(node)
}
