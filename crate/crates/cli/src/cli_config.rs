//! Config-file handling: the file mirrors the training config at the top
//! level, with an optional `[paths]` table for inputs and the output
//! directory. Flags override file values, file values override defaults, and
//! every command echoes its resolved config next to its outputs.

use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::{Deserialize, Serialize};
use sskd_core::{Error, TrainConfig};

use crate::TrainOverrides;

#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    pub features: Option<PathBuf>,
    pub teacher: Option<PathBuf>,
    pub train_labels: Option<PathBuf>,
    pub test_labels: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
}

impl Paths {
    fn is_empty(&self) -> bool {
        *self == Paths::default()
    }
}

#[derive(Debug, Clone, Default)]
pub struct CliConfig {
    pub train: TrainConfig,
    pub paths: Paths,
}

/// Parse a config file: all training keys at the top level plus an optional
/// `[paths]` table, as TOML or JSON. Unknown keys are rejected by both parts.
pub fn load_config(path: &Path) -> anyhow::Result<CliConfig> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading config {}", path.display()))?;
    let bad = |e: String| Error::InvalidArgument(format!("{}: {e}", path.display()));
    let (train, paths) = if text.trim_start().starts_with('{') {
        let mut value: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| bad(e.to_string()))?;
        let paths = match value.as_object_mut().and_then(|o| o.remove("paths")) {
            Some(p) => serde_json::from_value(p).map_err(|e| bad(format!("[paths]: {e}")))?,
            None => Paths::default(),
        };
        let train: TrainConfig =
            serde_json::from_value(value).map_err(|e| bad(e.to_string()))?;
        (train, paths)
    } else {
        let mut value: toml::Value =
            toml::from_str(&text).map_err(|e: toml::de::Error| bad(e.to_string()))?;
        let paths = match value.as_table_mut().and_then(|t| t.remove("paths")) {
            Some(p) => p.try_into().map_err(|e: toml::de::Error| bad(format!("[paths]: {e}")))?,
            None => Paths::default(),
        };
        let train: TrainConfig = value.try_into().map_err(|e: toml::de::Error| bad(e.to_string()))?;
        (train, paths)
    };
    train.validate()?;
    Ok(CliConfig { train, paths })
}

/// Defaults, then the optional config file, then command-line flags.
pub fn resolve(overrides: &TrainOverrides) -> anyhow::Result<CliConfig> {
    let mut cfg = match &overrides.config {
        Some(path) => load_config(path)?,
        None => CliConfig::default(),
    };
    let train = &mut cfg.train;
    if let Some(loss) = &overrides.loss {
        train.loss = loss.parse::<sskd_core::LossKind>()?;
    }
    if let Some(v) = overrides.epochs {
        train.epochs = v;
    }
    if let Some(v) = overrides.batch_size {
        train.batch_size = v;
    }
    if let Some(v) = overrides.base_lr {
        train.base_lr = v;
    }
    if let Some(v) = overrides.epoch_sample_size {
        train.epoch_sample_size = v;
    }
    if let Some(v) = overrides.k_clusters {
        train.k_clusters = v;
    }
    if overrides.no_bds {
        train.bds_enabled = false;
    }
    if let Some(v) = overrides.seed {
        train.seed = v;
    }
    if let Some(dims) = &overrides.student_dims {
        train.student_dims = dims.clone();
    }
    if let Some(v) = overrides.head_hidden_dim {
        train.head_hidden_dim = v;
    }
    train.validate()?;
    Ok(cfg)
}

/// Write the resolved config (with any paths) next to the command's outputs.
pub fn echo_config(cfg: &CliConfig, dir: &Path) -> anyhow::Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut text = cfg.train.to_toml()?;
    if !cfg.paths.is_empty() {
        let paths = toml::to_string(&toml::Value::try_from(&cfg.paths).map_err(|e| {
            Error::InvalidArgument(format!("paths serialization: {e}"))
        })?)
        .map_err(|e| Error::InvalidArgument(format!("paths serialization: {e}")))?;
        text.push_str("\n[paths]\n");
        text.push_str(&paths);
    }
    std::fs::write(dir.join("resolved_config.toml"), text)?;
    Ok(())
}
