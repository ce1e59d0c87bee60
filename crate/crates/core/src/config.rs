//! Run configuration. Every hyperparameter and every recorded default lives
//! here and is serialized verbatim into checkpoints and output directories,
//! so a run can be reproduced from its artifacts alone.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::features::FeatureConfig;
use crate::losses::{ClapVariant, LossKind};
use crate::nn::{Activation, ScheduleShape};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WeightInit {
    KaimingUniform,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Linear-probe training settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProbeConfig {
    pub max_epochs: usize,
    pub lr: f64,
    /// L2 penalty on probe weights (not biases).
    pub l2: f64,
    /// Stop when the full-batch train loss changes by less than this.
    pub plateau_tol: f64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            max_epochs: 500,
            lr: 0.05,
            l2: 1e-4,
            plateau_tol: 1e-6,
        }
    }
}

/// Full training recipe plus all recorded defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub base_lr: f64,
    /// Clips sampled per epoch, clamped to the dataset size.
    pub epoch_sample_size: usize,
    pub k_clusters: usize,
    pub loss: LossKind,
    pub bds_enabled: bool,
    pub seed: u64,
    /// Student widths as `[input, hidden..., d_s]`.
    pub student_dims: Vec<usize>,
    /// Mapping-head hidden width; the head is `[d_s, head_hidden_dim, d_t]`.
    pub head_hidden_dim: usize,
    pub activation: Activation,
    pub schedule: ScheduleShape,
    pub warmup_frac: f64,
    pub weight_init: WeightInit,
    pub adam: AdamConfig,
    /// Offset in the inverse-frequency sampling weight.
    pub bds_offset: f64,
    /// L2-normalize teacher embeddings before clustering.
    pub bds_normalize: bool,
    pub kmeans_max_iter: usize,
    pub kmeans_tol: f64,
    pub clap_variant: ClapVariant,
    pub clap_temperature: f64,
    /// Export head-projected embeddings instead of raw student embeddings.
    pub export_projected: bool,
    pub features: FeatureConfig,
    pub probe: ProbeConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch_size: 64,
            base_lr: 8e-4,
            epoch_sample_size: 100_000,
            k_clusters: 50,
            loss: LossKind::Cosine,
            bds_enabled: true,
            seed: 0,
            student_dims: vec![128, 256, 128],
            head_hidden_dim: 1280,
            activation: Activation::Relu,
            schedule: ScheduleShape::WarmupCosine,
            warmup_frac: 0.1,
            weight_init: WeightInit::KaimingUniform,
            adam: AdamConfig::default(),
            bds_offset: 100.0,
            bds_normalize: false,
            kmeans_max_iter: 100,
            kmeans_tol: 1e-6,
            clap_variant: ClapVariant::default(),
            clap_temperature: 1.0,
            export_projected: false,
            features: FeatureConfig::default(),
            probe: ProbeConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::invalid_argument("batch_size must be positive"));
        }
        if self.epoch_sample_size == 0 {
            return Err(Error::invalid_argument("epoch_sample_size must be positive"));
        }
        if !(self.base_lr > 0.0) {
            return Err(Error::invalid_argument("base_lr must be positive"));
        }
        if self.student_dims.len() < 2 || self.student_dims.iter().any(|&d| d == 0) {
            return Err(Error::invalid_argument(
                "student_dims needs at least [input, output], all positive",
            ));
        }
        if self.head_hidden_dim == 0 {
            return Err(Error::invalid_argument("head_hidden_dim must be positive"));
        }
        if self.k_clusters == 0 {
            return Err(Error::invalid_argument("k_clusters must be positive"));
        }
        if !(0.0..1.0).contains(&self.warmup_frac) {
            return Err(Error::invalid_argument("warmup_frac must be in [0, 1)"));
        }
        if !(self.clap_temperature > 0.0) {
            return Err(Error::invalid_argument("clap_temperature must be positive"));
        }
        if !(self.bds_offset >= 0.0) {
            return Err(Error::invalid_argument("bds_offset must be non-negative"));
        }
        Ok(())
    }

    /// Student embedding dimension d_s.
    pub fn student_out_dim(&self) -> usize {
        *self.student_dims.last().unwrap()
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self)
            .map_err(|e| Error::invalid_argument(format!("config serialization: {e}")))
    }

    /// Parse TOML or JSON, detected by the leading `{`.
    pub fn from_str_any(text: &str) -> Result<Self> {
        let config: TrainConfig = if text.trim_start().starts_with('{') {
            serde_json::from_str(text)
                .map_err(|e| Error::invalid_argument(format!("config (json): {e}")))?
        } else {
            toml::from_str(text)
                .map_err(|e| Error::invalid_argument(format!("config (toml): {e}")))?
        };
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_str_any(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml()?)?;
        Ok(())
    }

    /// SHA-256 of the canonical TOML serialization.
    pub fn hash(&self) -> Result<String> {
        let bytes = self.to_toml()?;
        let digest = Sha256::digest(bytes.as_bytes());
        Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
    }
}
