//! Strict JSON run configurations. Unknown keys are rejected so a typo in a
//! hyperparameter name fails loudly instead of silently training defaults.

use hope_core::head::HopeConfig;
use hope_core::synth::{DatasetSpec, SyntheticDataset};
use hope_core::train::{AdamConfig, HeadKind, SweepParam, Variant};
use hope_core::{HopeError, Real};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

fn default_layers() -> usize {
    2
}
fn default_delta() -> f64 {
    0.6
}
fn default_k_frac() -> f64 {
    0.5
}
fn default_c_frac() -> f64 {
    3.0
}
fn default_lambda() -> f64 {
    0.5
}
fn default_tau_init() -> f64 {
    1.0
}
fn default_ln_eps() -> f64 {
    1e-5
}
fn default_cos_eps() -> f64 {
    1e-12
}
fn default_epochs() -> usize {
    300
}
fn default_train_frac() -> f64 {
    0.6
}
fn default_val_frac() -> f64 {
    0.2
}
fn default_seeds() -> Vec<u64> {
    (1..=10).collect()
}
fn default_head_kind() -> HeadKind {
    HeadKind::Hope
}
fn default_variant() -> Variant {
    Variant::Full
}

/// Head hyperparameters without the dataset-derived dimensions.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeadSettings {
    #[serde(default = "default_layers")]
    pub layers: usize,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default = "default_k_frac")]
    pub k_frac: f64,
    #[serde(default = "default_c_frac")]
    pub c_frac: f64,
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    #[serde(default = "default_tau_init")]
    pub tau_init: f64,
    #[serde(default = "default_ln_eps")]
    pub ln_eps: f64,
    #[serde(default = "default_cos_eps")]
    pub cos_eps: f64,
}

impl Default for HeadSettings {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields defaulted")
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Path to an HGSB dataset file. Exactly one of `dataset` /
    /// `dataset_spec` must be present.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset: Option<PathBuf>,
    /// Inline dataset spec, generated on the fly.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset_spec: Option<DatasetSpec>,
    #[serde(default = "default_head_kind")]
    pub head_kind: HeadKind,
    #[serde(default = "default_variant")]
    pub variant: Variant,
    #[serde(default)]
    pub head: HeadSettings,
    #[serde(default)]
    pub optim: AdamConfig,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_train_frac")]
    pub train_frac: f64,
    #[serde(default = "default_val_frac")]
    pub val_frac: f64,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, HopeError> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| HopeError::Config(format!("{}: {e}", path.display())))
    }

    /// Load the dataset file or generate from the inline spec.
    pub fn dataset<T: Real>(&self, config_dir: &Path) -> Result<SyntheticDataset<T>, HopeError> {
        match (&self.dataset, &self.dataset_spec) {
            (Some(path), None) => {
                let resolved = if path.is_absolute() {
                    path.clone()
                } else {
                    config_dir.join(path)
                };
                let file = std::fs::File::open(&resolved).map_err(|e| {
                    HopeError::Config(format!("missing dataset {}: {e}", resolved.display()))
                })?;
                hope_core::io::read_dataset(&mut std::io::BufReader::new(file))
            }
            (None, Some(spec)) => hope_core::synth::generate(spec),
            (None, None) => Err(HopeError::Config(
                "config needs either `dataset` or `dataset_spec`".into(),
            )),
            (Some(_), Some(_)) => Err(HopeError::Config(
                "config must set only one of `dataset` / `dataset_spec`".into(),
            )),
        }
    }

    /// Combine the head settings with dataset-derived dimensions.
    pub fn head_config(&self, spec: &DatasetSpec, seed: u64) -> HopeConfig {
        HopeConfig {
            meta_paths: spec.views,
            dim: spec.dim,
            out_dim: spec.num_classes,
            layers: self.head.layers,
            delta: self.head.delta,
            k_frac: self.head.k_frac,
            c_frac: self.head.c_frac,
            lambda: self.head.lambda,
            tau_init: self.head.tau_init,
            ln_eps: self.head.ln_eps,
            cos_eps: self.head.cos_eps,
            seed,
        }
    }

    pub fn train_settings(&self) -> hope_core::train::TrainSettings {
        hope_core::train::TrainSettings {
            epochs: self.epochs,
            optim: self.optim.clone(),
            train_frac: self.train_frac,
            val_frac: self.val_frac,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub param: SweepParam,
    pub values: Vec<f64>,
    pub run: RunConfig,
}

impl SweepConfig {
    pub fn load(path: &Path) -> Result<Self, HopeError> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| HopeError::Config(format!("{}: {e}", path.display())))
    }
}
