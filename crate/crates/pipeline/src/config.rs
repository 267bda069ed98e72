use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use rccdbg_core::lrp::{LrpConfig, SeedMode};
use rccdbg_core::netcore::{LayerSpec, SgdConfig, Task};
use rccdbg_core::seed;
use rccdbg_core::synthgen::DatasetSpec;
use serde::{Deserialize, Serialize};

/// Training hyperparameters. The shuffle seed is derived from the pipeline
/// seed so that one number controls every random stream.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Hyper {
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
}

impl Hyper {
    pub fn sgd(&self, seed: u64) -> SgdConfig {
        SgdConfig {
            lr: self.lr,
            epochs: self.epochs,
            batch_size: self.batch_size,
            seed,
        }
    }
}

/// Synthetic workspace produced by `gen`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenConfig {
    pub size: usize,
    pub training: usize,
    pub test: usize,
    pub improvement: usize,
    pub angle_range: (f64, f64),
    pub class_boundaries: Vec<f64>,
    pub center_jitter: f64,
    pub noise_range: (f64, f64),
    pub scale_range: (f64, f64),
    pub hard_band: (f64, f64),
    /// Acceptance probability of hard-band angles in the training set only.
    /// Below 1 the trained model sees few borderline cases and errs there.
    pub training_band_weight: f64,
}

impl Default for GenConfig {
    fn default() -> Self {
        let scene = DatasetSpec::default();
        Self {
            size: scene.size,
            training: 1000,
            test: 600,
            improvement: 400,
            angle_range: scene.angle_range,
            class_boundaries: scene.class_boundaries,
            center_jitter: scene.center_jitter,
            noise_range: (0.1, 0.3),
            scale_range: scene.scale_range,
            hard_band: scene.hard_band,
            training_band_weight: 0.05,
        }
    }
}

impl GenConfig {
    pub fn spec(&self, count: usize, id_prefix: &str, band_weight: f64) -> DatasetSpec {
        DatasetSpec {
            size: self.size,
            count,
            id_prefix: id_prefix.into(),
            angle_range: self.angle_range,
            class_boundaries: self.class_boundaries.clone(),
            center_jitter: self.center_jitter,
            noise_range: self.noise_range,
            scale_range: self.scale_range,
            hard_band: self.hard_band,
            band_weight,
        }
    }
}

/// Small convnet for `size x size` single-channel inputs.
pub fn default_architecture(size: usize, classes: usize) -> Vec<LayerSpec> {
    let after_pool = (size - 2) / 2;
    let spatial = after_pool - 2;
    vec![
        LayerSpec::Conv2d { in_channels: 1, out_channels: 4, kernel: 3, stride: 1 },
        LayerSpec::Relu,
        LayerSpec::MaxPool2d { kernel: 2, stride: 2 },
        LayerSpec::Conv2d { in_channels: 4, out_channels: 8, kernel: 3, stride: 1 },
        LayerSpec::Relu,
        LayerSpec::Flatten,
        LayerSpec::Dense { inputs: 8 * spatial * spatial, outputs: 16 },
        LayerSpec::Relu,
        LayerSpec::Dense { inputs: 16, outputs: classes },
    ]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Model under analysis: a directory name under `DNNModels`.
    pub model: String,
    /// Top-level seed. Every random stream is derived from it by tag.
    pub seed: u64,
    /// Task and architecture used by `train` for a fresh model. Later steps
    /// read both from the saved model.
    pub task: Task,
    pub architecture: Vec<LayerSpec>,
    pub lrp: LrpConfig,
    pub k_min: usize,
    /// Upper end of the cluster-count sweep, clipped to `n - 1`.
    pub k_max: usize,
    pub sensitivity: f64,
    pub images_per_cluster: usize,
    /// Write a thumbnail grid per cluster next to the member images.
    pub montage: bool,
    pub train: Hyper,
    pub retrain: Hyper,
    pub gen: GenConfig,
    /// Static review UI assets, relative to the workspace root.
    pub ui_dir: PathBuf,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let gen = GenConfig::default();
        let classes = gen.class_boundaries.len() + 1;
        Self {
            model: "model".into(),
            seed: 0,
            task: Task::Classification { num_classes: classes },
            architecture: default_architecture(gen.size, classes),
            lrp: LrpConfig::default(),
            k_min: 2,
            k_max: 100,
            sensitivity: 1.0,
            images_per_cluster: 5,
            montage: true,
            train: Hyper { lr: 0.05, epochs: 8, batch_size: 16 },
            retrain: Hyper { lr: 0.02, epochs: 30, batch_size: 16 },
            gen,
            ui_dir: PathBuf::from("ui"),
        }
    }
}

impl PipelineConfig {
    /// Reads a JSON config (missing fields take their defaults) or returns the
    /// defaults when no file is given. `seed` overrides the file.
    pub fn load(path: Option<&Path>, seed: Option<u64>) -> Result<Self> {
        let mut cfg = match path {
            Some(p) => {
                let text = fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
                serde_json::from_str(&text).with_context(|| format!("parsing config {}", p.display()))?
            }
            None => Self::default(),
        };
        if let Some(s) = seed {
            cfg.seed = s;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.model.is_empty() || self.model.contains(['/', '\\']) || self.model.starts_with('.') {
            bail!("model name {:?} must be a plain directory name", self.model);
        }
        if self.k_min < 2 || self.k_max <= self.k_min {
            bail!("cluster range needs 2 <= k_min < k_max, got {}..{}", self.k_min, self.k_max);
        }
        if !(self.sensitivity.is_finite() && self.sensitivity > 0.0) {
            bail!("sensitivity must be positive, got {}", self.sensitivity);
        }
        if self.images_per_cluster == 0 {
            bail!("images_per_cluster must be at least 1");
        }
        self.lrp.validate()?;
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes") + "\n"
    }

    pub fn stream_seed(&self, tag: &str) -> u64 {
        seed::derive(self.seed, tag)
    }

    /// Improvement images carry no labels, so relevance can only be seeded
    /// on what the model predicts.
    pub fn require_predicted_seed(&self) -> Result<()> {
        if self.lrp.seed_mode != SeedMode::PredictedClass {
            bail!("heatmaps of unlabeled improvement images need lrp.seed_mode = predicted_class");
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_json() {
        let cfg = PipelineConfig::default();
        let back: PipelineConfig = serde_json::from_str(&cfg.to_json()).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn partial_files_fill_defaults() {
        let cfg: PipelineConfig = serde_json::from_str(r#"{"seed": 9, "k_max": 20}"#).unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.k_max, 20);
        assert_eq!(cfg.images_per_cluster, 5);
        assert!(serde_json::from_str::<PipelineConfig>(r#"{"sead": 1}"#).is_err());
    }

    #[test]
    fn invalid_ranges_are_rejected() {
        let cfg = PipelineConfig { k_min: 1, ..Default::default() };
        assert!(cfg.validate().is_err());
        let cfg = PipelineConfig { model: "../x".into(), ..Default::default() };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn default_architecture_fits_the_image_size() {
        let cfg = PipelineConfig::default();
        let model = rccdbg_core::NetworkModel::init(vec![1, cfg.gen.size, cfg.gen.size], cfg.architecture, cfg.task, 0);
        assert!(model.is_ok());
    }
}
