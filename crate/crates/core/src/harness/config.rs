use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::{ConstraintMode, LossWeights, TripletConfig};
use crate::numcore::Schedule;
use crate::promptcore::{default_bottleneck, DeltaVariant};
use crate::toyworld::{AugmentationType, DatasetConfig, EncoderConfig};

/// Full description of one run. Serialised as TOML with the sections
/// `[dataset]`, `[model]`, `[training]`, `[profiling]` and `[output]`;
/// every key is optional and falls back to its default.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetSection,
    pub model: ModelSection,
    pub training: TrainingSection,
    pub profiling: ProfilingSection,
    pub output: OutputSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSection {
    pub num_classes: usize,
    pub per_class_count: usize,
    pub image_size: usize,
    pub shots: usize,
    /// Master seed; every other random stream is derived from it.
    pub seed: u64,
}

impl Default for DatasetSection {
    fn default() -> Self {
        let d = DatasetConfig::default();
        Self {
            num_classes: d.num_classes,
            per_class_count: d.per_class_count,
            image_size: d.image_size,
            shots: d.shots,
            seed: d.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub feature_dim: usize,
    pub context_len: usize,
    pub text_hidden: usize,
    /// Metanet bottleneck ratio; 0 picks 16 for `feature_dim >= 32`, else 4.
    pub bottleneck_ratio: usize,
    pub temperature: f64,
    /// Extra factor on the fan-in init std of the metanet up-projection.
    pub metanet_up_scale: f64,
}

impl Default for ModelSection {
    fn default() -> Self {
        let e = EncoderConfig::default();
        Self {
            feature_dim: e.feature_dim,
            context_len: e.context_len,
            text_hidden: e.text_hidden,
            bottleneck_ratio: 0,
            temperature: e.temperature,
            metanet_up_scale: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingSection {
    pub epochs: usize,
    pub lr: f64,
    pub momentum: f64,
    pub schedule: Schedule,
    pub alpha: f64,
    pub beta: f64,
    pub margin: f64,
    pub constraint_mode: ConstraintMode,
    pub wrs_enabled: bool,
    pub delta_variant: DeltaVariant,
    /// Augmentation types episodes may draw; empty means all fourteen.
    /// Profiling always covers every type.
    pub augmentations: Vec<AugmentationType>,
}

impl Default for TrainingSection {
    fn default() -> Self {
        Self {
            epochs: 10,
            lr: 0.002,
            momentum: 0.9,
            schedule: Schedule::Cosine,
            alpha: 0.2,
            beta: 1.0,
            margin: 0.2,
            constraint_mode: ConstraintMode::Constraints4,
            wrs_enabled: false,
            delta_variant: DeltaVariant::SameImage,
            augmentations: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProfilingSection {
    /// Validation images profiled per augmentation type.
    pub samples: usize,
    /// Softmax temperature of the sampler weights.
    pub temperature: f64,
    pub standardize: bool,
}

impl Default for ProfilingSection {
    fn default() -> Self {
        Self {
            samples: 100,
            temperature: 1.0,
            standardize: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("runs/default"),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn seed(&self) -> u64 {
        self.dataset.seed
    }

    pub fn dataset_config(&self) -> DatasetConfig {
        DatasetConfig {
            num_classes: self.dataset.num_classes,
            per_class_count: self.dataset.per_class_count,
            image_size: self.dataset.image_size,
            shots: self.dataset.shots,
            seed: self.dataset.seed,
        }
    }

    pub fn encoder_config(&self) -> EncoderConfig {
        EncoderConfig {
            feature_dim: self.model.feature_dim,
            context_len: self.model.context_len,
            text_hidden: self.model.text_hidden,
            temperature: self.model.temperature,
            image_size: self.dataset.image_size,
            num_classes: self.dataset.num_classes,
        }
    }

    pub fn bottleneck_ratio(&self) -> usize {
        match self.model.bottleneck_ratio {
            0 => default_bottleneck(self.model.feature_dim),
            r => r,
        }
    }

    pub fn triplet_config(&self) -> TripletConfig {
        TripletConfig {
            margin: self.training.margin,
            constraint_mode: self.training.constraint_mode,
        }
    }

    pub fn loss_weights(&self) -> LossWeights {
        LossWeights {
            alpha: self.training.alpha,
            beta: self.training.beta,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.dataset_config().validate().map_err(into_config)?;
        let m = &self.model;
        if m.feature_dim == 0 || m.context_len == 0 || m.text_hidden == 0 {
            return Err(Error::Config("model dimensions must be positive".into()));
        }
        let r = self.bottleneck_ratio();
        if !m.feature_dim.is_multiple_of(r) {
            return Err(Error::Config(format!(
                "bottleneck ratio {r} must divide feature_dim {}",
                m.feature_dim
            )));
        }
        if !(m.temperature.is_finite() && m.temperature > 0.0) {
            return Err(Error::Config(format!("temperature must be > 0, got {}", m.temperature)));
        }
        if !(m.metanet_up_scale.is_finite() && m.metanet_up_scale >= 0.0) {
            return Err(Error::Config("metanet_up_scale must be finite and >= 0".into()));
        }
        let t = &self.training;
        if t.epochs == 0 {
            return Err(Error::Config("epochs must be positive".into()));
        }
        if !(t.lr.is_finite() && t.lr >= 0.0) {
            return Err(Error::Config(format!("lr must be finite and >= 0, got {}", t.lr)));
        }
        if !(0.0..1.0).contains(&t.momentum) {
            return Err(Error::Config(format!("momentum must lie in [0, 1), got {}", t.momentum)));
        }
        if t.augmentations.len() == 1 {
            return Err(Error::Config("augmentations must list at least 2 types".into()));
        }
        let mut seen = t.augmentations.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != t.augmentations.len() {
            return Err(Error::Config("augmentations contains duplicates".into()));
        }
        self.loss_weights().validate()?;
        self.triplet_config().validate()?;
        let p = &self.profiling;
        if p.samples < 2 {
            return Err(Error::Config("profiling needs at least 2 samples per type".into()));
        }
        if !(p.temperature.is_finite() && p.temperature > 0.0) {
            return Err(Error::Config(format!(
                "profiling temperature must be > 0, got {}",
                p.temperature
            )));
        }
        Ok(())
    }
}

fn into_config(e: Error) -> Error {
    match e {
        Error::Config(_) => e,
        other => Error::Config(other.to_string()),
    }
}
