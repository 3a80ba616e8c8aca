//! Typed configuration. The experiment file is TOML with sections `data`,
//! `network`, `loss`, `train`, `eval` and `output` plus a top-level `seed`;
//! unknown keys are rejected.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::PhantomSpec;
use crate::error::{Error, Result};

/// Downsampling of the stem, fixed for thin volumes.
pub const STEM_STRIDE: [usize; 3] = [2, 2, 2];
/// Per-stage strides; stages 3 and 4 keep resolution and use dilation instead.
pub const STAGE_STRIDES: [[usize; 3]; 4] = [[2, 2, 1], [2, 2, 1], [1, 1, 1], [1, 1, 1]];
pub const STAGE_DILATIONS: [usize; 4] = [1, 1, 2, 2];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackboneConfig {
    pub in_channels: usize,
    pub stem_channels: usize,
    pub stage_channels: [usize; 4],
    pub blocks: [usize; 4],
    /// Groups of the 3x3x3 convolution inside each residual block.
    pub cardinality: usize,
    pub stem_stride: [usize; 3],
    pub stage_strides: [[usize; 3]; 4],
    pub stage_dilations: [usize; 4],
}

impl Default for BackboneConfig {
    fn default() -> Self {
        Self {
            in_channels: 1,
            stem_channels: 32,
            stage_channels: [64, 128, 256, 512],
            blocks: [2, 2, 2, 2],
            cardinality: 8,
            stem_stride: STEM_STRIDE,
            stage_strides: STAGE_STRIDES,
            stage_dilations: STAGE_DILATIONS,
        }
    }
}

impl BackboneConfig {
    /// Width of the grouped convolution inside a block producing `out` channels.
    pub fn bottleneck_width(out: usize) -> usize {
        (out / 2).max(1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.stem_stride != STEM_STRIDE || self.stage_strides != STAGE_STRIDES {
            return Err(Error::Config(format!(
                "backbone strides are fixed to stem {:?} and stages {:?}",
                STEM_STRIDE, STAGE_STRIDES
            )));
        }
        if self.stage_dilations != STAGE_DILATIONS {
            return Err(Error::Config(format!("backbone dilations are fixed to {:?}", STAGE_DILATIONS)));
        }
        if self.in_channels == 0 || self.stem_channels == 0 || self.cardinality == 0 {
            return Err(Error::Config("backbone channel counts and cardinality must be positive".into()));
        }
        for (i, (&c, &b)) in self.stage_channels.iter().zip(&self.blocks).enumerate() {
            if b == 0 {
                return Err(Error::Config(format!("stage {} needs at least one block", i + 1)));
            }
            let mid = Self::bottleneck_width(c);
            if c == 0 || mid % self.cardinality != 0 {
                return Err(Error::Config(format!(
                    "stage {} width {} (bottleneck {}) is not divisible by cardinality {}",
                    i + 1,
                    c,
                    mid,
                    self.cardinality
                )));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum AttentionMode {
    /// Full-resolution weights with one channel per MLF channel.
    #[default]
    PerChannel,
    /// One weight map broadcast across MLF channels.
    SingleChannel,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    pub backbone: BackboneConfig,
    pub pyramid_channels: usize,
    pub slf_channels: usize,
    pub fused_channels: usize,
    pub aspp_rates: [usize; 3],
    pub attention: AttentionMode,
    /// Upper bound on group-norm groups; clamped to a divisor of the channel count.
    pub gn_groups: usize,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            backbone: BackboneConfig::default(),
            pyramid_channels: 128,
            slf_channels: 64,
            fused_channels: 64,
            aspp_rates: [6, 12, 18],
            attention: AttentionMode::PerChannel,
            gn_groups: 32,
        }
    }
}

impl NetworkConfig {
    /// Reduced widths for CPU experiments and verification.
    pub fn tiny() -> Self {
        Self {
            backbone: BackboneConfig {
                stem_channels: 8,
                stage_channels: [8, 16, 32, 64],
                blocks: [1, 1, 1, 1],
                cardinality: 4,
                ..BackboneConfig::default()
            },
            pyramid_channels: 16,
            slf_channels: 8,
            fused_channels: 16,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.backbone.validate()?;
        if self.pyramid_channels == 0 || self.slf_channels == 0 || self.fused_channels == 0 || self.gn_groups == 0 {
            return Err(Error::Config("network widths and gn_groups must be positive".into()));
        }
        if self.aspp_rates.contains(&0) {
            return Err(Error::Config("ASPP dilation rates must be positive".into()));
        }
        Ok(())
    }
}

/// Weights of the nine supervised signals, shallow layer first.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub w_slf: [f64; 4],
    pub w_att: [f64; 4],
    pub w_final: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { w_slf: [0.4, 0.5, 0.7, 0.8], w_att: [0.4, 0.5, 0.7, 0.8], w_final: 1.0 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if self.w_slf.iter().chain(&self.w_att).chain(std::iter::once(&self.w_final)).any(|&w| !(w > 0.0 && w.is_finite())) {
            return Err(Error::Config("all loss weights must be finite and > 0".into()));
        }
        Ok(())
    }

    pub fn total(&self) -> f64 {
        self.w_slf.iter().sum::<f64>() + self.w_att.iter().sum::<f64>() + self.w_final
    }

    /// The nine weights in signal order: SLF 1-4, attentive 1-4, final.
    pub fn as_array(&self) -> [f64; 9] {
        let mut out = [0.0; 9];
        out[..4].copy_from_slice(&self.w_slf);
        out[4..8].copy_from_slice(&self.w_att);
        out[8] = self.w_final;
        out
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self { w_slf: self.w_slf.map(|w| w * s), w_att: self.w_att.map(|w| w * s), w_final: self.w_final * s }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BceReduction {
    #[default]
    Mean,
    Sum,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub weights: LossWeights,
    pub bce_reduction: BceReduction,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self { weights: LossWeights::default(), bce_reduction: BceReduction::Mean }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LrSchedule {
    #[default]
    Constant,
    Cosine,
}

/// The `[train]` section.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainParams {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Volumes per optimizer step (gradients are averaged).
    pub batch_size: usize,
    pub epochs: usize,
    /// Stop after this many optimizer steps (0 = run all epochs).
    pub max_iterations: usize,
    pub augment: bool,
    pub threshold: f32,
    pub lr_schedule: LrSchedule,
    pub prefetch_depth: usize,
    pub folds: usize,
    pub checkpoint_dir: Option<PathBuf>,
}

impl Default for TrainParams {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            batch_size: 1,
            epochs: 20,
            max_iterations: 0,
            augment: true,
            threshold: 0.5,
            lr_schedule: LrSchedule::Constant,
            prefetch_depth: 2,
            folds: 4,
            checkpoint_dir: None,
        }
    }
}

impl TrainParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate must be finite and >= 0, got {}", self.lr)));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || self.adam_eps <= 0.0 {
            return Err(Error::Config("Adam betas must lie in [0, 1) and eps must be > 0".into()));
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(Error::Config("threshold must lie in [0, 1]".into()));
        }
        if self.folds < 2 {
            return Err(Error::Config("folds must be >= 2".into()));
        }
        Ok(())
    }
}

/// Everything the trainer needs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub seed: u64,
    pub network: NetworkConfig,
    pub loss: LossConfig,
    pub train: TrainParams,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.network.validate()?;
        self.loss.weights.validate()?;
        self.train.validate()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum VolumeFormat {
    #[default]
    Nifti,
    Raw,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub manifest: Option<PathBuf>,
    pub format: VolumeFormat,
    pub phantom: PhantomSpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    /// Report surface distances in millimetres instead of voxels.
    pub distances_mm: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self { dir: PathBuf::from("runs/default") }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub data: DataSection,
    pub network: NetworkConfig,
    pub loss: LossConfig,
    pub train: TrainParams,
    pub eval: EvalSection,
    pub output: OutputSection,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// Writes the fully-resolved configuration next to a run's outputs.
    pub fn save_resolved(&self, dir: impl AsRef<Path>) -> Result<PathBuf> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join("resolved_config.toml");
        fs::write(&path, self.to_toml()).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }

    pub fn validate(&self) -> Result<()> {
        self.data.phantom.validate().map_err(|e| Error::Config(e.to_string()))?;
        self.train_config().validate()
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig { seed: self.seed, network: self.network.clone(), loss: self.loss.clone(), train: self.train.clone() }
    }
}
