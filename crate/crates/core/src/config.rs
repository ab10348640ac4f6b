//! Run configuration: a flat TOML table with defaults for every key.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::backbone::{BackboneConfig, BackboneKind};
use crate::data::{DataOptions, PoseFrame};
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::train::{AdamConfig, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub backbone: BackboneKind,
    pub width_multiplier: f64,
    pub input_size: usize,
    pub hidden: usize,
    pub keypoints: usize,
    pub speed_classes: usize,
    pub aux_dropout: f64,
    pub lambda: f64,
    pub lr: f64,
    pub weight_decay: f64,
    pub milestones: Vec<usize>,
    pub gamma: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub stride: usize,
    pub context: f64,
    pub train_fraction: f64,
    pub pose_frame: PoseFrame,
    pub seed: u64,
    /// Write `checkpoints/epoch_NNNN.ckpt` every this many epochs; 0 keeps
    /// only the final checkpoint.
    pub checkpoint_every: usize,
    pub data: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            backbone: BackboneKind::Squeeze,
            width_multiplier: 1.0,
            input_size: 224,
            hidden: 512,
            keypoints: 18,
            speed_classes: 5,
            aux_dropout: 0.5,
            lambda: 0.01,
            lr: 1e-2,
            weight_decay: 1e-5,
            milestones: vec![50, 75],
            gamma: 0.1,
            batch_size: 16,
            epochs: 100,
            stride: 8,
            context: 0.1,
            train_fraction: 0.7,
            pose_frame: PoseFrame::Crop,
            seed: 0,
            checkpoint_every: 10,
            data: None,
        }
    }
}

impl RunConfig {
    /// Small model for CPU runs: width 0.25, 64x64 crops, lr 1e-3.
    pub fn desk() -> Self {
        RunConfig {
            width_multiplier: 0.25,
            input_size: 64,
            lr: 1e-3,
            ..Self::default()
        }
    }

    /// Malformed or unknown keys are validation errors naming the line.
    pub fn from_toml(text: &str, path: &Path) -> Result<Self> {
        toml::from_str(text).map_err(|e| {
            let line = e.span().map(|s| text[..s.start].matches('\n').count() + 1).unwrap_or(0);
            Error::Validation(format!("{}:{}: {}", path.display(), line, e.message()))
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg = Self::from_toml(&text, path)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config always serializes")
    }

    pub fn model(&self) -> ModelConfig {
        ModelConfig {
            backbone: BackboneConfig {
                kind: self.backbone,
                width_multiplier: self.width_multiplier,
                input_size: (self.input_size, self.input_size),
            },
            hidden: self.hidden,
            keypoints: self.keypoints,
            speed_classes: self.speed_classes,
            aux_dropout: self.aux_dropout,
            aux_heads: true,
        }
    }

    pub fn train(&self) -> TrainConfig {
        TrainConfig {
            lambda: self.lambda,
            batch_size: self.batch_size,
            lr: self.lr,
            milestones: self.milestones.clone(),
            gamma: self.gamma,
            adam: AdamConfig {
                weight_decay: self.weight_decay,
                ..AdamConfig::default()
            },
            seed: self.seed,
        }
    }

    pub fn data_options(&self) -> DataOptions {
        DataOptions {
            input_size: (self.input_size, self.input_size),
            context: self.context,
            stride: self.stride,
            speed_classes: self.speed_classes,
            train_fraction: self.train_fraction,
            split_seed: self.seed,
            pose_frame: self.pose_frame,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model().validate()?;
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Validation(format!("lambda must be a finite non-negative number, got {}", self.lambda)));
        }
        if self.stride == 0 {
            return Err(Error::Validation("stride must be positive".into()));
        }
        if !(self.context >= 0.0 && self.context.is_finite()) {
            return Err(Error::Validation(format!("context must be non-negative, got {}", self.context)));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::Validation(format!("train_fraction must lie in (0, 1), got {}", self.train_fraction)));
        }
        if self.epochs == 0 {
            return Err(Error::Validation("epochs must be positive".into()));
        }
        crate::train::Trainer::check_config(&self.train())
    }

    /// Hash of every setting that shapes the trained weights. The epoch
    /// count, checkpoint cadence and data path are left out so a run can be
    /// resumed with a longer horizon or a moved dataset.
    pub fn fingerprint(&self) -> String {
        let canonical = RunConfig {
            epochs: 0,
            checkpoint_every: 0,
            data: None,
            ..self.clone()
        };
        let digest = Sha256::digest(canonical.to_toml().as_bytes());
        digest.iter().map(|b| format!("{:02x}", b)).collect()
    }
}
