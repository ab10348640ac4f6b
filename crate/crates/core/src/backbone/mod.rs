//! Per-frame feature extractors mapping `[B, 3, h, w]` frames to 512-d
//! feature vectors.

mod mobile;
mod squeeze;

pub use mobile::{separable_block_macs, standard_conv_macs, MobileNet, SeparableBlock};
pub use squeeze::{squeezenet_fire_configs, squeezenet_parameter_count, Fire, FireConfig, SqueezeNet};

use serde::{Deserialize, Serialize};
use xint_tensor::{Scalar, TensorError, Var};

use crate::error::{Error, Result};
use crate::nn::{ParamStore, Session};

/// Width of the feature vector every backbone emits.
pub const FEATURE_DIM: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackboneKind {
    Squeeze,
    Mobile,
}

impl std::fmt::Display for BackboneKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            BackboneKind::Squeeze => "squeeze",
            BackboneKind::Mobile => "mobile",
        })
    }
}

impl std::str::FromStr for BackboneKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "squeeze" | "squeezenet" => Ok(BackboneKind::Squeeze),
            "mobile" | "mobilenet" => Ok(BackboneKind::Mobile),
            other => Err(Error::Validation(format!("unknown backbone '{}'", other))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BackboneConfig {
    pub kind: BackboneKind,
    pub width_multiplier: f64,
    /// `(height, width)` of each input frame in pixels.
    pub input_size: (usize, usize),
}

impl BackboneConfig {
    /// Full-size profile: 224x224 frames, width 1.0.
    pub fn full(kind: BackboneKind) -> Self {
        BackboneConfig {
            kind,
            width_multiplier: 1.0,
            input_size: (224, 224),
        }
    }

    /// Desk-scale profile: 64x64 frames, width 0.25.
    pub fn desk(kind: BackboneKind) -> Self {
        BackboneConfig {
            kind,
            width_multiplier: 0.25,
            input_size: (64, 64),
        }
    }

    pub fn feature_dim(&self) -> usize {
        FEATURE_DIM
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.width_multiplier > 0.0 && self.width_multiplier <= 1.0) {
            return Err(Error::Validation(format!(
                "width_multiplier {} outside (0, 1]",
                self.width_multiplier
            )));
        }
        let (h, w) = self.input_size;
        let min = match self.kind {
            BackboneKind::Squeeze => 31,
            BackboneKind::Mobile => 32,
        };
        if h < min || w < min {
            return Err(Error::Validation(format!(
                "input size {}x{} below the {} backbone minimum of {}x{}",
                h, w, self.kind, min, min
            )));
        }
        Ok(())
    }

    /// Channel count scaled by the width multiplier, at least 1.
    pub fn scaled(&self, channels: usize) -> usize {
        ((channels as f64 * self.width_multiplier).round() as usize).max(1)
    }
}

/// The shared feature extractor.
#[derive(Debug, Clone)]
pub enum Backbone {
    Squeeze(SqueezeNet),
    Mobile(MobileNet),
}

impl Backbone {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, prefix: &str, cfg: &BackboneConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(match cfg.kind {
            BackboneKind::Squeeze => Backbone::Squeeze(SqueezeNet::new(store, prefix, cfg)?),
            BackboneKind::Mobile => Backbone::Mobile(MobileNet::new(store, prefix, cfg)),
        })
    }

    pub fn config(&self) -> &BackboneConfig {
        match self {
            Backbone::Squeeze(b) => &b.config,
            Backbone::Mobile(b) => &b.config,
        }
    }

    /// `[B, 3, h, w] -> [B, 512]`.
    pub fn forward<T: Scalar>(&self, s: &mut Session<'_, T>, x: Var) -> Result<Var> {
        let shape = s.tape.shape(x).to_vec();
        let (h, w) = self.config().input_size;
        if shape.len() != 4 || shape[1] != 3 || shape[2] != h || shape[3] != w {
            return Err(TensorError::Dimension {
                op: "backbone",
                detail: format!("expected [B, 3, {}, {}], got {:?}", h, w, shape),
            }
            .into());
        }
        match self {
            Backbone::Squeeze(b) => b.forward(s, x),
            Backbone::Mobile(b) => b.forward(s, x),
        }
    }

    /// Flattens `[n, l, c, h, w]` clips into `[n*l, c, h, w]` frames and
    /// extracts features; row `i*l + t` is clip `i`, frame `t`.
    pub fn extract_sequence_features<T: Scalar>(&self, s: &mut Session<'_, T>, clips: Var) -> Result<Var> {
        let shape = s.tape.shape(clips).to_vec();
        let [n, l, c, h, w] = shape[..] else {
            return Err(TensorError::Dimension {
                op: "extract_sequence_features",
                detail: format!("expected [n, l, c, h, w], got {:?}", shape),
            }
            .into());
        };
        let frames = s.tape.reshape(clips, &[n * l, c, h, w])?;
        self.forward(s, frames)
    }
}
