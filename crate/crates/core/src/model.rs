//! The assembled multi-task model: one shared extractor feeding the
//! crossing, pose and speed heads.

use serde::{Deserialize, Serialize};
use xint_tensor::{Rng, Scalar, Tensor, TensorError, Var};

use crate::backbone::{Backbone, BackboneConfig, BackboneKind, FEATURE_DIM};
use crate::error::{Error, Result};
use crate::heads::{AuxHead, CrossingHead};
use crate::nn::{ParamStore, Session};

pub const EXTRACTOR: &str = "extractor";
pub const CROSSING_HEAD: &str = "crossing";
pub const POSE_HEAD: &str = "pose";
pub const SPEED_HEAD: &str = "speed";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub backbone: BackboneConfig,
    pub hidden: usize,
    pub keypoints: usize,
    pub speed_classes: usize,
    pub aux_dropout: f64,
    /// Without auxiliary heads the model is the crossing path alone.
    pub aux_heads: bool,
}

impl ModelConfig {
    pub fn new(backbone: BackboneConfig) -> Self {
        ModelConfig {
            backbone,
            hidden: 512,
            keypoints: 18,
            speed_classes: 5,
            aux_dropout: 0.5,
            aux_heads: true,
        }
    }

    pub fn desk(kind: BackboneKind) -> Self {
        Self::new(BackboneConfig::desk(kind))
    }

    pub fn pose_outputs(&self) -> usize {
        2 * self.keypoints
    }

    pub fn validate(&self) -> Result<()> {
        self.backbone.validate()?;
        if self.hidden == 0 || self.keypoints == 0 || self.speed_classes == 0 {
            return Err(Error::Validation("hidden, keypoints and speed_classes must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.aux_dropout) {
            return Err(Error::Validation(format!("aux_dropout {} outside [0, 1)", self.aux_dropout)));
        }
        Ok(())
    }
}

/// Graph handles of one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct Outputs {
    /// `[n, 2]` crossing logits.
    pub crossing: Var,
    /// `[n*l, 2k]` keypoint ratios in `(0, 1)`.
    pub pose: Option<Var>,
    /// `[n*l, S]` per-class speed probabilities.
    pub speed: Option<Var>,
    /// `[n*l, 512]` shared features.
    pub features: Var,
}

/// A forward pass: the live session (for losses and backward) and its
/// outputs.
pub struct Pass<'m, T: Scalar> {
    pub session: Session<'m, T>,
    pub outputs: Outputs,
}

impl<T: Scalar> Pass<'_, T> {
    pub fn value(&self, v: Var) -> &Tensor<T> {
        self.session.tape.value(v)
    }
}

pub struct ModelPhi<T: Scalar = f32> {
    config: ModelConfig,
    pub store: ParamStore<T>,
    extractor: Backbone,
    crossing: CrossingHead,
    pose: Option<AuxHead>,
    speed: Option<AuxHead>,
    extractor_calls: usize,
}

impl<T: Scalar> ModelPhi<T> {
    /// Builds the model with weights drawn from `seed`. Each parameter's
    /// initial value depends only on `(seed, name)`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new(seed);
        let extractor = Backbone::new(&mut store, EXTRACTOR, &config.backbone)?;
        let crossing = CrossingHead::new(&mut store, CROSSING_HEAD, FEATURE_DIM, config.hidden);
        let (pose, speed) = if config.aux_heads {
            (
                Some(AuxHead::new(&mut store, POSE_HEAD, FEATURE_DIM, config.pose_outputs(), config.aux_dropout)),
                Some(AuxHead::new(&mut store, SPEED_HEAD, FEATURE_DIM, config.speed_classes, config.aux_dropout)),
            )
        } else {
            (None, None)
        };
        Ok(ModelPhi {
            config,
            store,
            extractor,
            crossing,
            pose,
            speed,
            extractor_calls: 0,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn extractor(&self) -> &Backbone {
        &self.extractor
    }

    pub fn crossing_head(&self) -> &CrossingHead {
        &self.crossing
    }

    pub fn has_aux_heads(&self) -> bool {
        self.pose.is_some()
    }

    /// Number of extractor invocations so far.
    pub fn extractor_calls(&self) -> usize {
        self.extractor_calls
    }

    /// Runs `clips: [n, l, 3, h, w]` through the extractor once and feeds
    /// the features to every head.
    pub fn forward(&mut self, clips: Tensor<T>, training: bool, rng: Rng) -> Result<Pass<'_, T>> {
        let shape = clips.shape().to_vec();
        let (h, w) = self.config.backbone.input_size;
        let [n, l, 3, ch, cw] = shape[..] else {
            return Err(shape_error(&shape, h, w));
        };
        if (ch, cw) != (h, w) || n == 0 || l == 0 {
            return Err(shape_error(&shape, h, w));
        }
        let mut session = Session::new(&mut self.store, training, rng);
        let x = session.tape.constant(clips);
        self.extractor_calls += 1;
        let features = self.extractor.extract_sequence_features(&mut session, x)?;
        let crossing = self.crossing.forward(&mut session, features, n, l)?;
        let pose = match &self.pose {
            Some(head) => Some(head.forward(&mut session, features)?),
            None => None,
        };
        let speed = match &self.speed {
            Some(head) => Some(head.forward(&mut session, features)?),
            None => None,
        };
        Ok(Pass {
            session,
            outputs: Outputs {
                crossing,
                pose,
                speed,
                features,
            },
        })
    }

    /// Freezes (or unfreezes) the pose and speed heads.
    pub fn set_aux_trainable(&mut self, trainable: bool) {
        for head in [POSE_HEAD, SPEED_HEAD] {
            self.store.set_trainable(&format!("{}.", head), trainable);
        }
    }
}

fn shape_error(shape: &[usize], h: usize, w: usize) -> Error {
    TensorError::Dimension {
        op: "model_forward",
        detail: format!("expected clips [n, l, 3, {}, {}], got {:?}", h, w, shape),
    }
    .into()
}
