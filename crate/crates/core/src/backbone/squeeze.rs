use xint_tensor::{Scalar, TensorError, Var};

use super::{BackboneConfig, FEATURE_DIM};
use crate::error::{Error, Result};
use crate::nn::{Conv2d, ParamStore, Session};

/// Channel plan of one fire module.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FireConfig {
    pub in_channels: usize,
    pub squeeze_1x1: usize,
    pub expand_1x1: usize,
    pub expand_3x3: usize,
}

impl FireConfig {
    pub const fn new(in_channels: usize, squeeze_1x1: usize, expand_1x1: usize, expand_3x3: usize) -> Self {
        FireConfig {
            in_channels,
            squeeze_1x1,
            expand_1x1,
            expand_3x3,
        }
    }

    pub fn out_channels(&self) -> usize {
        self.expand_1x1 + self.expand_3x3
    }

    /// The squeeze layer must be narrower than the expand layers it feeds.
    pub fn validate(&self) -> Result<()> {
        if self.squeeze_1x1 == 0 || self.squeeze_1x1 >= self.out_channels() {
            return Err(Error::Validation(format!(
                "fire module {:?} violates squeeze < expand_1x1 + expand_3x3",
                self
            )));
        }
        Ok(())
    }

    pub fn num_parameters(&self) -> usize {
        let s = self.squeeze_1x1;
        (self.in_channels * s + s) + (s * self.expand_1x1 + self.expand_1x1) + (s * 9 * self.expand_3x3 + self.expand_3x3)
    }
}

/// Squeeze 1x1 conv, then parallel 1x1 and 3x3 expand convs whose outputs
/// are concatenated along channels. ReLU after every conv.
#[derive(Debug, Clone)]
pub struct Fire {
    pub config: FireConfig,
    squeeze: Conv2d,
    expand_1x1: Conv2d,
    expand_3x3: Conv2d,
}

impl Fire {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, cfg: FireConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Fire {
            config: cfg,
            squeeze: Conv2d::new(store, &format!("{}.squeeze", name), cfg.in_channels, cfg.squeeze_1x1, 1, 1, 0, true),
            expand_1x1: Conv2d::new(store, &format!("{}.expand1x1", name), cfg.squeeze_1x1, cfg.expand_1x1, 1, 1, 0, true),
            expand_3x3: Conv2d::new(store, &format!("{}.expand3x3", name), cfg.squeeze_1x1, cfg.expand_3x3, 3, 1, 1, true),
        })
    }

    pub fn forward<T: Scalar>(&self, s: &mut Session<'_, T>, x: Var) -> Result<Var> {
        let shape = s.tape.shape(x);
        if shape.len() != 4 || shape[1] != self.config.in_channels {
            return Err(TensorError::Dimension {
                op: "fire",
                detail: format!("expected {} input channels, got {:?}", self.config.in_channels, shape),
            }
            .into());
        }
        let sq = self.squeeze.forward(s, x)?;
        let sq = s.tape.relu(sq);
        let e1 = self.expand_1x1.forward(s, sq)?;
        let e1 = s.tape.relu(e1);
        let e3 = self.expand_3x3.forward(s, sq)?;
        let e3 = s.tape.relu(e3);
        Ok(s.tape.concat_channels(&[e1, e3])?)
    }
}

/// v1.1 fire schedule at unit width: `(squeeze, expand)` per module, with
/// max-pools after the stem, fire3 and fire5.
const V11_FIRES: [(usize, usize); 8] = [
    (16, 64),
    (16, 64),
    (32, 128),
    (32, 128),
    (48, 192),
    (48, 192),
    (64, 256),
    (64, 256),
];
const STEM_CHANNELS: usize = 64;
/// Fire modules (0-based) followed by a max-pool.
const POOL_AFTER: [usize; 2] = [1, 3];

/// Fire channel plans for a width multiplier. The last module always
/// expands to 256 + 256 = 512 channels.
pub fn squeezenet_fire_configs(cfg: &BackboneConfig) -> Vec<FireConfig> {
    let mut in_c = cfg.scaled(STEM_CHANNELS);
    let last = V11_FIRES.len() - 1;
    V11_FIRES
        .iter()
        .enumerate()
        .map(|(i, &(sq, ex))| {
            let ex = if i == last { FEATURE_DIM / 2 } else { cfg.scaled(ex) };
            let fc = FireConfig::new(in_c, cfg.scaled(sq), ex, ex);
            in_c = fc.out_channels();
            fc
        })
        .collect()
}

/// Parameter count from the configured layer shapes, without building.
pub fn squeezenet_parameter_count(cfg: &BackboneConfig) -> usize {
    let stem = cfg.scaled(STEM_CHANNELS);
    let stem_params = stem * 3 * 9 + stem;
    stem_params + squeezenet_fire_configs(cfg).iter().map(FireConfig::num_parameters).sum::<usize>()
}

/// Stem 3x3/2 conv, 3x3/2 max-pool, eight fire modules with two more
/// max-pools, global average pool.
#[derive(Debug, Clone)]
pub struct SqueezeNet {
    pub config: BackboneConfig,
    stem: Conv2d,
    fires: Vec<Fire>,
}

impl SqueezeNet {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, prefix: &str, cfg: &BackboneConfig) -> Result<Self> {
        let stem = Conv2d::new(store, &format!("{}.stem", prefix), 3, cfg.scaled(STEM_CHANNELS), 3, 2, 0, true);
        let fires = squeezenet_fire_configs(cfg)
            .into_iter()
            .enumerate()
            .map(|(i, fc)| Fire::new(store, &format!("{}.fire{}", prefix, i + 2), fc))
            .collect::<Result<Vec<_>>>()?;
        Ok(SqueezeNet {
            config: *cfg,
            stem,
            fires,
        })
    }

    pub fn fires(&self) -> &[Fire] {
        &self.fires
    }

    pub fn forward<T: Scalar>(&self, s: &mut Session<'_, T>, x: Var) -> Result<Var> {
        let y = self.stem.forward(s, x)?;
        let y = s.tape.relu(y);
        let mut y = s.tape.max_pool2d(y, 3, 2)?;
        for (i, fire) in self.fires.iter().enumerate() {
            y = fire.forward(s, y)?;
            if POOL_AFTER.contains(&i) {
                y = s.tape.max_pool2d(y, 3, 2)?;
            }
        }
        Ok(s.tape.global_avg_pool(y)?)
    }
}
