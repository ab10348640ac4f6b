use xint_tensor::{Scalar, Var};

use super::{BackboneConfig, FEATURE_DIM};
use crate::error::Result;
use crate::nn::{BatchNorm, Conv2d, DepthwiseConv2d, ParamStore, Session};

/// Depthwise 3x3 conv and 1x1 pointwise conv, each followed by batch norm
/// and ReLU.
#[derive(Debug, Clone)]
pub struct SeparableBlock {
    depthwise: DepthwiseConv2d,
    dw_norm: BatchNorm,
    pointwise: Conv2d,
    pw_norm: BatchNorm,
}

impl SeparableBlock {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, in_c: usize, out_c: usize, stride: usize) -> Self {
        SeparableBlock {
            depthwise: DepthwiseConv2d::new(store, &format!("{}.dw", name), in_c, 3, stride, 1),
            dw_norm: BatchNorm::new(store, &format!("{}.dw_bn", name), in_c),
            pointwise: Conv2d::new(store, &format!("{}.pw", name), in_c, out_c, 1, 1, 0, false),
            pw_norm: BatchNorm::new(store, &format!("{}.pw_bn", name), out_c),
        }
    }

    pub fn forward<T: Scalar>(&self, s: &mut Session<'_, T>, x: Var) -> Result<Var> {
        let y = self.depthwise.forward(s, x)?;
        let y = self.dw_norm.forward(s, y)?;
        let y = s.tape.relu(y);
        let y = self.pointwise.forward(s, y)?;
        let y = self.pw_norm.forward(s, y)?;
        Ok(s.tape.relu(y))
    }
}

/// Multiply-accumulates of a separable block (3x3 depthwise + pointwise)
/// producing an `out_h x out_w` map.
pub fn separable_block_macs(in_c: usize, out_c: usize, out_h: usize, out_w: usize) -> usize {
    let positions = out_h * out_w;
    in_c * 9 * positions + in_c * out_c * positions
}

/// Multiply-accumulates of a dense 3x3 conv with the same channels.
pub fn standard_conv_macs(in_c: usize, out_c: usize, out_h: usize, out_w: usize) -> usize {
    in_c * out_c * 9 * out_h * out_w
}

/// `(out_channels, stride)` of each separable block at unit width.
const V1_BLOCKS: [(usize, usize); 11] = [
    (64, 1),
    (128, 2),
    (128, 1),
    (256, 2),
    (256, 1),
    (512, 2),
    (512, 1),
    (512, 1),
    (512, 1),
    (512, 1),
    (512, 1),
];
const STEM_CHANNELS: usize = 32;

/// Stem 3x3/2 conv, the v1 separable stack, and a final stride-2 separable
/// block whose pointwise conv emits 512 channels in place of the usual
/// 1024-channel tail.
#[derive(Debug, Clone)]
pub struct MobileNet {
    pub config: BackboneConfig,
    stem: Conv2d,
    stem_norm: BatchNorm,
    blocks: Vec<SeparableBlock>,
}

impl MobileNet {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, prefix: &str, cfg: &BackboneConfig) -> Self {
        let stem_c = cfg.scaled(STEM_CHANNELS);
        let stem = Conv2d::new(store, &format!("{}.stem", prefix), 3, stem_c, 3, 2, 1, false);
        let stem_norm = BatchNorm::new(store, &format!("{}.stem_bn", prefix), stem_c);
        let mut in_c = stem_c;
        let mut blocks = Vec::new();
        for (i, &(out, stride)) in V1_BLOCKS.iter().enumerate() {
            let out = cfg.scaled(out);
            blocks.push(SeparableBlock::new(store, &format!("{}.block{}", prefix, i + 1), in_c, out, stride));
            in_c = out;
        }
        blocks.push(SeparableBlock::new(
            store,
            &format!("{}.block{}", prefix, V1_BLOCKS.len() + 1),
            in_c,
            FEATURE_DIM,
            2,
        ));
        MobileNet {
            config: *cfg,
            stem,
            stem_norm,
            blocks,
        }
    }

    pub fn forward<T: Scalar>(&self, s: &mut Session<'_, T>, x: Var) -> Result<Var> {
        let y = self.stem.forward(s, x)?;
        let y = self.stem_norm.forward(s, y)?;
        let mut y = s.tape.relu(y);
        for block in &self.blocks {
            y = block.forward(s, y)?;
        }
        Ok(s.tape.global_avg_pool(y)?)
    }
}
