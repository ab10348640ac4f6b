//! Differentiable operations. Each submodule adds forward methods to
//! [`crate::Tape`] and provides the matching backward rule.

pub mod activation;
pub mod conv;
pub mod dropout;
pub mod elementwise;
pub mod loss;
pub mod matmul;
pub mod norm;
pub mod pool;

use crate::scalar::Scalar;
use crate::tape::{GradAcc, Op};
use crate::tensor::Tensor;

pub(crate) fn backward<T: Scalar>(op: &Op<T>, out: &Tensor<T>, g: &[T], acc: &mut GradAcc<'_, T>) {
    match op {
        Op::Leaf => {}
        Op::MatMul { a, b } => matmul::matmul_backward(*a, *b, g, acc),
        Op::Linear { x, w, b } => matmul::linear_backward(*x, *w, *b, g, acc),
        Op::Add { .. }
        | Op::Sub { .. }
        | Op::Mul { .. }
        | Op::Affine { .. }
        | Op::Reshape { .. }
        | Op::SwapLeading { .. }
        | Op::Narrow { .. }
        | Op::Concat { .. }
        | Op::Sum { .. }
        | Op::Mean { .. } => elementwise::backward(op, out, g, acc),
        Op::Activation { x, kind } => activation::backward(*x, *kind, out, g, acc),
        Op::Conv2d { x, w, b, stride, pad } => conv::conv2d_backward(*x, *w, *b, *stride, *pad, g, acc),
        Op::DepthwiseConv2d { x, w, stride, pad } => {
            conv::depthwise_backward(*x, *w, *stride, *pad, out, g, acc)
        }
        Op::MaxPool { x, argmax } => pool::max_pool_backward(*x, argmax, g, acc),
        Op::GlobalAvgPool { x } => pool::global_avg_backward(*x, g, acc),
        Op::BatchNorm {
            x,
            gamma,
            beta,
            xhat,
            inv_std,
            training,
        } => norm::batch_norm_backward(*x, *gamma, *beta, xhat, inv_std, *training, g, acc),
        Op::Dropout { x, mask } => dropout::dropout_backward(*x, mask, g, acc),
        Op::WeightedCrossEntropy {
            logits,
            probs,
            coef,
            labels,
        } => loss::weighted_ce_backward(*logits, probs, coef, labels, g, acc),
        Op::BinaryCrossEntropy {
            pred,
            target,
            mask,
            count,
        } => loss::bce_backward(*pred, target, mask.as_deref(), *count, g, acc),
    }
}
