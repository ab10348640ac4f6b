//! Fused loss primitives.

use crate::error::{Result, TensorError};
use crate::ops::activation::softmax_row;
use crate::scalar::Scalar;
use crate::tape::{GradAcc, Op, Tape, Var};
use crate::tensor::Tensor;

/// Log terms are floored here so a saturated probability cannot yield `inf`.
const LOG_FLOOR: f64 = -100.0;
/// Lower bound on `p (1 - p)` in the BCE gradient denominator.
const BCE_GRAD_EPS: f64 = 1e-12;

impl<T: Scalar> Tape<T> {
    /// Class-weighted cross-entropy of `logits: [n, C]`, normalized by the
    /// sum of the weights of the target classes.
    pub fn weighted_cross_entropy(&mut self, logits: Var, labels: &[usize], weights: &[T]) -> Result<Var> {
        let [n, c] = self.value(logits).dims2("weighted_cross_entropy")?;
        if labels.len() != n {
            return Err(TensorError::dim(
                "weighted_cross_entropy",
                format!("{} labels for {} rows", labels.len(), n),
            ));
        }
        if weights.len() != c {
            return Err(TensorError::dim(
                "weighted_cross_entropy",
                format!("{} weights for {} classes", weights.len(), c),
            ));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= c) {
            return Err(TensorError::Data(format!("label {} outside 0..{}", bad, c)));
        }
        if n == 0 {
            return Err(TensorError::Data("empty batch".into()));
        }
        let mut probs = vec![T::zero(); n * c];
        let mut total = T::zero();
        let mut norm = T::zero();
        for (i, (row, prow)) in self.value(logits).data().chunks(c).zip(probs.chunks_mut(c)).enumerate() {
            softmax_row(row, prow);
            let y = labels[i];
            // -log softmax via log-sum-exp.
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<T>().ln();
            total = total + weights[y] * (lse - row[y]);
            norm = norm + weights[y];
        }
        if norm <= T::zero() {
            return Err(TensorError::Data("target class weights sum to zero".into()));
        }
        let coef: Vec<T> = labels.iter().map(|&y| weights[y] / norm).collect();
        let v = Tensor::scalar(total / norm);
        Ok(self.push(
            v,
            Op::WeightedCrossEntropy {
                logits,
                probs,
                coef,
                labels: labels.to_vec(),
            },
            &[logits],
        ))
    }

    /// Mean binary cross-entropy of probabilities `pred` against soft
    /// `target`s over the entries where `mask` is non-zero. An all-zero mask
    /// yields 0.
    pub fn binary_cross_entropy(&mut self, pred: Var, target: &Tensor<T>, mask: Option<&Tensor<T>>) -> Result<Var> {
        let pv = self.value(pred);
        if pv.shape() != target.shape() || mask.is_some_and(|m| m.shape() != pv.shape()) {
            return Err(TensorError::dim(
                "binary_cross_entropy",
                format!(
                    "prediction {:?}, target {:?}, mask {:?}",
                    pv.shape(),
                    target.shape(),
                    mask.map(|m| m.shape().to_vec())
                ),
            ));
        }
        let floor = T::from_f64_lossy(LOG_FLOOR);
        let mut total = T::zero();
        let mut count = T::zero();
        for (i, (&p, &t)) in pv.data().iter().zip(target.data()).enumerate() {
            let w = mask.map_or(T::one(), |m| m.data()[i]);
            if w == T::zero() {
                continue;
            }
            let lp = p.ln().max(floor);
            let lq = (T::one() - p).ln().max(floor);
            total = total - w * (t * lp + (T::one() - t) * lq);
            count = count + w;
        }
        let loss = if count > T::zero() { total / count } else { T::zero() };
        let v = Tensor::scalar(loss);
        Ok(self.push(
            v,
            Op::BinaryCrossEntropy {
                pred,
                target: target.data().to_vec(),
                mask: mask.map(|m| m.data().to_vec()),
                count,
            },
            &[pred],
        ))
    }
}

pub(crate) fn weighted_ce_backward<T: Scalar>(
    logits: Var,
    probs: &[T],
    coef: &[T],
    labels: &[usize],
    g: &[T],
    acc: &mut GradAcc<'_, T>,
) {
    let c = probs.len() / labels.len();
    let g0 = g[0];
    if let Some(gl) = acc.slot(logits) {
        for (i, &y) in labels.iter().enumerate() {
            for k in 0..c {
                let onehot = if k == y { T::one() } else { T::zero() };
                let d = &mut gl[i * c + k];
                *d = *d + g0 * coef[i] * (probs[i * c + k] - onehot);
            }
        }
    }
}

pub(crate) fn bce_backward<T: Scalar>(
    pred: Var,
    target: &[T],
    mask: Option<&[T]>,
    count: T,
    g: &[T],
    acc: &mut GradAcc<'_, T>,
) {
    if count <= T::zero() {
        return;
    }
    let eps = T::from_f64_lossy(BCE_GRAD_EPS);
    let scale = g[0] / count;
    let pv = acc.value(pred).data();
    if let Some(gp) = acc.slot(pred) {
        for (i, d) in gp.iter_mut().enumerate() {
            let w = mask.map_or(T::one(), |m| m[i]);
            if w == T::zero() {
                continue;
            }
            let p = pv[i];
            let denom = (p * (T::one() - p)).max(eps);
            *d = *d + scale * w * (p - target[i]) / denom;
        }
    }
}
