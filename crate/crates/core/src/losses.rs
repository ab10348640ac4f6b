//! Crossing and auxiliary losses and their λ-weighted combination.

use xint_tensor::{Scalar, Tape, Tensor, Var};

use crate::error::{Error, Result};

/// Per-class weights for the crossing loss, indexed by class label.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassWeights(Vec<f64>);

impl ClassWeights {
    pub fn new(w: Vec<f64>) -> Result<Self> {
        if w.is_empty() || w.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
            return Err(Error::Validation(format!("class weights must be positive, got {:?}", w)));
        }
        Ok(ClassWeights(w))
    }

    pub fn uniform(classes: usize) -> Self {
        ClassWeights(vec![1.0; classes])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn cast<T: Scalar>(&self) -> Vec<T> {
        self.0.iter().map(|&v| T::from_f64_lossy(v)).collect()
    }
}

/// Crossing-loss weights from event counts: `[c / total, 1 - c / total]`
/// where `c` is the number of crossing events. The rarer class ends up
/// with the larger weight.
pub fn compute_class_weights(crossing: usize, non_crossing: usize) -> Result<ClassWeights> {
    let total = crossing + non_crossing;
    if total == 0 {
        return Err(Error::Data("no events to derive class weights from".into()));
    }
    let share = crossing as f64 / total as f64;
    // A single-class split would zero one weight; that class never appears
    // as a target, so any positive weight is equivalent.
    let w = [share, 1.0 - share].map(|v| if v > 0.0 { v } else { f64::MIN_POSITIVE });
    ClassWeights::new(w.to_vec())
}

/// Weighted cross-entropy over crossing logits `[n, 2]`, normalized by the
/// sum of the applied weights.
pub fn weighted_cross_entropy<T: Scalar>(tape: &mut Tape<T>, logits: Var, labels: &[usize], w: &ClassWeights) -> Result<Var> {
    if let Some(&bad) = labels.iter().find(|&&y| y > 1) {
        return Err(Error::Data(format!("crossing label {} outside {{0, 1}}", bad)));
    }
    Ok(tape.weighted_cross_entropy(logits, labels, &w.cast::<T>())?)
}

/// Mean binary cross-entropy over the unmasked entries; an all-masked
/// input contributes 0 (and logs a warning).
pub fn binary_cross_entropy<T: Scalar>(tape: &mut Tape<T>, pred: Var, target: &Tensor<T>, mask: Option<&Tensor<T>>) -> Result<Var> {
    if mask.is_some_and(|m| m.data().iter().all(|&v| v == T::zero())) {
        log::warn!("binary cross-entropy over an empty mask; loss defined as 0");
    }
    Ok(tape.binary_cross_entropy(pred, target, mask)?)
}

/// Loss terms of one step. `total = cross + lambda * pose + lambda * speed`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBundle {
    pub cross: f64,
    pub pose: f64,
    pub speed: f64,
    pub total: f64,
    pub lambda: f64,
}

/// Graph handles of the combined objective.
#[derive(Debug, Clone, Copy)]
pub struct LossVars {
    pub cross: Var,
    pub pose: Option<Var>,
    pub speed: Option<Var>,
    pub total: Var,
}

/// Builds `cross + lambda * pose + lambda * speed` on the tape.
pub fn combined_loss<T: Scalar>(
    tape: &mut Tape<T>,
    cross: Var,
    pose: Option<Var>,
    speed: Option<Var>,
    lambda: f64,
) -> Result<(LossVars, LossBundle)> {
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::Validation(format!("lambda must be a finite non-negative number, got {}", lambda)));
    }
    let lam = T::from_f64_lossy(lambda);
    let mut total = cross;
    // At lambda = 0 the auxiliary terms stay off the graph of `total`, so no
    // gradient reaches the auxiliary heads or flows back from them.
    if lambda > 0.0 {
        for aux in [pose, speed].into_iter().flatten() {
            let weighted = tape.scale(aux, lam);
            total = tape.add(total, weighted)?;
        }
    }
    let get = |v: Option<Var>| v.map_or(0.0, |v| tape.value(v).item().to_f64().unwrap_or(f64::NAN));
    let bundle = LossBundle {
        cross: get(Some(cross)),
        pose: get(pose),
        speed: get(speed),
        total: get(Some(total)),
        lambda,
    };
    Ok((
        LossVars {
            cross,
            pose,
            speed,
            total,
        },
        bundle,
    ))
}
