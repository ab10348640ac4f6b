//! Classification metrics for the crossing task.

use crate::error::{Error, Result};

/// Predicted class of a two-way probability or logit row. Ties go to class 0.
pub fn argmax2(row: [f64; 2]) -> usize {
    usize::from(row[1] > row[0])
}

/// Fraction of predictions equal to the label.
pub fn accuracy(pred: &[usize], labels: &[usize]) -> Result<f64> {
    check_lengths(pred.len(), labels.len())?;
    if pred.is_empty() {
        return Err(Error::UndefinedMetric("accuracy over zero samples".into()));
    }
    let hits = pred.iter().zip(labels).filter(|(p, y)| p == y).count();
    Ok(hits as f64 / pred.len() as f64)
}

/// Precision of the positive (crossing) class. Undefined when nothing is
/// predicted positive.
pub fn precision(pred: &[usize], labels: &[usize]) -> Result<f64> {
    check_lengths(pred.len(), labels.len())?;
    let predicted = pred.iter().filter(|&&p| p == 1).count();
    if predicted == 0 {
        return Err(Error::UndefinedMetric("precision with no positive predictions".into()));
    }
    let tp = pred.iter().zip(labels).filter(|(&p, &y)| p == 1 && y == 1).count();
    Ok(tp as f64 / predicted as f64)
}

/// One operating point of the ROC curve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RocPoint {
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

struct Sweep {
    points: Vec<(f64, u64, u64)>,
    positives: u64,
    negatives: u64,
}

fn sweep(scores: &[f64], labels: &[usize]) -> Result<Sweep> {
    check_lengths(scores.len(), labels.len())?;
    if let Some(s) = scores.iter().find(|s| !s.is_finite()) {
        return Err(Error::Numeric(format!("non-finite score {} in ROC sweep", s)));
    }
    let positives = labels.iter().filter(|&&y| y == 1).count() as u64;
    let negatives = labels.len() as u64 - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::UndefinedMetric(format!(
            "ROC needs both classes (positives {}, negatives {})",
            positives, negatives
        )));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut points = vec![(f64::INFINITY, 0, 0)];
    let (mut tp, mut fp) = (0u64, 0u64);
    let mut i = 0;
    while i < order.len() {
        let t = scores[order[i]];
        while i < order.len() && scores[order[i]] == t {
            if labels[order[i]] == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push((t, fp, tp));
    }
    Ok(Sweep {
        points,
        positives,
        negatives,
    })
}

/// ROC curve over every distinct score, from `(0, 0)` to `(1, 1)`.
/// A sample is predicted positive when its score is `>= threshold`.
pub fn roc_curve(scores: &[f64], labels: &[usize]) -> Result<Vec<RocPoint>> {
    let sw = sweep(scores, labels)?;
    Ok(sw
        .points
        .iter()
        .map(|&(threshold, fp, tp)| RocPoint {
            threshold,
            fpr: fp as f64 / sw.negatives as f64,
            tpr: tp as f64 / sw.positives as f64,
        })
        .collect())
}

/// Area under the ROC curve by the trapezoid rule over the full sweep.
/// Tied scores contribute one half. The area is accumulated in integers and
/// divided once, so the result is the correctly rounded rational value.
pub fn roc_auc(scores: &[f64], labels: &[usize]) -> Result<f64> {
    let sw = sweep(scores, labels)?;
    let mut twice_area: u128 = 0;
    for pair in sw.points.windows(2) {
        let (_, fp0, tp0) = pair[0];
        let (_, fp1, tp1) = pair[1];
        twice_area += u128::from(fp1 - fp0) * u128::from(tp0 + tp1);
    }
    Ok(twice_area as f64 / (2 * u128::from(sw.positives) * u128::from(sw.negatives)) as f64)
}

fn check_lengths(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::Validation(format!("{} predictions for {} labels", a, b)));
    }
    Ok(())
}
