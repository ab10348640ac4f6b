use crate::error::{Result, TensorError};
use crate::scalar::Scalar;
use crate::tape::{GradAcc, Op, Tape, Var};
use crate::tensor::{numel, Tensor};

/// Mutable running statistics of a batch-norm layer.
pub struct RunningStats<'a, T> {
    pub mean: &'a mut [T],
    pub var: &'a mut [T],
}

/// Batch-norm hyper-parameters.
#[derive(Debug, Clone, Copy)]
pub struct BatchNormConfig {
    pub eps: f64,
    pub momentum: f64,
}

impl Default for BatchNormConfig {
    fn default() -> Self {
        BatchNormConfig {
            eps: 1e-5,
            momentum: 0.1,
        }
    }
}

/// `(outer, channels, inner)` view of `[N, C, ..]`.
fn layout(shape: &[usize]) -> (usize, usize, usize) {
    (shape[0], shape[1], numel(&shape[2..]))
}

impl<T: Scalar> Tape<T> {
    /// Batch normalization over axis 1 of `[N, F]` or `[N, C, H, W]`.
    ///
    /// Training mode normalizes with batch statistics (biased variance) and
    /// folds them into `stats` with the configured momentum (unbiased
    /// variance, as the running estimate). Eval mode uses `stats` as-is.
    #[allow(clippy::too_many_arguments)]
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        stats: RunningStats<'_, T>,
        training: bool,
        cfg: BatchNormConfig,
    ) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.len() < 2 {
            return Err(TensorError::dim("batch_norm", format!("need [N, C, ..], got {:?}", shape)));
        }
        let (outer, c, inner) = layout(&shape);
        for (name, v) in [("gamma", gamma), ("beta", beta)] {
            if self.shape(v) != [c] {
                return Err(TensorError::dim(
                    "batch_norm",
                    format!("{} {:?} does not match {} features", name, self.shape(v), c),
                ));
            }
        }
        if stats.mean.len() != c || stats.var.len() != c {
            return Err(TensorError::dim("batch_norm", "running statistics length mismatch"));
        }
        let m = outer * inner;
        if training && m == 0 {
            return Err(TensorError::dim("batch_norm", "empty batch"));
        }
        let eps = T::from_f64_lossy(cfg.eps);
        let mom = T::from_f64_lossy(cfg.momentum);
        let xv = self.value(x).data();
        let at = |n: usize, ch: usize, i: usize| (n * c + ch) * inner + i;

        let mut mean = vec![T::zero(); c];
        let mut inv_std = vec![T::zero(); c];
        if training {
            let mt = T::from_usize(m).unwrap();
            let mut var = vec![T::zero(); c];
            for ch in 0..c {
                let mut s = T::zero();
                for n in 0..outer {
                    for i in 0..inner {
                        s = s + xv[at(n, ch, i)];
                    }
                }
                mean[ch] = s / mt;
                let mut sq = T::zero();
                for n in 0..outer {
                    for i in 0..inner {
                        let d = xv[at(n, ch, i)] - mean[ch];
                        sq = sq + d * d;
                    }
                }
                var[ch] = sq / mt;
                inv_std[ch] = T::one() / (var[ch] + eps).sqrt();
            }
            for ch in 0..c {
                let unbiased = if m > 1 {
                    var[ch] * mt / (mt - T::one())
                } else {
                    var[ch]
                };
                stats.mean[ch] = (T::one() - mom) * stats.mean[ch] + mom * mean[ch];
                stats.var[ch] = (T::one() - mom) * stats.var[ch] + mom * unbiased;
            }
        } else {
            for ch in 0..c {
                mean[ch] = stats.mean[ch];
                inv_std[ch] = T::one() / (stats.var[ch] + eps).sqrt();
            }
        }

        let gv = self.value(gamma).data();
        let bv = self.value(beta).data();
        let mut xhat = vec![T::zero(); xv.len()];
        let mut out = vec![T::zero(); xv.len()];
        for n in 0..outer {
            for ch in 0..c {
                for i in 0..inner {
                    let idx = at(n, ch, i);
                    xhat[idx] = (xv[idx] - mean[ch]) * inv_std[ch];
                    out[idx] = gv[ch] * xhat[idx] + bv[ch];
                }
            }
        }
        let v = Tensor::from_vec(&shape, out);
        Ok(self.push(
            v,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                training,
            },
            &[x, gamma, beta],
        ))
    }
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn batch_norm_backward<T: Scalar>(
    x: Var,
    gamma: Var,
    beta: Var,
    xhat: &[T],
    inv_std: &[T],
    training: bool,
    g: &[T],
    acc: &mut GradAcc<'_, T>,
) {
    let (outer, c, inner) = layout(acc.value(x).shape());
    let at = |n: usize, ch: usize, i: usize| (n * c + ch) * inner + i;
    let mut sum_g = vec![T::zero(); c];
    let mut sum_gx = vec![T::zero(); c];
    for n in 0..outer {
        for ch in 0..c {
            for i in 0..inner {
                let idx = at(n, ch, i);
                sum_g[ch] = sum_g[ch] + g[idx];
                sum_gx[ch] = sum_gx[ch] + g[idx] * xhat[idx];
            }
        }
    }
    acc.add(gamma, &sum_gx);
    acc.add(beta, &sum_g);
    let gv = acc.value(gamma).data();
    let Some(gx) = acc.slot(x) else { return };
    let mt = T::from_usize(outer * inner).unwrap();
    for n in 0..outer {
        for ch in 0..c {
            let scale = gv[ch] * inv_std[ch];
            for i in 0..inner {
                let idx = at(n, ch, i);
                let d = if training {
                    scale / mt * (mt * g[idx] - sum_g[ch] - xhat[idx] * sum_gx[ch])
                } else {
                    scale * g[idx]
                };
                gx[idx] = gx[idx] + d;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn normalize(x: Vec<f64>, shape: &[usize], gamma: f64, beta: f64) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let c = shape[1];
        let mut tape = Tape::<f64>::new();
        let xv = tape.leaf(Tensor::from_vec(shape, x));
        let g = tape.leaf(Tensor::full(&[c], gamma));
        let b = tape.leaf(Tensor::full(&[c], beta));
        let (mut rm, mut rv) = (vec![0.0; c], vec![1.0; c]);
        let y = tape
            .batch_norm(
                xv,
                g,
                b,
                RunningStats { mean: &mut rm, var: &mut rv },
                true,
                BatchNormConfig::default(),
            )
            .unwrap();
        (tape.value(y).data().to_vec(), rm, rv)
    }

    #[test]
    fn training_mode_standardizes_features() {
        // Feature with mean 5 and variance 4: values 3 and 7.
        let (y, rm, rv) = normalize(vec![3.0, 7.0, 7.0, 3.0], &[4, 1], 1.0, 0.0);
        let mean = y.iter().sum::<f64>() / 4.0;
        let var = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 4.0;
        assert!(mean.abs() < 1e-4);
        assert!((var - 1.0).abs() < 1e-4);
        assert!((rm[0] - 0.5).abs() < 1e-12);
        // Unbiased variance 16/3 folded in with momentum 0.1.
        assert!((rv[0] - (0.9 + 0.1 * 16.0 / 3.0)).abs() < 1e-12);
    }

    #[test]
    fn zero_gamma_collapses_to_beta() {
        let (y, _, _) = normalize(vec![1.0, -4.0, 2.5, 9.0, 0.0, 3.0], &[3, 2], 0.0, 0.25);
        assert!(y.iter().all(|&v| v == 0.25));
    }

    #[test]
    fn single_constant_sample_stays_finite() {
        let (y, _, _) = normalize(vec![2.0, 2.0], &[1, 2], 1.0, 0.0);
        assert!(y.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn eval_mode_uses_running_statistics() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::from_vec(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]));
        let g = tape.leaf(Tensor::from_vec(&[2], vec![2.0, 0.5]));
        let b = tape.leaf(Tensor::from_vec(&[2], vec![0.1, -0.1]));
        let (mut rm, mut rv) = (vec![1.5, -1.0], vec![4.0, 0.25]);
        let y = tape
            .batch_norm(x, g, b, RunningStats { mean: &mut rm, var: &mut rv }, false, BatchNormConfig::default())
            .unwrap();
        let want = |x: f64, ch: usize| {
            let (gm, bt, m, v) = [(2.0, 0.1, 1.5, 4.0), (0.5, -0.1, -1.0, 0.25)][ch];
            gm * (x - m) / (v + 1e-5f64).sqrt() + bt
        };
        let got = tape.value(y).data();
        for (i, &xv) in [1.0, 2.0, 3.0, 4.0].iter().enumerate() {
            assert!((got[i] - want(xv, i % 2)).abs() < 1e-12);
        }
        assert_eq!(rm, vec![1.5, -1.0]);
    }
}
