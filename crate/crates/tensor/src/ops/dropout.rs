use crate::error::{Result, TensorError};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tape::{GradAcc, Op, Tape, Var};
use crate::tensor::Tensor;

impl<T: Scalar> Tape<T> {
    /// Inverted dropout. In training each element is zeroed with
    /// probability `p` and survivors are scaled by `1 / (1 - p)`; otherwise
    /// `x` is returned unchanged.
    pub fn dropout(&mut self, x: Var, p: f64, training: bool, rng: &mut Rng) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(TensorError::param("dropout", format!("p = {} outside [0, 1)", p)));
        }
        if !training || p == 0.0 {
            return Ok(x);
        }
        let keep = T::from_f64_lossy(1.0 / (1.0 - p));
        let mask: Vec<T> = (0..self.value(x).numel())
            .map(|_| if rng.bernoulli(p) { T::zero() } else { keep })
            .collect();
        let src = self.value(x);
        let data = src.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect();
        let v = Tensor::from_vec(src.shape(), data);
        Ok(self.push(v, Op::Dropout { x, mask }, &[x]))
    }
}

pub(crate) fn dropout_backward<T: Scalar>(x: Var, mask: &[T], g: &[T], acc: &mut GradAcc<'_, T>) {
    if let Some(gx) = acc.slot(x) {
        for ((d, &gv), &m) in gx.iter_mut().zip(g).zip(mask) {
            *d = *d + gv * m;
        }
    }
}
