use crate::scalar::Scalar;
use crate::tape::{GradAcc, Op, Tape, Var};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Sigmoid,
    Tanh,
    /// Normalized over the last axis.
    Softmax,
}

/// Logistic function, branching on sign so `exp` never overflows.
pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Softmax of one row, shifted by the row maximum.
pub fn softmax_row<T: Scalar>(row: &[T], out: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut total = T::zero();
    for (o, &v) in out.iter_mut().zip(row) {
        *o = (v - max).exp();
        total = total + *o;
    }
    for o in out.iter_mut() {
        *o = *o / total;
    }
}

pub fn apply<T: Scalar>(x: &Tensor<T>, kind: Activation) -> Tensor<T> {
    match kind {
        Activation::Relu => x.map(|v| if v > T::zero() { v } else { T::zero() }),
        Activation::Sigmoid => x.map(sigmoid),
        Activation::Tanh => x.map(|v| v.tanh()),
        Activation::Softmax => {
            let last = x.shape().last().copied().unwrap_or(1).max(1);
            let mut out = vec![T::zero(); x.numel()];
            for (src, dst) in x.data().chunks(last).zip(out.chunks_mut(last)) {
                softmax_row(src, dst);
            }
            Tensor::from_vec(x.shape(), out)
        }
    }
}

impl<T: Scalar> Tape<T> {
    pub fn activation(&mut self, x: Var, kind: Activation) -> Var {
        let v = apply(self.value(x), kind);
        self.push(v, Op::Activation { x, kind }, &[x])
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.activation(x, Activation::Relu)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.activation(x, Activation::Sigmoid)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.activation(x, Activation::Tanh)
    }

    pub fn softmax(&mut self, x: Var) -> Var {
        self.activation(x, Activation::Softmax)
    }
}

pub(crate) fn backward<T: Scalar>(
    x: Var,
    kind: Activation,
    out: &Tensor<T>,
    g: &[T],
    acc: &mut GradAcc<'_, T>,
) {
    let Some(gx) = acc.slot(x) else { return };
    let y = out.data();
    match kind {
        Activation::Relu => {
            for ((d, &gv), &yv) in gx.iter_mut().zip(g).zip(y) {
                if yv > T::zero() {
                    *d = *d + gv;
                }
            }
        }
        Activation::Sigmoid => {
            for ((d, &gv), &yv) in gx.iter_mut().zip(g).zip(y) {
                *d = *d + gv * yv * (T::one() - yv);
            }
        }
        Activation::Tanh => {
            for ((d, &gv), &yv) in gx.iter_mut().zip(g).zip(y) {
                *d = *d + gv * (T::one() - yv * yv);
            }
        }
        Activation::Softmax => {
            let last = out.shape().last().copied().unwrap_or(1).max(1);
            for ((dr, gr), yr) in gx.chunks_mut(last).zip(g.chunks(last)).zip(y.chunks(last)) {
                let dot: T = gr.iter().zip(yr).map(|(&a, &b)| a * b).sum();
                for ((d, &gv), &yv) in dr.iter_mut().zip(gr).zip(yr) {
                    *d = *d + yv * (gv - dot);
                }
            }
        }
    }
}
