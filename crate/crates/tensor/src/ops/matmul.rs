use crate::error::{Result, TensorError};
use crate::scalar::Scalar;
use crate::tape::{GradAcc, Op, Tape, Var};
use crate::tensor::Tensor;

impl<T: Scalar> Tape<T> {
    /// Matrix product of `[m, k]` and `[k, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let [m, k] = self.value(a).dims2("matmul")?;
        let [k2, n] = self.value(b).dims2("matmul")?;
        if k != k2 {
            return Err(TensorError::dim(
                "matmul",
                format!("inner extents differ: {:?} x {:?}", self.shape(a), self.shape(b)),
            ));
        }
        let mut out = vec![T::zero(); m * n];
        T::gemm(m, k, n, self.value(a).data(), false, self.value(b).data(), false, &mut out, T::zero());
        let v = Tensor::from_vec(&[m, n], out);
        Ok(self.push(v, Op::MatMul { a, b }, &[a, b]))
    }

    /// `x W^T + b` with `x: [n, in]`, `W: [out, in]`, `b: [out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let [n, fan_in] = self.value(x).dims2("linear")?;
        let [out_f, w_in] = self.value(w).dims2("linear")?;
        if fan_in != w_in {
            return Err(TensorError::dim(
                "linear",
                format!("input {:?} does not match weight {:?}", self.shape(x), self.shape(w)),
            ));
        }
        let mut out = vec![T::zero(); n * out_f];
        if let Some(b) = b {
            let bias = self.value(b);
            if bias.shape() != [out_f] {
                return Err(TensorError::dim(
                    "linear",
                    format!("bias {:?} does not match {} outputs", bias.shape(), out_f),
                ));
            }
            for row in out.chunks_mut(out_f) {
                row.copy_from_slice(bias.data());
            }
        }
        T::gemm(n, fan_in, out_f, self.value(x).data(), false, self.value(w).data(), true, &mut out, T::one());
        let v = Tensor::from_vec(&[n, out_f], out);
        let inputs: Vec<Var> = [Some(x), Some(w), b].into_iter().flatten().collect();
        Ok(self.push(v, Op::Linear { x, w, b }, &inputs))
    }
}

pub(crate) fn matmul_backward<T: Scalar>(a: Var, b: Var, g: &[T], acc: &mut GradAcc<'_, T>) {
    let (va, vb) = (acc.value(a), acc.value(b));
    let (m, k) = (va.shape()[0], va.shape()[1]);
    let n = vb.shape()[1];
    if let Some(ga) = acc.slot(a) {
        T::gemm(m, n, k, g, false, vb.data(), true, ga, T::one());
    }
    if let Some(gb) = acc.slot(b) {
        T::gemm(k, m, n, va.data(), true, g, false, gb, T::one());
    }
}

pub(crate) fn linear_backward<T: Scalar>(
    x: Var,
    w: Var,
    b: Option<Var>,
    g: &[T],
    acc: &mut GradAcc<'_, T>,
) {
    let (vx, vw) = (acc.value(x), acc.value(w));
    let (n, fan_in) = (vx.shape()[0], vx.shape()[1]);
    let out_f = vw.shape()[0];
    if let Some(gx) = acc.slot(x) {
        T::gemm(n, out_f, fan_in, g, false, vw.data(), false, gx, T::one());
    }
    if let Some(gw) = acc.slot(w) {
        T::gemm(out_f, n, fan_in, g, true, vx.data(), false, gw, T::one());
    }
    if let Some(gb) = b.and_then(|b| acc.slot(b)) {
        for row in g.chunks(out_f) {
            for (d, &v) in gb.iter_mut().zip(row) {
                *d = *d + v;
            }
        }
    }
}
