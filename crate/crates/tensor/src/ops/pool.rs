use crate::error::{Result, TensorError};
use crate::scalar::Scalar;
use crate::tape::{GradAcc, Op, Tape, Var};
use crate::tensor::Tensor;

impl<T: Scalar> Tape<T> {
    /// Max pooling with a square `k x k` window (floor mode, no padding).
    pub fn max_pool2d(&mut self, x: Var, k: usize, stride: usize) -> Result<Var> {
        let [n, c, h, w] = self.value(x).dims4("max_pool2d")?;
        if k == 0 || stride == 0 {
            return Err(TensorError::param("max_pool2d", "window and stride must be >= 1"));
        }
        if k > h || k > w {
            return Err(TensorError::dim(
                "max_pool2d",
                format!("window {} exceeds input {}x{}", k, h, w),
            ));
        }
        let (ho, wo) = ((h - k) / stride + 1, (w - k) / stride + 1);
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(n * c * ho * wo);
        let mut argmax = Vec::with_capacity(n * c * ho * wo);
        for plane in 0..n * c {
            let base = plane * h * w;
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut best = base + oy * stride * w + ox * stride;
                    for i in 0..k {
                        for j in 0..k {
                            let idx = base + (oy * stride + i) * w + ox * stride + j;
                            if src[idx] > src[best] {
                                best = idx;
                            }
                        }
                    }
                    out.push(src[best]);
                    argmax.push(best);
                }
            }
        }
        let v = Tensor::from_vec(&[n, c, ho, wo], out);
        Ok(self.push(v, Op::MaxPool { x, argmax }, &[x]))
    }

    /// Mean over the spatial axes: `[N, C, H, W] -> [N, C]`.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let [n, c, h, w] = self.value(x).dims4("global_avg_pool")?;
        let hw = h * w;
        if hw == 0 {
            return Err(TensorError::dim("global_avg_pool", "empty spatial extent"));
        }
        let denom = T::from_usize(hw).unwrap();
        let out = self
            .value(x)
            .data()
            .chunks(hw)
            .map(|plane| plane.iter().copied().sum::<T>() / denom)
            .collect();
        let v = Tensor::from_vec(&[n, c], out);
        Ok(self.push(v, Op::GlobalAvgPool { x }, &[x]))
    }
}

pub(crate) fn max_pool_backward<T: Scalar>(x: Var, argmax: &[usize], g: &[T], acc: &mut GradAcc<'_, T>) {
    if let Some(gx) = acc.slot(x) {
        for (&idx, &gv) in argmax.iter().zip(g) {
            gx[idx] = gx[idx] + gv;
        }
    }
}

pub(crate) fn global_avg_backward<T: Scalar>(x: Var, g: &[T], acc: &mut GradAcc<'_, T>) {
    let shape = acc.value(x).shape();
    let hw = shape[2] * shape[3];
    let denom = T::from_usize(hw).unwrap();
    if let Some(gx) = acc.slot(x) {
        for (plane, &gv) in gx.chunks_mut(hw).zip(g) {
            let share = gv / denom;
            for d in plane.iter_mut() {
                *d = *d + share;
            }
        }
    }
}
