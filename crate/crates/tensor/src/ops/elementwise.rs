//! Elementwise arithmetic, reductions and shape plumbing.

use crate::error::{Result, TensorError};
use crate::scalar::Scalar;
use crate::tape::{GradAcc, Op, Tape, Var};
use crate::tensor::{numel, Tensor};

impl<T: Scalar> Tape<T> {
    fn zip_same(&self, op: &'static str, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(TensorError::dim(
                op,
                format!("operands {:?} and {:?} differ", va.shape(), vb.shape()),
            ));
        }
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        Ok(Tensor::from_vec(va.shape(), data))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.zip_same("add", a, b, |x, y| x + y)?;
        Ok(self.push(v, Op::Add { a, b }, &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.zip_same("sub", a, b, |x, y| x - y)?;
        Ok(self.push(v, Op::Sub { a, b }, &[a, b]))
    }

    /// Hadamard product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.zip_same("mul", a, b, |x, y| x * y)?;
        Ok(self.push(v, Op::Mul { a, b }, &[a, b]))
    }

    /// `mul * x + add`, elementwise.
    pub fn affine(&mut self, x: Var, mul: T, add: T) -> Var {
        let v = self.value(x).map(|e| mul * e + add);
        self.push(v, Op::Affine { x, mul }, &[x])
    }

    pub fn scale(&mut self, x: Var, s: T) -> Var {
        self.affine(x, s, T::zero())
    }

    /// `1 - x`.
    pub fn one_minus(&mut self, x: Var) -> Var {
        self.affine(x, -T::one(), T::one())
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let v = Tensor::scalar(self.value(x).sum());
        self.push(v, Op::Sum { x }, &[x])
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = T::from_usize(self.value(x).numel()).unwrap();
        let v = Tensor::scalar(self.value(x).sum() / n);
        self.push(v, Op::Mean { x }, &[x])
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let v = self.value(x).reshape(shape)?;
        Ok(self.push(v, Op::Reshape { x }, &[x]))
    }

    /// `[a, b, rest..] -> [b, a, rest..]`.
    pub fn swap_leading(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x).swap_leading()?;
        Ok(self.push(v, Op::SwapLeading { x }, &[x]))
    }

    /// Rows `start..start + len` along the first axis.
    pub fn narrow(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let src = self.value(x);
        let Some(&rows) = src.shape().first() else {
            return Err(TensorError::dim("narrow", "scalar input"));
        };
        if start + len > rows {
            return Err(TensorError::dim(
                "narrow",
                format!("rows {}..{} out of range for {:?}", start, start + len, src.shape()),
            ));
        }
        let inner = numel(&src.shape()[1..]);
        let mut shape = src.shape().to_vec();
        shape[0] = len;
        let data = src.data()[start * inner..(start + len) * inner].to_vec();
        let v = Tensor::from_vec(&shape, data);
        Ok(self.push(v, Op::Narrow { x, start }, &[x]))
    }

    /// Concatenation along axis 1 (channels for `[N, C, ..]`).
    pub fn concat_channels(&mut self, parts: &[Var]) -> Result<Var> {
        let first = self
            .value(*parts.first().ok_or_else(|| TensorError::dim("concat", "no inputs"))?)
            .shape()
            .to_vec();
        if first.len() < 2 {
            return Err(TensorError::dim("concat", format!("need >= 2 axes, got {:?}", first)));
        }
        let mut channels = 0;
        for &p in parts {
            let s = self.value(p).shape();
            if s.len() != first.len() || s[0] != first[0] || s[2..] != first[2..] {
                return Err(TensorError::dim(
                    "concat",
                    format!("incompatible shapes {:?} and {:?}", first, s),
                ));
            }
            channels += s[1];
        }
        let outer = first[0];
        let inner = numel(&first[2..]);
        let mut data = Vec::with_capacity(outer * channels * inner);
        for n in 0..outer {
            for &p in parts {
                let v = self.value(p);
                let block = v.shape()[1] * inner;
                data.extend_from_slice(&v.data()[n * block..(n + 1) * block]);
            }
        }
        let mut shape = first;
        shape[1] = channels;
        let v = Tensor::from_vec(&shape, data);
        Ok(self.push(v, Op::Concat { parts: parts.to_vec() }, parts))
    }
}

pub(crate) fn backward<T: Scalar>(op: &Op<T>, _out: &Tensor<T>, g: &[T], acc: &mut GradAcc<'_, T>) {
    match op {
        Op::Add { a, b } => {
            acc.add(*a, g);
            acc.add(*b, g);
        }
        Op::Sub { a, b } => {
            acc.add(*a, g);
            if let Some(s) = acc.slot(*b) {
                for (d, &x) in s.iter_mut().zip(g) {
                    *d = *d - x;
                }
            }
        }
        Op::Mul { a, b } => {
            let (a, b) = (*a, *b);
            if acc.wants(a) {
                let gb: Vec<T> = g.iter().zip(acc.value(b).data()).map(|(&x, &y)| x * y).collect();
                acc.add(a, &gb);
            }
            if acc.wants(b) {
                let ga: Vec<T> = g.iter().zip(acc.value(a).data()).map(|(&x, &y)| x * y).collect();
                acc.add(b, &ga);
            }
        }
        Op::Affine { x, mul } => {
            let gx: Vec<T> = g.iter().map(|&v| v * *mul).collect();
            acc.add(*x, &gx);
        }
        Op::Reshape { x } => acc.add(*x, g),
        Op::SwapLeading { x } => {
            let shape = acc.value(*x).shape().to_vec();
            let (a, b) = (shape[0], shape[1]);
            let inner = numel(&shape[2..]);
            if let Some(s) = acc.slot(*x) {
                // g is laid out [b, a, inner]; the input is [a, b, inner].
                for j in 0..b {
                    for i in 0..a {
                        let src = (j * a + i) * inner;
                        let dst = (i * b + j) * inner;
                        for k in 0..inner {
                            s[dst + k] = s[dst + k] + g[src + k];
                        }
                    }
                }
            }
        }
        Op::Narrow { x, start } => {
            let inner = numel(&acc.value(*x).shape()[1..]);
            if let Some(s) = acc.slot(*x) {
                let off = start * inner;
                for (d, &v) in s[off..off + g.len()].iter_mut().zip(g) {
                    *d = *d + v;
                }
            }
        }
        Op::Concat { parts } => {
            let shape0 = acc.value(parts[0]).shape().to_vec();
            let outer = shape0[0];
            let inner = numel(&shape0[2..]);
            let total: usize = parts.iter().map(|&p| acc.value(p).shape()[1]).sum();
            let mut offset = 0;
            for &p in parts {
                let ch = acc.value(p).shape()[1];
                let block = ch * inner;
                if let Some(s) = acc.slot(p) {
                    for n in 0..outer {
                        let src = n * total * inner + offset * inner;
                        for k in 0..block {
                            s[n * block + k] = s[n * block + k] + g[src + k];
                        }
                    }
                }
                offset += ch;
            }
        }
        Op::Sum { x } => {
            let g0 = g[0];
            if let Some(s) = acc.slot(*x) {
                for d in s.iter_mut() {
                    *d = *d + g0;
                }
            }
        }
        Op::Mean { x } => {
            let n = T::from_usize(acc.value(*x).numel()).unwrap();
            let g0 = g[0] / n;
            if let Some(s) = acc.slot(*x) {
                for d in s.iter_mut() {
                    *d = *d + g0;
                }
            }
        }
        _ => unreachable!("not an elementwise op"),
    }
}
