//! 2-d cross-correlation (no kernel flip), dense and depthwise.

use crate::error::{Result, TensorError};
use crate::scalar::Scalar;
use crate::tape::{GradAcc, Op, Tape, Var};
use crate::tensor::Tensor;

/// Spatial geometry shared by the forward and backward passes.
#[derive(Debug, Clone, Copy)]
struct Geometry {
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

impl Geometry {
    fn new(
        op: &'static str,
        input: [usize; 4],
        kernel: (usize, usize),
        stride: usize,
        pad: usize,
    ) -> Result<Self> {
        let [_, c, h, w] = input;
        let (kh, kw) = kernel;
        if stride == 0 {
            return Err(TensorError::param(op, "stride must be >= 1"));
        }
        if kh > h + 2 * pad || kw > w + 2 * pad {
            return Err(TensorError::dim(
                op,
                format!("kernel {}x{} larger than padded input {}x{} (pad {})", kh, kw, h, w, pad),
            ));
        }
        Ok(Geometry {
            c,
            h,
            w,
            kh,
            kw,
            stride,
            pad,
            ho: (h + 2 * pad - kh) / stride + 1,
            wo: (w + 2 * pad - kw) / stride + 1,
        })
    }

    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad == 0
    }

    fn taps(&self) -> usize {
        self.c * self.kh * self.kw
    }

    fn positions(&self) -> usize {
        self.ho * self.wo
    }

    /// Input coordinate for output `o` and kernel offset `k`, if inside.
    #[inline]
    fn source(&self, o: usize, k: usize, extent: usize) -> Option<usize> {
        let pos = (o * self.stride + k).checked_sub(self.pad)?;
        (pos < extent).then_some(pos)
    }
}

/// Unfolds one `[C, H, W]` image into `[C*kh*kw, Ho*Wo]` columns.
fn im2col<T: Scalar>(g: &Geometry, img: &[T], cols: &mut [T]) {
    let p = g.positions();
    for ch in 0..g.c {
        let plane = &img[ch * g.h * g.w..(ch + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = ((ch * g.kh + ki) * g.kw + kj) * p;
                for oy in 0..g.ho {
                    let dst = &mut cols[row + oy * g.wo..row + (oy + 1) * g.wo];
                    match g.source(oy, ki, g.h) {
                        None => dst.fill(T::zero()),
                        Some(iy) => {
                            for (ox, d) in dst.iter_mut().enumerate() {
                                *d = match g.source(ox, kj, g.w) {
                                    Some(ix) => plane[iy * g.w + ix],
                                    None => T::zero(),
                                };
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters column gradients back onto the image.
fn col2im<T: Scalar>(g: &Geometry, cols: &[T], img: &mut [T]) {
    let p = g.positions();
    for ch in 0..g.c {
        let plane = &mut img[ch * g.h * g.w..(ch + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = ((ch * g.kh + ki) * g.kw + kj) * p;
                for oy in 0..g.ho {
                    let Some(iy) = g.source(oy, ki, g.h) else { continue };
                    for ox in 0..g.wo {
                        if let Some(ix) = g.source(ox, kj, g.w) {
                            let d = &mut plane[iy * g.w + ix];
                            *d = *d + cols[row + oy * g.wo + ox];
                        }
                    }
                }
            }
        }
    }
}

impl<T: Scalar> Tape<T> {
    /// Dense convolution: `x: [N, C, H, W]`, `weight: [O, C, kh, kw]`,
    /// `bias: [O]`.
    pub fn conv2d(&mut self, x: Var, weight: Var, bias: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        let dims = self.value(x).dims4("conv2d")?;
        let [o, wc, kh, kw] = self.value(weight).dims4("conv2d")?;
        if wc != dims[1] {
            return Err(TensorError::dim(
                "conv2d",
                format!("weight {:?} expects {} channels, input {:?}", self.shape(weight), wc, dims),
            ));
        }
        if let Some(b) = bias {
            if self.shape(b) != [o] {
                return Err(TensorError::dim(
                    "conv2d",
                    format!("bias {:?} does not match {} filters", self.shape(b), o),
                ));
            }
        }
        let g = Geometry::new("conv2d", dims, (kh, kw), stride, pad)?;
        let n = dims[0];
        let (k, p) = (g.taps(), g.positions());
        let xv = self.value(x).data();
        let wv = self.value(weight).data();
        let mut out = vec![T::zero(); n * o * p];
        if let Some(b) = bias {
            for (idx, row) in out.chunks_mut(p).enumerate() {
                row.fill(self.value(b).data()[idx % o]);
            }
        }
        let mut cols = vec![T::zero(); if g.is_pointwise() { 0 } else { k * p }];
        let img = g.c * g.h * g.w;
        for (s, dst) in out.chunks_mut(o * p).enumerate() {
            let src = &xv[s * img..(s + 1) * img];
            let cols_ref = if g.is_pointwise() {
                src
            } else {
                im2col(&g, src, &mut cols);
                &cols
            };
            T::gemm(o, k, p, wv, false, cols_ref, false, dst, T::one());
        }
        let v = Tensor::from_vec(&[n, o, g.ho, g.wo], out);
        let inputs: Vec<Var> = [Some(x), Some(weight), bias].into_iter().flatten().collect();
        Ok(self.push(
            v,
            Op::Conv2d {
                x,
                w: weight,
                b: bias,
                stride,
                pad,
            },
            &inputs,
        ))
    }

    /// Per-channel convolution: `weight: [C, 1, kh, kw]`; channels never mix.
    pub fn depthwise_conv2d(&mut self, x: Var, weight: Var, stride: usize, pad: usize) -> Result<Var> {
        let dims = self.value(x).dims4("depthwise_conv2d")?;
        let [wc, one, kh, kw] = self.value(weight).dims4("depthwise_conv2d")?;
        if wc != dims[1] || one != 1 {
            return Err(TensorError::dim(
                "depthwise_conv2d",
                format!("weight {:?} does not match input channels {}", self.shape(weight), dims[1]),
            ));
        }
        let g = Geometry::new("depthwise_conv2d", dims, (kh, kw), stride, pad)?;
        let n = dims[0];
        let xv = self.value(x).data();
        let wv = self.value(weight).data();
        let (hw, p, kk) = (g.h * g.w, g.positions(), kh * kw);
        let mut out = vec![T::zero(); n * g.c * p];
        for (plane_idx, dst) in out.chunks_mut(p).enumerate() {
            let ch = plane_idx % g.c;
            let src = &xv[plane_idx * hw..(plane_idx + 1) * hw];
            let ker = &wv[ch * kk..(ch + 1) * kk];
            for oy in 0..g.ho {
                for ox in 0..g.wo {
                    let mut acc = T::zero();
                    for ki in 0..kh {
                        let Some(iy) = g.source(oy, ki, g.h) else { continue };
                        for kj in 0..kw {
                            if let Some(ix) = g.source(ox, kj, g.w) {
                                acc = acc + src[iy * g.w + ix] * ker[ki * kw + kj];
                            }
                        }
                    }
                    dst[oy * g.wo + ox] = acc;
                }
            }
        }
        let v = Tensor::from_vec(&[n, g.c, g.ho, g.wo], out);
        Ok(self.push(
            v,
            Op::DepthwiseConv2d {
                x,
                w: weight,
                stride,
                pad,
            },
            &[x, weight],
        ))
    }
}

pub(crate) fn conv2d_backward<T: Scalar>(
    x: Var,
    w: Var,
    b: Option<Var>,
    stride: usize,
    pad: usize,
    grad: &[T],
    acc: &mut GradAcc<'_, T>,
) {
    let (xv, wv) = (acc.value(x), acc.value(w));
    let dims = [xv.shape()[0], xv.shape()[1], xv.shape()[2], xv.shape()[3]];
    let (o, kh, kw) = (wv.shape()[0], wv.shape()[2], wv.shape()[3]);
    let g = Geometry::new("conv2d", dims, (kh, kw), stride, pad).expect("validated in forward");
    let (n, k, p) = (dims[0], g.taps(), g.positions());
    let img = g.c * g.h * g.w;

    if let Some(bv) = b {
        if acc.wants(bv) {
            let mut gb = vec![T::zero(); o];
            for (idx, row) in grad.chunks(p).enumerate() {
                gb[idx % o] = gb[idx % o] + row.iter().copied().sum();
            }
            acc.add(bv, &gb);
        }
    }

    let want_w = acc.wants(w);
    let pointwise = g.is_pointwise();
    if want_w {
        let mut gw = vec![T::zero(); o * k];
        let mut cols = vec![T::zero(); if pointwise { 0 } else { k * p }];
        for s in 0..n {
            let src = &xv.data()[s * img..(s + 1) * img];
            let cols_ref = if pointwise {
                src
            } else {
                im2col(&g, src, &mut cols);
                &cols
            };
            let gs = &grad[s * o * p..(s + 1) * o * p];
            T::gemm(o, p, k, gs, false, cols_ref, true, &mut gw, T::one());
        }
        acc.add(w, &gw);
    }

    if let Some(gx) = acc.slot(x) {
        let mut dcols = vec![T::zero(); if pointwise { 0 } else { k * p }];
        for s in 0..n {
            let gs = &grad[s * o * p..(s + 1) * o * p];
            let dst = &mut gx[s * img..(s + 1) * img];
            if pointwise {
                T::gemm(k, o, p, wv.data(), true, gs, false, dst, T::one());
            } else {
                T::gemm(k, o, p, wv.data(), true, gs, false, &mut dcols, T::zero());
                col2im(&g, &dcols, dst);
            }
        }
    }
}

pub(crate) fn depthwise_backward<T: Scalar>(
    x: Var,
    w: Var,
    stride: usize,
    pad: usize,
    out: &Tensor<T>,
    grad: &[T],
    acc: &mut GradAcc<'_, T>,
) {
    let (xv, wv) = (acc.value(x), acc.value(w));
    let dims = [xv.shape()[0], xv.shape()[1], xv.shape()[2], xv.shape()[3]];
    let (kh, kw) = (wv.shape()[2], wv.shape()[3]);
    let g = Geometry::new("depthwise_conv2d", dims, (kh, kw), stride, pad).expect("validated in forward");
    let (hw, p, kk) = (g.h * g.w, g.positions(), kh * kw);
    debug_assert_eq!(out.numel(), dims[0] * g.c * p);
    let planes = dims[0] * g.c;

    if acc.wants(w) {
        let mut gw = vec![T::zero(); g.c * kk];
        for plane_idx in 0..planes {
            let ch = plane_idx % g.c;
            let src = &xv.data()[plane_idx * hw..(plane_idx + 1) * hw];
            let gp = &grad[plane_idx * p..(plane_idx + 1) * p];
            for oy in 0..g.ho {
                for ox in 0..g.wo {
                    let gv = gp[oy * g.wo + ox];
                    for ki in 0..kh {
                        let Some(iy) = g.source(oy, ki, g.h) else { continue };
                        for kj in 0..kw {
                            if let Some(ix) = g.source(ox, kj, g.w) {
                                let d = &mut gw[ch * kk + ki * kw + kj];
                                *d = *d + gv * src[iy * g.w + ix];
                            }
                        }
                    }
                }
            }
        }
        acc.add(w, &gw);
    }

    if let Some(gx) = acc.slot(x) {
        for plane_idx in 0..planes {
            let ch = plane_idx % g.c;
            let ker = &wv.data()[ch * kk..(ch + 1) * kk];
            let gp = &grad[plane_idx * p..(plane_idx + 1) * p];
            let dst = &mut gx[plane_idx * hw..(plane_idx + 1) * hw];
            for oy in 0..g.ho {
                for ox in 0..g.wo {
                    let gv = gp[oy * g.wo + ox];
                    for ki in 0..kh {
                        let Some(iy) = g.source(oy, ki, g.h) else { continue };
                        for kj in 0..kw {
                            if let Some(ix) = g.source(ox, kj, g.w) {
                                let d = &mut dst[iy * g.w + ix];
                                *d = *d + gv * ker[ki * kw + kj];
                            }
                        }
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scalar_kernel_scales_input() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::ones(&[1, 1, 3, 3]));
        let w = tape.constant(Tensor::full(&[1, 1, 1, 1], 2.0));
        let y = tape.conv2d(x, w, None, 1, 0).unwrap();
        assert_eq!(tape.shape(y), &[1, 1, 3, 3]);
        assert!(tape.value(y).data().iter().all(|&v| v == 2.0));
    }

    #[test]
    fn same_padding_preserves_spatial_size() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::ones(&[1, 1, 4, 4]));
        let w = tape.constant(Tensor::ones(&[1, 1, 3, 3]));
        let y = tape.conv2d(x, w, None, 1, 1).unwrap();
        assert_eq!(tape.shape(y), &[1, 1, 4, 4]);
        // Corner sees a 2x2 patch, centre a full 3x3.
        assert_eq!(tape.value(y).data()[0], 4.0);
        assert_eq!(tape.value(y).data()[5], 9.0);
    }

    #[test]
    fn output_extent_formula() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::zeros(&[2, 3, 31, 17]));
        let w = tape.constant(Tensor::zeros(&[5, 3, 3, 3]));
        let y = tape.conv2d(x, w, None, 2, 0).unwrap();
        assert_eq!(tape.shape(y), &[2, 5, 15, 8]);
    }

    #[test]
    fn oversized_kernel_is_rejected() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::zeros(&[1, 1, 2, 2]));
        let w = tape.constant(Tensor::zeros(&[1, 1, 3, 3]));
        assert!(matches!(
            tape.conv2d(x, w, None, 1, 0),
            Err(TensorError::Dimension { .. })
        ));
        assert!(tape.conv2d(x, w, None, 1, 1).is_ok());
    }

    #[test]
    fn depthwise_channels_are_isolated() {
        let mut tape = Tape::<f64>::new();
        let data: Vec<f64> = (0..2 * 9).map(|i| i as f64 + 1.0).collect();
        let x = tape.constant(Tensor::from_vec(&[1, 2, 3, 3], data));
        let mut kernel = vec![0.0; 9];
        kernel.extend(vec![1.0; 9]);
        let w = tape.constant(Tensor::from_vec(&[2, 1, 3, 3], kernel));
        let y = tape.depthwise_conv2d(x, w, 1, 1).unwrap();
        let out = tape.value(y).data();
        assert!(out[..9].iter().all(|&v| v == 0.0));
        assert!(out[9..].iter().all(|&v| v > 0.0));
    }

    #[test]
    fn depthwise_rejects_channel_mismatch() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::zeros(&[1, 3, 4, 4]));
        let w = tape.constant(Tensor::zeros(&[2, 1, 3, 3]));
        assert!(tape.depthwise_conv2d(x, w, 1, 1).is_err());
    }
}
