#![allow(dead_code)]

use xint_core::heads::{gru_cell, GruParams};
use xint_core::nn::{ParamStore, Session};
use xint_core::Result;
use xint_tensor::{Rng, Tensor, Var};

/// Runs `f` in a fresh session and returns the value of the var it yields.
pub fn eval<T, F>(store: &mut ParamStore<T>, training: bool, f: F) -> Tensor<T>
where
    T: xint_tensor::Scalar,
    F: FnOnce(&mut Session<'_, T>) -> Result<Var>,
{
    let mut s = Session::new(store, training, Rng::new(0));
    let v = f(&mut s).unwrap();
    s.tape.value(v).clone()
}

pub fn param(store: &ParamStore<f64>, name: &str) -> Tensor<f64> {
    let id = store.find_param(name).unwrap_or_else(|| panic!("no param {}", name));
    store.param(id).value.clone()
}

/// Grouped 2-d convolution by direct summation, NCHW.
pub fn naive_conv(x: &Tensor<f64>, w: &Tensor<f64>, b: Option<&Tensor<f64>>, groups: usize, stride: usize, pad: usize) -> Tensor<f64> {
    let (n, c, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (o, cg, kh, kw) = (w.shape()[0], w.shape()[1], w.shape()[2], w.shape()[3]);
    assert_eq!(c, cg * groups);
    let og = o / groups;
    let ho = (h + 2 * pad - kh) / stride + 1;
    let wo = (wd + 2 * pad - kw) / stride + 1;
    let mut out = vec![0.0; n * o * ho * wo];
    for bi in 0..n {
        for oc in 0..o {
            let grp = oc / og;
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut s = b.map_or(0.0, |b| b.data()[oc]);
                    for ic in 0..cg {
                        let ch = grp * cg + ic;
                        for i in 0..kh {
                            for j in 0..kw {
                                let iy = (oy * stride + i) as isize - pad as isize;
                                let ix = (ox * stride + j) as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                    continue;
                                }
                                s += x.data()[((bi * c + ch) * h + iy as usize) * wd + ix as usize]
                                    * w.data()[((oc * cg + ic) * kh + i) * kw + j];
                            }
                        }
                    }
                    out[((bi * o + oc) * ho + oy) * wo + ox] = s;
                }
            }
        }
    }
    Tensor::from_vec(&[n, o, ho, wo], out)
}

pub fn relu(t: &Tensor<f64>) -> Tensor<f64> {
    t.map(|v| v.max(0.0))
}

/// Concatenates two NCHW tensors along channels.
pub fn concat_channels(a: &Tensor<f64>, b: &Tensor<f64>) -> Tensor<f64> {
    let (n, ca, h, w) = (a.shape()[0], a.shape()[1], a.shape()[2], a.shape()[3]);
    let cb = b.shape()[1];
    let mut out = Vec::with_capacity(n * (ca + cb) * h * w);
    for i in 0..n {
        out.extend_from_slice(&a.data()[i * ca * h * w..(i + 1) * ca * h * w]);
        out.extend_from_slice(&b.data()[i * cb * h * w..(i + 1) * cb * h * w]);
    }
    Tensor::from_vec(&[n, ca + cb, h, w], out)
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Largest relative error between the tape gradient and central differences
/// of `sum(features * c)` for a whole backbone, over `coords` sampled input
/// coordinates and `coords` sampled parameter coordinates.
///
/// Every parameter and batch-norm statistic is jittered first, so zero
/// biases do not park ReLU inputs exactly on the kink. Batch norm runs on
/// its running statistics: with batch statistics over the one-pixel maps
/// of the last stages the objective is too curved for a 1e-5 step.
pub fn backbone_gradcheck(cfg: &xint_core::backbone::BackboneConfig, batch: usize, coords: usize, seed: u64) -> f64 {
    use xint_core::backbone::Backbone;
    use xint_tensor::gradcheck::{random_tensor, rel_err};

    let h = 1e-5;
    let mut rng = Rng::new(seed);
    let mut store = ParamStore::<f64>::new(seed);
    let bb = Backbone::new(&mut store, "bb", cfg).unwrap();
    for p in store.params_mut() {
        for v in p.value.data_mut() {
            *v += rng.uniform_range(-0.05, 0.05);
        }
    }
    for b in store.buffers_mut() {
        let (lo, hi) = if b.name.ends_with("running_var") { (0.5, 1.5) } else { (-0.1, 0.1) };
        for v in b.value.data_mut() {
            *v = rng.uniform_range(lo, hi);
        }
    }
    let (ih, iw) = cfg.input_size;
    let x = random_tensor(&[batch, 3, ih, iw], 1.0, &mut rng);
    let c = random_tensor(&[batch, 512], 1.0, &mut rng);

    let objective = |store: &mut ParamStore<f64>, x: &Tensor<f64>| -> f64 {
        let mut s = Session::new(store, false, Rng::new(0));
        let xv = s.tape.constant(x.clone());
        let f = bb.forward(&mut s, xv).unwrap();
        let cv = s.tape.constant(c.clone());
        let p = s.tape.mul(f, cv).unwrap();
        let out = s.tape.sum(p);
        s.tape.value(out).item()
    };

    let input_grad = {
        let mut s = Session::new(&mut store, false, Rng::new(0));
        let xv = s.tape.leaf(x.clone());
        let f = bb.forward(&mut s, xv).unwrap();
        let cv = s.tape.constant(c.clone());
        let p = s.tape.mul(f, cv).unwrap();
        let out = s.tape.sum(p);
        s.tape.backward(out).unwrap();
        s.accumulate_grads();
        s.tape.grad(xv).unwrap().clone()
    };

    // A coordinate whose +h and -h one-sided slopes disagree straddles a
    // ReLU or max-pool kink; it is redrawn instead of compared.
    let f0 = objective(&mut store, &x);
    let smooth = |fp: f64, fm: f64| rel_err((fp - f0) / h, (f0 - fm) / h) < 1e-2;
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    while checked < coords {
        let j = rng.below(x.numel());
        let mut xp = x.clone();
        xp.data_mut()[j] += h;
        let fp = objective(&mut store, &xp);
        xp.data_mut()[j] -= 2.0 * h;
        let fm = objective(&mut store, &xp);
        if smooth(fp, fm) {
            worst = worst.max(rel_err(input_grad.data()[j], (fp - fm) / (2.0 * h)));
            checked += 1;
        }
    }
    let grads: Vec<Tensor<f64>> = store.params().iter().map(|p| p.grad.clone().unwrap()).collect();
    checked = 0;
    while checked < coords {
        let i = rng.below(grads.len());
        let j = rng.below(grads[i].numel());
        let orig = store.params()[i].value.data()[j];
        store.params_mut()[i].value.data_mut()[j] = orig + h;
        let fp = objective(&mut store, &x);
        store.params_mut()[i].value.data_mut()[j] = orig - h;
        let fm = objective(&mut store, &x);
        store.params_mut()[i].value.data_mut()[j] = orig;
        if smooth(fp, fm) {
            worst = worst.max(rel_err(grads[i].data()[j], (fp - fm) / (2.0 * h)));
            checked += 1;
        }
    }
    worst
}

/// Five input geometries per backbone kind: `(width, side, batch)`.
pub const BACKBONE_GRAD_CASES: [(f64, usize, usize); 5] = [(0.25, 33, 2), (0.25, 40, 1), (0.5, 35, 2), (0.25, 48, 2), (1.0, 32, 2)];

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// `M v` with `M` stored row-major `[rows, cols]`.
pub fn matvec(m: &[f64], v: &[f64]) -> Vec<f64> {
    m.chunks(v.len()).map(|row| row.iter().zip(v).map(|(a, b)| a * b).sum()).collect()
}

pub struct RawGru {
    pub w: [Vec<f64>; 3],
    pub u: [Vec<f64>; 3],
    pub b: [Vec<f64>; 3],
}

/// The GRU update evaluated one sample at a time.
pub fn gru_reference(p: &RawGru, x: &[f64], h: &[f64]) -> Vec<f64> {
    let gate = |k: usize, hv: &[f64]| -> Vec<f64> {
        let wx = matvec(&p.w[k], x);
        let uh = matvec(&p.u[k], hv);
        (0..h.len()).map(|i| wx[i] + uh[i] + p.b[k][i]).collect()
    };
    let z: Vec<f64> = gate(0, h).into_iter().map(sigmoid).collect();
    let r: Vec<f64> = gate(1, h).into_iter().map(sigmoid).collect();
    let rh: Vec<f64> = r.iter().zip(h).map(|(a, b)| a * b).collect();
    let c: Vec<f64> = gate(2, &rh).into_iter().map(f64::tanh).collect();
    (0..h.len()).map(|i| (1.0 - z[i]) * h[i] + z[i] * c[i]).collect()
}

pub fn gru_store(input: usize, hidden: usize, seed: u64) -> (ParamStore<f64>, GruParams) {
    let mut store = ParamStore::new(seed);
    let p = GruParams::new(&mut store, "gru", input, hidden);
    (store, p)
}

pub fn raw(store: &ParamStore<f64>, p: &GruParams) -> RawGru {
    let v = |id| store.param(id).value.data().to_vec();
    RawGru {
        w: [v(p.w_z), v(p.w_r), v(p.w_h)],
        u: [v(p.u_z), v(p.u_r), v(p.u_h)],
        b: [v(p.b_z), v(p.b_r), v(p.b_h)],
    }
}

pub fn run_cell(store: &mut ParamStore<f64>, p: &GruParams, x: &Tensor<f64>, h: &Tensor<f64>) -> Tensor<f64> {
    eval(store, false, |s| {
        let vars = p.bind(s);
        let xv = s.tape.constant(x.clone());
        let hv = s.tape.constant(h.clone());
        gru_cell(s, &vars, xv, hv)
    })
}
