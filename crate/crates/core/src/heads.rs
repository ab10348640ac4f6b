//! Task heads on top of the shared per-frame features.

use xint_tensor::{Scalar, Tensor, TensorError, Var};

use crate::error::Result;
use crate::nn::{BatchNorm, Init, Linear, ParamId, ParamStore, Session};

/// Gated recurrent unit parameters: input maps `W_*`, recurrent maps `U_*`
/// (both stored `[hidden, in]`) and biases `b_*` for the update (z), reset
/// (r) and candidate (h) paths.
#[derive(Debug, Clone)]
pub struct GruParams {
    pub hidden: usize,
    pub input: usize,
    pub w_z: ParamId,
    pub w_r: ParamId,
    pub w_h: ParamId,
    pub u_z: ParamId,
    pub u_r: ParamId,
    pub u_h: ParamId,
    pub b_z: ParamId,
    pub b_r: ParamId,
    pub b_h: ParamId,
}

/// Graph handles of [`GruParams`] within one session.
#[derive(Debug, Clone, Copy)]
pub struct GruVars {
    pub w_z: Var,
    pub w_r: Var,
    pub w_h: Var,
    pub u_z: Var,
    pub u_r: Var,
    pub u_h: Var,
    pub b_z: Var,
    pub b_r: Var,
    pub b_h: Var,
}

/// Input-side gate pre-activations `W x + b` for one step.
#[derive(Debug, Clone, Copy)]
pub struct GateInputs {
    pub z: Var,
    pub r: Var,
    pub h: Var,
}

impl GruParams {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, input: usize, hidden: usize) -> Self {
        let mut w = |suffix: &str, fan_in: usize, cols: usize| {
            store.add_param(&format!("{}.{}", name, suffix), &[hidden, cols], Init::FanIn(fan_in))
        };
        let (w_z, w_r, w_h) = (w("w_z", input, input), w("w_r", input, input), w("w_h", input, input));
        let (u_z, u_r, u_h) = (w("u_z", hidden, hidden), w("u_r", hidden, hidden), w("u_h", hidden, hidden));
        let mut b = |suffix: &str| store.add_param(&format!("{}.{}", name, suffix), &[hidden], Init::Zeros);
        let (b_z, b_r, b_h) = (b("b_z"), b("b_r"), b("b_h"));
        GruParams {
            hidden,
            input,
            w_z,
            w_r,
            w_h,
            u_z,
            u_r,
            u_h,
            b_z,
            b_r,
            b_h,
        }
    }

    pub fn bind<T: Scalar>(&self, s: &mut Session<'_, T>) -> GruVars {
        GruVars {
            w_z: s.param(self.w_z),
            w_r: s.param(self.w_r),
            w_h: s.param(self.w_h),
            u_z: s.param(self.u_z),
            u_r: s.param(self.u_r),
            u_h: s.param(self.u_h),
            b_z: s.param(self.b_z),
            b_r: s.param(self.b_r),
            b_h: s.param(self.b_h),
        }
    }
}

impl GruVars {
    /// `W x + b` for each gate; works on any number of rows at once.
    pub fn project_inputs<T: Scalar>(&self, s: &mut Session<'_, T>, x: Var) -> Result<GateInputs> {
        Ok(GateInputs {
            z: s.tape.linear(x, self.w_z, Some(self.b_z))?,
            r: s.tape.linear(x, self.w_r, Some(self.b_r))?,
            h: s.tape.linear(x, self.w_h, Some(self.b_h))?,
        })
    }

    /// Recurrent half of a step given precomputed input projections:
    ///
    /// ```text
    /// z = sigmoid(Wz x + Uz h_prev + bz)
    /// r = sigmoid(Wr x + Ur h_prev + br)
    /// c = tanh(Wh x + Uh (r * h_prev) + bh)
    /// h = (1 - z) * h_prev + z * c
    /// ```
    pub fn step<T: Scalar>(&self, s: &mut Session<'_, T>, inputs: GateInputs, h_prev: Var) -> Result<Var> {
        let t = &mut s.tape;
        let uz = t.linear(h_prev, self.u_z, None)?;
        let z = t.add(inputs.z, uz)?;
        let z = t.sigmoid(z);
        let ur = t.linear(h_prev, self.u_r, None)?;
        let r = t.add(inputs.r, ur)?;
        let r = t.sigmoid(r);
        let rh = t.mul(r, h_prev)?;
        let uh = t.linear(rh, self.u_h, None)?;
        let c = t.add(inputs.h, uh)?;
        let c = t.tanh(c);
        let keep = t.one_minus(z);
        let keep = t.mul(keep, h_prev)?;
        let update = t.mul(z, c)?;
        Ok(t.add(keep, update)?)
    }
}

/// One GRU step: `x_t: [n, in]`, `h_prev: [n, hidden]` -> `[n, hidden]`.
pub fn gru_cell<T: Scalar>(s: &mut Session<'_, T>, p: &GruVars, x_t: Var, h_prev: Var) -> Result<Var> {
    let inputs = p.project_inputs(s, x_t)?;
    p.step(s, inputs, h_prev)
}

/// GRU over the frames of each clip followed by a linear layer on the last
/// hidden state, producing two crossing logits per clip.
#[derive(Debug, Clone)]
pub struct CrossingHead {
    pub gru: GruParams,
    pub classifier: Linear,
}

impl CrossingHead {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, features: usize, hidden: usize) -> Self {
        CrossingHead {
            gru: GruParams::new(store, &format!("{}.gru", name), features, hidden),
            classifier: Linear::new(store, &format!("{}.fc", name), hidden, 2, true),
        }
    }

    /// `features: [n*l, F]` with row `i*l + t` for clip `i`, frame `t`;
    /// returns logits `[n, 2]`.
    pub fn forward<T: Scalar>(&self, s: &mut Session<'_, T>, features: Var, n: usize, l: usize) -> Result<Var> {
        let shape = s.tape.shape(features).to_vec();
        if shape.len() != 2 || shape[0] != n * l || n == 0 || l == 0 {
            return Err(TensorError::Dimension {
                op: "crossing_head",
                detail: format!("features {:?} do not hold {} clips of {} frames", shape, n, l),
            }
            .into());
        }
        let f = shape[1];
        // [n*l, F] -> [n, l, F] -> [l, n, F] -> [l*n, F]; step t owns rows t*n..(t+1)*n.
        let seq = s.tape.reshape(features, &[n, l, f])?;
        let seq = s.tape.swap_leading(seq)?;
        let seq = s.tape.reshape(seq, &[l * n, f])?;
        let p = self.gru.bind(s);
        let projected = p.project_inputs(s, seq)?;
        let mut h = s.tape.constant(Tensor::zeros(&[n, self.gru.hidden]));
        for t in 0..l {
            let inputs = GateInputs {
                z: s.tape.narrow(projected.z, t * n, n)?,
                r: s.tape.narrow(projected.r, t * n, n)?,
                h: s.tape.narrow(projected.h, t * n, n)?,
            };
            h = p.step(s, inputs, h)?;
        }
        self.classifier.forward(s, h)
    }
}

/// Per-frame auxiliary head: linear, batch norm, ReLU, dropout, linear,
/// sigmoid.
#[derive(Debug, Clone)]
pub struct AuxHead {
    pub hidden: Linear,
    pub norm: BatchNorm,
    pub output: Linear,
    pub dropout: f64,
}

impl AuxHead {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, features: usize, outputs: usize, dropout: f64) -> Self {
        AuxHead {
            hidden: Linear::new(store, &format!("{}.fc1", name), features, features, true),
            norm: BatchNorm::new(store, &format!("{}.bn", name), features),
            output: Linear::new(store, &format!("{}.fc2", name), features, outputs, true),
            dropout,
        }
    }

    pub fn outputs(&self) -> usize {
        self.output.out_features
    }

    /// `[m, F] -> [m, outputs]`, every entry in `(0, 1)`.
    pub fn forward<T: Scalar>(&self, s: &mut Session<'_, T>, features: Var) -> Result<Var> {
        let y = self.hidden.forward(s, features)?;
        let y = self.norm.forward(s, y)?;
        let y = s.tape.relu(y);
        let y = s.dropout(y, self.dropout)?;
        let y = self.output.forward(s, y)?;
        Ok(s.tape.sigmoid(y))
    }
}
