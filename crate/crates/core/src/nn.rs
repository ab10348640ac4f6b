//! Named parameter storage, per-step graph sessions, and the basic layers
//! the backbones and heads are assembled from.

use xint_tensor::{BatchNormConfig, Rng, RunningStats, Scalar, Tape, Tensor, Var};

use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct BufferId(usize);

#[derive(Debug, Clone, Copy)]
pub enum Init {
    /// Uniform in `±sqrt(6 / fan_in)`.
    FanIn(usize),
    Zeros,
    Ones,
}

#[derive(Debug, Clone)]
pub struct Param<T: Scalar> {
    pub name: String,
    pub value: Tensor<T>,
    pub grad: Option<Tensor<T>>,
    /// Frozen parameters are fed to the graph as constants.
    pub trainable: bool,
}

#[derive(Debug, Clone)]
pub struct Buffer<T: Scalar> {
    pub name: String,
    pub value: Tensor<T>,
}

/// All learnable parameters and non-learnable buffers of a model.
///
/// Initial values depend only on `(seed, name)`, so models that share a
/// sub-network start with bit-identical copies of it.
#[derive(Debug, Clone)]
pub struct ParamStore<T: Scalar = f32> {
    seed: u64,
    params: Vec<Param<T>>,
    buffers: Vec<Buffer<T>>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new(seed: u64) -> Self {
        ParamStore {
            seed,
            params: Vec::new(),
            buffers: Vec::new(),
        }
    }

    pub fn add_param(&mut self, name: &str, shape: &[usize], init: Init) -> ParamId {
        debug_assert!(self.params.iter().all(|p| p.name != name), "duplicate param {}", name);
        let n: usize = shape.iter().product();
        let value = match init {
            Init::Zeros => Tensor::zeros(shape),
            Init::Ones => Tensor::ones(shape),
            Init::FanIn(fan_in) => {
                let bound = (6.0 / fan_in as f64).sqrt();
                let mut rng = Rng::new(self.seed).split(name);
                let data = (0..n)
                    .map(|_| T::from_f64_lossy(rng.uniform_range(-bound, bound)))
                    .collect();
                Tensor::from_vec(shape, data)
            }
        };
        self.params.push(Param {
            name: name.to_string(),
            value,
            grad: None,
            trainable: true,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn add_buffer(&mut self, name: &str, value: Tensor<T>) -> BufferId {
        self.buffers.push(Buffer {
            name: name.to_string(),
            value,
        });
        BufferId(self.buffers.len() - 1)
    }

    pub fn param(&self, id: ParamId) -> &Param<T> {
        &self.params[id.0]
    }

    pub fn param_mut(&mut self, id: ParamId) -> &mut Param<T> {
        &mut self.params[id.0]
    }

    pub fn buffer(&self, id: BufferId) -> &Buffer<T> {
        &self.buffers[id.0]
    }

    pub fn params(&self) -> &[Param<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param<T>] {
        &mut self.params
    }

    pub fn buffers(&self) -> &[Buffer<T>] {
        &self.buffers
    }

    pub fn buffers_mut(&mut self) -> &mut [Buffer<T>] {
        &mut self.buffers
    }

    pub fn find_param(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn num_parameters(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    /// Parameter count of those whose name starts with `prefix`.
    pub fn num_parameters_under(&self, prefix: &str) -> usize {
        self.params
            .iter()
            .filter(|p| p.name.starts_with(prefix))
            .map(|p| p.value.numel())
            .sum()
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad = None;
        }
    }

    pub fn set_trainable(&mut self, prefix: &str, trainable: bool) {
        for p in &mut self.params {
            if p.name.starts_with(prefix) {
                p.trainable = trainable;
            }
        }
    }

    fn two_buffers_mut(&mut self, a: BufferId, b: BufferId) -> (&mut [T], &mut [T]) {
        assert!(a.0 < b.0, "buffer order");
        let (lo, hi) = self.buffers.split_at_mut(b.0);
        (lo[a.0].value.data_mut(), hi[0].value.data_mut())
    }
}

/// One forward (and optionally backward) pass over a [`ParamStore`].
pub struct Session<'s, T: Scalar> {
    pub tape: Tape<T>,
    store: &'s mut ParamStore<T>,
    bound: Vec<Option<Var>>,
    training: bool,
    rng: Rng,
}

impl<'s, T: Scalar> Session<'s, T> {
    pub fn new(store: &'s mut ParamStore<T>, training: bool, rng: Rng) -> Self {
        let n = store.params.len();
        Session {
            tape: Tape::new(),
            store,
            bound: vec![None; n],
            training,
            rng,
        }
    }

    pub fn training(&self) -> bool {
        self.training
    }

    pub fn rng_mut(&mut self) -> &mut Rng {
        &mut self.rng
    }

    pub fn into_rng(self) -> Rng {
        self.rng
    }

    /// Graph handle of a parameter; each parameter enters the tape once.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.bound[id.0] {
            return v;
        }
        let p = &self.store.params[id.0];
        let v = if p.trainable {
            self.tape.leaf(p.value.clone())
        } else {
            self.tape.constant(p.value.clone())
        };
        self.bound[id.0] = Some(v);
        v
    }

    /// Graph handle of a parameter if it was used in this session.
    pub fn bound_var(&self, id: ParamId) -> Option<Var> {
        self.bound[id.0]
    }

    /// Adds the gradients gathered on the tape into the store.
    pub fn accumulate_grads(&mut self) {
        for (i, slot) in self.bound.iter().enumerate() {
            let Some(v) = slot else { continue };
            let Some(g) = self.tape.take_grad(*v) else { continue };
            let p = &mut self.store.params[i];
            match &mut p.grad {
                Some(existing) => existing.add_assign(&g),
                None => p.grad = Some(g),
            }
        }
    }

    /// Inverted dropout driven by the session's stream; identity outside
    /// training.
    pub fn dropout(&mut self, x: Var, p: f64) -> Result<Var> {
        Ok(self.tape.dropout(x, p, self.training, &mut self.rng)?)
    }

    fn batch_norm(&mut self, layer: &BatchNorm, x: Var) -> Result<Var> {
        let gamma = self.param(layer.gamma);
        let beta = self.param(layer.beta);
        let training = self.training;
        let (mean, var) = self.store.two_buffers_mut(layer.running_mean, layer.running_var);
        Ok(self.tape.batch_norm(
            x,
            gamma,
            beta,
            RunningStats { mean, var },
            training,
            BatchNormConfig::default(),
        )?)
    }
}

#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub in_features: usize,
    pub out_features: usize,
}

impl Linear {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, in_f: usize, out_f: usize, bias: bool) -> Self {
        let weight = store.add_param(&format!("{}.weight", name), &[out_f, in_f], Init::FanIn(in_f));
        let bias = bias.then(|| store.add_param(&format!("{}.bias", name), &[out_f], Init::Zeros));
        Linear {
            weight,
            bias,
            in_features: in_f,
            out_features: out_f,
        }
    }

    pub fn forward<T: Scalar>(&self, s: &mut Session<'_, T>, x: Var) -> Result<Var> {
        let w = s.param(self.weight);
        let b = self.bias.map(|b| s.param(b));
        Ok(s.tape.linear(x, w, b)?)
    }
}

#[derive(Debug, Clone)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        in_c: usize,
        out_c: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        bias: bool,
    ) -> Self {
        let fan_in = in_c * kernel * kernel;
        let weight = store.add_param(
            &format!("{}.weight", name),
            &[out_c, in_c, kernel, kernel],
            Init::FanIn(fan_in),
        );
        let bias = bias.then(|| store.add_param(&format!("{}.bias", name), &[out_c], Init::Zeros));
        Conv2d {
            weight,
            bias,
            in_channels: in_c,
            out_channels: out_c,
            kernel,
            stride,
            pad,
        }
    }

    pub fn forward<T: Scalar>(&self, s: &mut Session<'_, T>, x: Var) -> Result<Var> {
        let w = s.param(self.weight);
        let b = self.bias.map(|b| s.param(b));
        Ok(s.tape.conv2d(x, w, b, self.stride, self.pad)?)
    }

    pub fn num_parameters(&self) -> usize {
        self.out_channels * self.in_channels * self.kernel * self.kernel + self.bias.map_or(0, |_| self.out_channels)
    }
}

#[derive(Debug, Clone)]
pub struct DepthwiseConv2d {
    pub weight: ParamId,
    pub channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl DepthwiseConv2d {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, channels: usize, kernel: usize, stride: usize, pad: usize) -> Self {
        let weight = store.add_param(
            &format!("{}.weight", name),
            &[channels, 1, kernel, kernel],
            Init::FanIn(kernel * kernel),
        );
        DepthwiseConv2d {
            weight,
            channels,
            kernel,
            stride,
            pad,
        }
    }

    pub fn forward<T: Scalar>(&self, s: &mut Session<'_, T>, x: Var) -> Result<Var> {
        let w = s.param(self.weight);
        Ok(s.tape.depthwise_conv2d(x, w, self.stride, self.pad)?)
    }
}

#[derive(Debug, Clone)]
pub struct BatchNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: BufferId,
    pub running_var: BufferId,
}

impl BatchNorm {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, features: usize) -> Self {
        let gamma = store.add_param(&format!("{}.gamma", name), &[features], Init::Ones);
        let beta = store.add_param(&format!("{}.beta", name), &[features], Init::Zeros);
        let running_mean = store.add_buffer(&format!("{}.running_mean", name), Tensor::zeros(&[features]));
        let running_var = store.add_buffer(&format!("{}.running_var", name), Tensor::ones(&[features]));
        BatchNorm {
            gamma,
            beta,
            running_mean,
            running_var,
        }
    }

    pub fn forward<T: Scalar>(&self, s: &mut Session<'_, T>, x: Var) -> Result<Var> {
        s.batch_norm(self, x)
    }
}
