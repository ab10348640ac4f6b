//! Epoch and evaluation loops.

use xint_tensor::{sigmoid, Rng, RngState, Tensor};

use super::checkpoint::Checkpoint;
use super::optim::{Adam, AdamConfig};
use super::schedule::MultiStep;
use crate::data::{Batch, ClipDataset};
use crate::error::{Error, Result};
use crate::losses::{binary_cross_entropy, combined_loss, weighted_cross_entropy, ClassWeights, LossBundle};
use crate::metrics::{accuracy, argmax2, precision, roc_auc, roc_curve, RocPoint};
use crate::model::{ModelPhi, Outputs};
use crate::nn::Session;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lambda: f64,
    pub batch_size: usize,
    pub lr: f64,
    pub milestones: Vec<usize>,
    pub gamma: f64,
    pub adam: AdamConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lambda: 0.01,
            batch_size: 16,
            lr: 1e-2,
            milestones: vec![50, 75],
            gamma: 0.1,
            adam: AdamConfig::default(),
            seed: 0,
        }
    }
}

/// Crossing metrics and mean losses over a set of clips.
#[derive(Debug, Clone)]
pub struct EvalReport {
    pub accuracy: f64,
    /// `None` when nothing was predicted crossing.
    pub precision: Option<f64>,
    /// `None` when only one class is present.
    pub auc: Option<f64>,
    pub losses: LossBundle,
    /// Probability of crossing per clip.
    pub scores: Vec<f64>,
    pub labels: Vec<usize>,
    pub predictions: Vec<usize>,
}

impl EvalReport {
    pub fn roc(&self) -> Result<Vec<RocPoint>> {
        roc_curve(&self.scores, &self.labels)
    }
}

/// Per-clip outputs of a forward pass, reduced to plain numbers.
struct StepOutcome {
    losses: LossBundle,
    scores: Vec<f64>,
    predictions: Vec<usize>,
}

/// Training state: model, optimizer, schedule and the number of finished
/// epochs.
pub struct Trainer {
    pub model: ModelPhi<f32>,
    pub adam: Adam<f32>,
    pub schedule: MultiStep,
    pub config: TrainConfig,
    pub weights: ClassWeights,
    /// Epochs completed so far.
    pub epoch: usize,
}

impl Trainer {
    /// At `lambda = 0` the auxiliary heads are frozen so that neither the
    /// loss nor weight decay touches them.
    pub fn new(mut model: ModelPhi<f32>, config: TrainConfig, weights: ClassWeights) -> Result<Self> {
        validate_train_config(&config)?;
        model.set_aux_trainable(config.lambda > 0.0);
        let adam = Adam::new(&model.store, config.adam);
        Ok(Trainer {
            schedule: MultiStep::new(config.lr, config.milestones.clone(), config.gamma),
            model,
            adam,
            config,
            weights,
            epoch: 0,
        })
    }

    pub fn lr(&self) -> f64 {
        self.schedule.lr(self.epoch)
    }

    /// Root of every random stream of the run.
    pub fn rng(&self) -> Rng {
        Rng::new(self.config.seed)
    }

    /// One pass over `ds` in an order drawn from `(seed, epoch)`. Returns the
    /// clip-weighted mean losses and the crossing metrics of the training
    /// forward passes.
    pub fn train_epoch(&mut self, ds: &ClipDataset) -> Result<EvalReport> {
        if ds.is_empty() {
            return Err(Error::Data("training set holds no clips".into()));
        }
        let lr = self.lr();
        let root = self.rng();
        let mut order: Vec<usize> = (0..ds.len()).collect();
        root.split(&format!("shuffle/{}", self.epoch)).shuffle(&mut order);
        let mut acc = Accumulator::new(self.config.lambda);
        for (b, idx) in order.chunks(self.config.batch_size).enumerate() {
            let batch = ds.batch(idx);
            let rng = root.split(&format!("dropout/{}/{}", self.epoch, b));
            let outcome = {
                let mut pass = self.model.forward(batch.clips.clone(), true, rng)?;
                let (outcome, total) = losses(&mut pass.session, &pass.outputs, &batch, &self.weights, self.config.lambda)?;
                pass.session.tape.backward(total)?;
                pass.session.accumulate_grads();
                outcome
            };
            let stepped = self.adam.step(&mut self.model.store, lr);
            self.model.store.zero_grad();
            stepped?;
            acc.add(&outcome, &batch.labels);
        }
        self.epoch += 1;
        acc.finish()
    }

    /// Saves parameters, buffers, optimizer moments, schedule position and
    /// the random-stream root alongside the config text and fingerprint.
    pub fn checkpoint(&self, config_text: &str, fingerprint: &str) -> Checkpoint {
        let mut c = Checkpoint::new();
        c.push_bytes("config", config_text.as_bytes().to_vec());
        c.push_bytes("fingerprint", fingerprint.as_bytes().to_vec());
        c.push_u64s("epoch", vec![self.epoch as u64]);
        let RngState { seed, stream, word_pos } = self.rng().state();
        c.push_u64s("rng", vec![seed, stream, word_pos as u64, (word_pos >> 64) as u64]);
        c.push_tensor("class_weights", &Tensor::<f64>::from_vec(&[2], self.weights.as_slice().to_vec()));
        c.push_u64s("adam/t", vec![self.adam.t]);
        for (i, p) in self.model.store.params().iter().enumerate() {
            c.push_tensor(format!("param/{}", p.name), &p.value);
            c.push_tensor(format!("adam/m/{}", p.name), &self.adam.m[i]);
            c.push_tensor(format!("adam/v/{}", p.name), &self.adam.v[i]);
        }
        for b in self.model.store.buffers() {
            c.push_tensor(format!("buffer/{}", b.name), &b.value);
        }
        c
    }

    /// Restores everything [`Trainer::checkpoint`] saved. The checkpoint is
    /// fully validated before any state changes.
    pub fn restore(&mut self, c: &Checkpoint) -> Result<()> {
        let epoch = single(c.u64s("epoch")?, "epoch")? as usize;
        let t = single(c.u64s("adam/t")?, "adam/t")?;
        let rng = c.u64s("rng")?;
        if rng.len() != 4 || rng[0] != self.config.seed {
            return Err(Error::Checkpoint(format!("checkpoint was trained with another seed ({:?})", rng.first())));
        }
        let weights = ClassWeights::new(c.tensor::<f64>("class_weights")?.into_data())?;
        let mut params = Vec::new();
        for p in self.model.store.params() {
            let load = |prefix: &str| -> Result<Tensor<f32>> {
                let t = c.tensor::<f32>(&format!("{}{}", prefix, p.name))?;
                if t.shape() != p.value.shape() {
                    return Err(Error::Checkpoint(format!("{}{} has shape {:?}, model expects {:?}", prefix, p.name, t.shape(), p.value.shape())));
                }
                Ok(t)
            };
            params.push((load("param/")?, load("adam/m/")?, load("adam/v/")?));
        }
        let mut buffers = Vec::new();
        for b in self.model.store.buffers() {
            let t = c.tensor::<f32>(&format!("buffer/{}", b.name))?;
            if t.shape() != b.value.shape() {
                return Err(Error::Checkpoint(format!("buffer/{} shape mismatch", b.name)));
            }
            buffers.push(t);
        }
        for (i, (value, m, v)) in params.into_iter().enumerate() {
            self.model.store.params_mut()[i].value = value;
            self.adam.m[i] = m;
            self.adam.v[i] = v;
        }
        for (b, t) in self.model.store.buffers_mut().iter_mut().zip(buffers) {
            b.value = t;
        }
        self.adam.t = t;
        self.epoch = epoch;
        self.weights = weights;
        Ok(())
    }
}

fn single(v: &[u64], name: &str) -> Result<u64> {
    match v {
        [x] => Ok(*x),
        _ => Err(Error::Checkpoint(format!("entry {:?} should hold one value", name))),
    }
}

impl Trainer {
    pub fn check_config(c: &TrainConfig) -> Result<()> {
        validate_train_config(c)
    }
}

fn validate_train_config(c: &TrainConfig) -> Result<()> {
    let bad = |m: String| Err(Error::Validation(m));
    if !(c.lambda >= 0.0 && c.lambda.is_finite()) {
        return bad(format!("lambda must be a finite non-negative number, got {}", c.lambda));
    }
    if c.batch_size == 0 {
        return bad("batch_size must be positive".into());
    }
    if !(c.lr > 0.0 && c.lr.is_finite()) {
        return bad(format!("lr must be positive, got {}", c.lr));
    }
    if !(c.gamma > 0.0 && c.gamma <= 1.0) {
        return bad(format!("gamma must lie in (0, 1], got {}", c.gamma));
    }
    if c.milestones.windows(2).any(|w| w[0] >= w[1]) {
        return bad(format!("milestones must be strictly increasing, got {:?}", c.milestones));
    }
    let a = c.adam;
    if !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) || !(a.eps > 0.0) || !(a.weight_decay >= 0.0) {
        return bad(format!("invalid Adam settings {:?}", a));
    }
    Ok(())
}

/// Builds the crossing, pose and speed losses and their combination.
fn losses(
    s: &mut Session<'_, f32>,
    out: &Outputs,
    batch: &Batch,
    weights: &ClassWeights,
    lambda: f64,
) -> Result<(StepOutcome, xint_tensor::Var)> {
    let cross = weighted_cross_entropy(&mut s.tape, out.crossing, &batch.labels, weights)?;
    let pose = match out.pose {
        Some(p) => Some(binary_cross_entropy(&mut s.tape, p, &batch.pose, Some(&batch.pose_mask))?),
        None => None,
    };
    let speed = match out.speed {
        Some(v) => Some(binary_cross_entropy(&mut s.tape, v, &batch.speed, None)?),
        None => None,
    };
    let (vars, bundle) = combined_loss(&mut s.tape, cross, pose, speed, lambda)?;
    if !bundle.total.is_finite() {
        return Err(Error::Numeric(format!("non-finite loss {:?}", bundle)));
    }
    let logits = s.tape.value(out.crossing).to_f64_vec();
    let rows: Vec<[f64; 2]> = logits.chunks(2).map(|r| [r[0], r[1]]).collect();
    Ok((
        StepOutcome {
            losses: bundle,
            scores: rows.iter().map(|r| sigmoid(r[1] - r[0])).collect(),
            predictions: rows.iter().map(|&r| argmax2(r)).collect(),
        },
        vars.total,
    ))
}

struct Accumulator {
    lambda: f64,
    sums: [f64; 4],
    scores: Vec<f64>,
    labels: Vec<usize>,
    predictions: Vec<usize>,
}

impl Accumulator {
    fn new(lambda: f64) -> Self {
        Accumulator {
            lambda,
            sums: [0.0; 4],
            scores: Vec::new(),
            labels: Vec::new(),
            predictions: Vec::new(),
        }
    }

    fn add(&mut self, o: &StepOutcome, labels: &[usize]) {
        let n = labels.len() as f64;
        let l = &o.losses;
        for (s, v) in self.sums.iter_mut().zip([l.cross, l.pose, l.speed, l.total]) {
            *s += n * v;
        }
        self.scores.extend(&o.scores);
        self.predictions.extend(&o.predictions);
        self.labels.extend_from_slice(labels);
    }

    fn finish(self) -> Result<EvalReport> {
        let n = self.labels.len() as f64;
        let [cross, pose, speed, total] = self.sums.map(|s| s / n);
        Ok(EvalReport {
            accuracy: accuracy(&self.predictions, &self.labels)?,
            precision: optional(precision(&self.predictions, &self.labels))?,
            auc: optional(roc_auc(&self.scores, &self.labels))?,
            losses: LossBundle {
                cross,
                pose,
                speed,
                total,
                lambda: self.lambda,
            },
            scores: self.scores,
            labels: self.labels,
            predictions: self.predictions,
        })
    }
}

fn optional(r: Result<f64>) -> Result<Option<f64>> {
    match r {
        Ok(v) => Ok(Some(v)),
        Err(Error::UndefinedMetric(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Eval-mode pass over `ds` (dropout off, running batch-norm statistics).
/// Leaves the model untouched.
pub fn evaluate(model: &mut ModelPhi<f32>, ds: &ClipDataset, weights: &ClassWeights, lambda: f64, batch_size: usize) -> Result<EvalReport> {
    if ds.is_empty() {
        return Err(Error::UndefinedMetric("evaluation set holds no clips".into()));
    }
    let mut acc = Accumulator::new(lambda);
    let order: Vec<usize> = (0..ds.len()).collect();
    for idx in order.chunks(batch_size.max(1)) {
        let batch = ds.batch(idx);
        let mut pass = model.forward(batch.clips.clone(), false, Rng::new(0))?;
        let (outcome, _) = losses(&mut pass.session, &pass.outputs, &batch, weights, lambda)?;
        acc.add(&outcome, &batch.labels);
    }
    acc.finish()
}
