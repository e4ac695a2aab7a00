//! Surrogate-gradient SGD on the bar task.

mod data;

pub use data::{bar_rates, batch, Sample, ToyDataset, ToyTaskSpec, RATE_CAP};

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::blocks::model::{ParamKind, ParamStore};
use crate::blocks::{BnMode, ModelConfig, SnnVit};
use crate::error::{Error, Result};
use crate::rng::RngState;
use crate::tensor::Tensor;

/// Lower bound kept on the learned V2 scale.
pub const ALPHA_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimSpec {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Minimum value of every `M_w` diagonal entry.
    pub diag_clamp: f64,
    /// Seeds parameter initialisation and batch order.
    pub seed: u64,
}

impl Default for OptimSpec {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            momentum: 0.9,
            weight_decay: 1e-4,
            epochs: 200,
            batch_size: 20,
            diag_clamp: 0.1,
            seed: 0,
        }
    }
}

impl OptimSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Config(format!("learning rate {} must be >= 0", self.learning_rate)));
        }
        if !(0.0..1.0).contains(&self.momentum) || !(self.weight_decay >= 0.0) {
            return Err(Error::Config("momentum must be in [0, 1) and weight decay >= 0".into()));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Config("epochs and batch size must be positive".into()));
        }
        if !(self.diag_clamp > 0.0) {
            return Err(Error::Config("diagonal clamp must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_acc: f64,
    pub test_acc: f64,
    /// Cross-entropy on the whole training set at the end of the epoch.
    pub loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub metrics: Vec<EpochMetrics>,
    pub model: SnnVit<f64>,
}

/// SGD with momentum over the trainable tensors of a [`ParamStore`].
#[derive(Debug, Clone)]
pub struct Sgd {
    spec: OptimSpec,
    velocity: BTreeMap<String, Tensor<f64>>,
}

impl Sgd {
    pub fn new(spec: OptimSpec) -> Result<Self> {
        spec.validate()?;
        Ok(Self {
            spec,
            velocity: BTreeMap::new(),
        })
    }

    /// One update, followed by the `M_w` and `α` projections.
    pub fn step(&mut self, params: &mut ParamStore<f64>, grads: &BTreeMap<String, Tensor<f64>>) -> Result<()> {
        let s = &self.spec;
        for (name, p) in params.iter_mut() {
            let kind = ParamKind::of(name);
            if !kind.trainable() {
                continue;
            }
            let Some(g) = grads.get(name) else { continue };
            let mut g = g.clone();
            if kind == ParamKind::Mixer {
                zero_upper(&mut g);
            }
            if kind == ParamKind::Weight && s.weight_decay > 0.0 {
                g = g.zip_map(p, |gv, pv| gv + s.weight_decay * pv)?;
            }
            let v = self
                .velocity
                .entry(name.clone())
                .or_insert_with(|| Tensor::zeros(p.shape().to_vec()));
            for (vi, gi) in v.data_mut().iter_mut().zip(g.data()) {
                *vi = s.momentum * *vi + gi;
            }
            for (pi, vi) in p.data_mut().iter_mut().zip(v.data()) {
                *pi -= s.learning_rate * vi;
            }
            match kind {
                ParamKind::Mixer => project_mixer(p, s.diag_clamp),
                ParamKind::Scale => p.data_mut().iter_mut().for_each(|a| *a = a.max(ALPHA_FLOOR)),
                _ => {}
            }
        }
        Ok(())
    }
}

fn zero_upper(m: &mut Tensor<f64>) {
    let t = m.shape()[0];
    for r in 0..t {
        for c in r + 1..t {
            m.data_mut()[r * t + c] = 0.0;
        }
    }
}

/// Strictly-upper entries to zero, diagonal at least `clamp`.
pub fn project_mixer(m: &mut Tensor<f64>, clamp: f64) {
    zero_upper(m);
    let t = m.shape()[0];
    for i in 0..t {
        let d = &mut m.data_mut()[i * t + i];
        *d = d.max(clamp);
    }
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

fn correct(logits: &Tensor<f64>, labels: &[usize]) -> usize {
    let c = logits.shape()[1];
    labels
        .iter()
        .enumerate()
        .filter(|(i, &l)| argmax(&logits.data()[i * c..(i + 1) * c]) == l)
        .count()
}

/// Inference accuracy over `samples` in batches of `batch_size`.
pub fn evaluate(model: &SnnVit<f64>, samples: &[Sample], batch_size: usize) -> Result<f64> {
    let mut hits = 0;
    for chunk in samples.chunks(batch_size.max(1)) {
        let refs: Vec<&Sample> = chunk.iter().collect();
        let (x, y) = batch(&refs)?;
        hits += correct(&model.logits(&x)?, &y);
    }
    Ok(hits as f64 / samples.len().max(1) as f64)
}

/// Loss and accuracy with the whole set as one batch (batch statistics, no buffer updates).
fn training_set_loss(model: &SnnVit<f64>, samples: &[Sample]) -> Result<(f64, f64)> {
    let refs: Vec<&Sample> = samples.iter().collect();
    let (x, y) = batch(&refs)?;
    let rec = model.record(&x, BnMode::Train, false)?;
    let mut tape = rec.recorder.tape;
    let loss = tape.softmax_cross_entropy(rec.logits, &y)?;
    let acc = correct(tape.value(rec.logits), &y) as f64 / y.len() as f64;
    Ok((tape.value(loss).data()[0], acc))
}

fn check_compatible(task: &ToyTaskSpec, model: &ModelConfig) -> Result<()> {
    if task.t_steps != model.t_steps || task.image_size != model.image_size || model.in_channels != 1 {
        return Err(Error::Config(format!(
            "task (T={}, {}x{}, 1 channel) does not match model (T={}, {}x{}, {} channels)",
            task.t_steps,
            task.image_size,
            task.image_size,
            model.t_steps,
            model.image_size,
            model.image_size,
            model.in_channels
        )));
    }
    if model.classes != 2 {
        return Err(Error::Config("the bar task has two classes".into()));
    }
    Ok(())
}

/// Trains a fresh model on the bar task; calls `on_epoch` after every epoch.
pub fn train_toy_with(
    task: &ToyTaskSpec,
    model_cfg: &ModelConfig,
    optim: &OptimSpec,
    mut on_epoch: impl FnMut(&EpochMetrics),
) -> Result<TrainOutcome> {
    optim.validate()?;
    check_compatible(task, model_cfg)?;
    let data = ToyDataset::generate(task)?;
    let mut model = SnnVit::<f64>::new(model_cfg.clone(), optim.seed)?;
    let mut sgd = Sgd::new(optim.clone())?;
    let mut metrics = Vec::with_capacity(optim.epochs);
    let momentum = model_cfg.bn_momentum;
    for epoch in 0..optim.epochs {
        let mut order: Vec<usize> = (0..data.train.len()).collect();
        order.shuffle(&mut RngState::stream_at(optim.seed, 1 + epoch as u64));
        for (step, idx) in order.chunks(optim.batch_size).enumerate() {
            let refs: Vec<&Sample> = idx.iter().map(|&i| &data.train[i]).collect();
            let (x, y) = batch(&refs)?;
            let (grads, stats, loss) = {
                let rec = model.record(&x, BnMode::Train, true)?;
                let mut r = rec.recorder;
                let loss_id = r.tape.softmax_cross_entropy(rec.logits, &y)?;
                let loss = r.tape.value(loss_id).data()[0];
                if !loss.is_finite() {
                    return Err(Error::Training {
                        epoch,
                        step,
                        loss,
                        detail: format!("non-finite loss on a batch of {}", y.len()),
                    });
                }
                let g = r.tape.backward(loss_id)?;
                let grads: BTreeMap<String, Tensor<f64>> = r
                    .param_nodes()
                    .iter()
                    .map(|(n, id)| (n.clone(), g.get_or_zeros(*id)))
                    .collect();
                (grads, r.take_stats(), loss)
            };
            if let Some((name, _)) = grads.iter().find(|(_, g)| !g.is_finite()) {
                return Err(Error::Training {
                    epoch,
                    step,
                    loss,
                    detail: format!("non-finite gradient for {name}"),
                });
            }
            sgd.step(&mut model.params, &grads)?;
            model.params.apply_bn_stats(&stats, momentum)?;
        }
        let (loss, train_acc) = training_set_loss(&model, &data.train)?;
        let m = EpochMetrics {
            epoch,
            train_acc,
            test_acc: evaluate(&model, &data.test, optim.batch_size.max(50))?,
            loss,
        };
        on_epoch(&m);
        metrics.push(m);
    }
    Ok(TrainOutcome { metrics, model })
}

pub fn train_toy(task: &ToyTaskSpec, model: &ModelConfig, optim: &OptimSpec) -> Result<TrainOutcome> {
    train_toy_with(task, model, optim, |_| {})
}
