//! Single-hidden-layer ReLU classifier with softmax output, trained with
//! mini-batch Adam until a training-accuracy threshold is met.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::Sample;
use crate::seed;

#[derive(Debug, thiserror::Error)]
pub enum LearnerError {
    #[error("invalid learner config: `{field}` {reason}")]
    Config { field: &'static str, reason: String },
    #[error("training set is empty")]
    EmptyTrainSet,
    #[error("shape mismatch: expected {expected} values, got {found}")]
    Shape { expected: usize, found: usize },
    #[error("non-finite loss at epoch {epoch}")]
    Divergence { epoch: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LearnerConfig {
    pub hidden_units: usize,
    pub learning_rate: f64,
    pub train_acc_threshold: f64,
    pub max_epochs: usize,
    pub batch_size: usize,
    pub init_seed: u64,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        Self {
            hidden_units: 32,
            learning_rate: 1e-4,
            train_acc_threshold: 0.98,
            max_epochs: 200,
            batch_size: 32,
            init_seed: 0,
        }
    }
}

impl LearnerConfig {
    pub fn validate(&self) -> Result<(), LearnerError> {
        let err = |field, reason: &str| {
            Err(LearnerError::Config {
                field,
                reason: reason.to_string(),
            })
        };
        if self.hidden_units < 1 {
            return err("hidden_units", "must be at least 1");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return err("learning_rate", "must be positive and finite");
        }
        // 0 is accepted and means "stop after the first epoch".
        if !(0.0..=1.0).contains(&self.train_acc_threshold) {
            return err("train_acc_threshold", "must lie in [0, 1]");
        }
        if self.max_epochs < 1 {
            return err("max_epochs", "must be at least 1");
        }
        if self.batch_size < 1 {
            return err("batch_size", "must be at least 1");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub epochs_run: usize,
    pub final_train_accuracy: f64,
    pub reached_threshold: bool,
}

/// Interface the experiment loop and strategies use to talk to a model.
pub trait Learner: Send {
    fn dim(&self) -> usize;
    fn classes(&self) -> usize;

    /// Restores the construction-time parameters and clears optimizer state.
    fn reset_to_snapshot(&mut self);

    /// Trains until the threshold is met at an epoch boundary or
    /// `max_epochs` is exhausted. `on_epoch(t, preds)` receives the argmax
    /// predictions over `pool` after every epoch `t = 1..=K`. Epoch `t`
    /// shuffles the training order from a stream derived from
    /// `(order_seed, t)`.
    fn train_until(
        &mut self,
        train: &[&Sample],
        pool: &[&[f64]],
        order_seed: u64,
        on_epoch: &mut dyn FnMut(usize, &[usize]),
    ) -> Result<TrainReport, LearnerError>;

    fn predict_proba(&self, xs: &[&[f64]]) -> Result<Vec<Vec<f64>>, LearnerError>;

    fn embed(&self, xs: &[&[f64]]) -> Result<Vec<Vec<f64>>, LearnerError>;

    fn predict(&self, xs: &[&[f64]]) -> Result<Vec<usize>, LearnerError> {
        Ok(self.predict_proba(xs)?.iter().map(|p| argmax(p)).collect())
    }

    fn parameters(&self) -> &[f64];

    fn snapshot(&self) -> &[f64];
}

/// Index of the largest entry; the lowest index wins ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

pub fn softmax_in_place(z: &mut [f64]) {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in z.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in z.iter_mut() {
        *v /= sum;
    }
}

#[derive(Debug, Clone)]
struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn reset(&mut self) {
        self.m.fill(0.0);
        self.v.fill(0.0);
        self.t = 0;
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.t);
        let c2 = 1.0 - Self::BETA2.powi(self.t);
        for (((p, g), m), v) in params.iter_mut().zip(grad).zip(&mut self.m).zip(&mut self.v) {
            *m = Self::BETA1 * *m + (1.0 - Self::BETA1) * g;
            *v = Self::BETA2 * *v + (1.0 - Self::BETA2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + Self::EPS);
        }
    }
}

/// Parameters are stored flat as `[W1 (h×d), b1 (h), W2 (C×h), b2 (C)]`,
/// row-major.
#[derive(Debug, Clone)]
pub struct Mlp {
    config: LearnerConfig,
    dim: usize,
    classes: usize,
    params: Vec<f64>,
    initial: Vec<f64>,
    adam: Adam,
}

struct Activations {
    pre: Vec<f64>,
    hidden: Vec<f64>,
    logits: Vec<f64>,
}

impl Mlp {
    pub fn new(config: LearnerConfig, dim: usize, classes: usize) -> Result<Self, LearnerError> {
        config.validate()?;
        if dim < 1 {
            return Err(LearnerError::Config {
                field: "dim",
                reason: "must be at least 1".into(),
            });
        }
        if classes < 1 {
            return Err(LearnerError::Config {
                field: "classes",
                reason: "must be at least 1".into(),
            });
        }
        let h = config.hidden_units;
        let mut rng = seed::stream(config.init_seed, "mlp-init", &[]);
        let mut params = Vec::with_capacity(Self::param_count(dim, h, classes));
        let b1 = 1.0 / (dim as f64).sqrt();
        params.extend((0..h * dim + h).map(|_| rng.random_range(-b1..=b1)));
        let b2 = 1.0 / (h as f64).sqrt();
        params.extend((0..classes * h + classes).map(|_| rng.random_range(-b2..=b2)));
        let n = params.len();
        Ok(Self {
            config,
            dim,
            classes,
            initial: params.clone(),
            params,
            adam: Adam::new(n),
        })
    }

    pub fn param_count(dim: usize, hidden: usize, classes: usize) -> usize {
        hidden * dim + hidden + classes * hidden + classes
    }

    pub fn config(&self) -> &LearnerConfig {
        &self.config
    }

    fn hidden(&self) -> usize {
        self.config.hidden_units
    }

    /// Overwrites the current parameters; the snapshot is left untouched.
    pub fn set_parameters(&mut self, params: Vec<f64>) -> Result<(), LearnerError> {
        if params.len() != self.params.len() {
            return Err(LearnerError::Shape {
                expected: self.params.len(),
                found: params.len(),
            });
        }
        self.params = params;
        Ok(())
    }

    fn offsets(&self) -> (usize, usize, usize) {
        let h = self.hidden();
        let b1 = h * self.dim;
        let w2 = b1 + h;
        let b2 = w2 + self.classes * h;
        (b1, w2, b2)
    }

    fn check_dim(&self, x: &[f64]) -> Result<(), LearnerError> {
        if x.len() != self.dim {
            return Err(LearnerError::Shape {
                expected: self.dim,
                found: x.len(),
            });
        }
        Ok(())
    }

    fn forward(&self, params: &[f64], x: &[f64]) -> Activations {
        let (h, d, c) = (self.hidden(), self.dim, self.classes);
        let (o_b1, o_w2, o_b2) = self.offsets();
        let mut pre = Vec::with_capacity(h);
        for j in 0..h {
            let row = &params[j * d..(j + 1) * d];
            let z: f64 = row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + params[o_b1 + j];
            pre.push(z);
        }
        let hidden: Vec<f64> = pre.iter().map(|&z| z.max(0.0)).collect();
        let mut logits = Vec::with_capacity(c);
        for k in 0..c {
            let row = &params[o_w2 + k * h..o_w2 + (k + 1) * h];
            let z: f64 = row.iter().zip(&hidden).map(|(w, a)| w * a).sum::<f64>() + params[o_b2 + k];
            logits.push(z);
        }
        Activations { pre, hidden, logits }
    }

    /// Mean cross-entropy over `batch` at `params`; accumulates the gradient
    /// into `grad` when given.
    fn loss_with_grad(&self, params: &[f64], batch: &[&Sample], mut grad: Option<&mut [f64]>) -> f64 {
        let (h, d, c) = (self.hidden(), self.dim, self.classes);
        let (o_b1, o_w2, o_b2) = self.offsets();
        let scale = 1.0 / batch.len() as f64;
        if let Some(g) = grad.as_deref_mut() {
            g.fill(0.0);
        }
        let mut loss = 0.0;
        let mut delta_hidden = vec![0.0; h];
        for sample in batch {
            let x = &sample.features;
            let act = self.forward(params, x);
            let max = act.logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + act.logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
            loss += lse - act.logits[sample.label];

            let Some(g) = grad.as_deref_mut() else { continue };
            let mut probs = act.logits.clone();
            softmax_in_place(&mut probs);
            probs[sample.label] -= 1.0;
            delta_hidden.fill(0.0);
            for k in 0..c {
                let dz = probs[k] * scale;
                g[o_b2 + k] += dz;
                let w_row = o_w2 + k * h;
                for j in 0..h {
                    g[w_row + j] += dz * act.hidden[j];
                    delta_hidden[j] += dz * params[w_row + j];
                }
            }
            for j in 0..h {
                if act.pre[j] <= 0.0 {
                    continue;
                }
                let dz = delta_hidden[j];
                g[o_b1 + j] += dz;
                for (gw, xi) in g[j * d..(j + 1) * d].iter_mut().zip(x) {
                    *gw += dz * xi;
                }
            }
        }
        loss * scale
    }

    pub fn loss(&self, batch: &[&Sample]) -> f64 {
        self.loss_with_grad(&self.params, batch, None)
    }

    pub fn gradient(&self, batch: &[&Sample]) -> Vec<f64> {
        let mut g = vec![0.0; self.params.len()];
        self.loss_with_grad(&self.params, batch, Some(&mut g));
        g
    }

    pub fn accuracy(&self, samples: &[&Sample]) -> f64 {
        if samples.is_empty() {
            return 0.0;
        }
        let correct = samples
            .iter()
            .filter(|s| argmax(&self.forward(&self.params, &s.features).logits) == s.label)
            .count();
        correct as f64 / samples.len() as f64
    }

    /// Largest relative error between the analytic cross-entropy gradient and
    /// central finite differences (`h = 1e-5`) over every parameter.
    ///
    /// The relative error is `|a - n| / max(|a| + |n|, 1e-8)`.
    pub fn gradient_check(&self, batch: &[&Sample]) -> f64 {
        const H: f64 = 1e-5;
        let analytic = self.gradient(batch);
        let mut probe = self.params.clone();
        let mut worst: f64 = 0.0;
        for i in 0..probe.len() {
            let orig = probe[i];
            probe[i] = orig + H;
            let up = self.loss_with_grad(&probe, batch, None);
            probe[i] = orig - H;
            let down = self.loss_with_grad(&probe, batch, None);
            probe[i] = orig;
            let numeric = (up - down) / (2.0 * H);
            let a = analytic[i];
            let rel = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-8);
            worst = worst.max(rel);
        }
        worst
    }
}

impl Learner for Mlp {
    fn dim(&self) -> usize {
        self.dim
    }

    fn classes(&self) -> usize {
        self.classes
    }

    fn reset_to_snapshot(&mut self) {
        self.params.copy_from_slice(&self.initial);
        self.adam.reset();
    }

    fn train_until(
        &mut self,
        train: &[&Sample],
        pool: &[&[f64]],
        order_seed: u64,
        on_epoch: &mut dyn FnMut(usize, &[usize]),
    ) -> Result<TrainReport, LearnerError> {
        if train.is_empty() {
            return Err(LearnerError::EmptyTrainSet);
        }
        for s in train {
            self.check_dim(&s.features)?;
        }
        for x in pool {
            self.check_dim(x)?;
        }
        let mut grad = vec![0.0; self.params.len()];
        let mut order: Vec<usize> = Vec::with_capacity(train.len());
        let mut batch: Vec<&Sample> = Vec::with_capacity(self.config.batch_size);
        let mut accuracy = 0.0;
        for epoch in 1..=self.config.max_epochs {
            order.clear();
            order.extend(0..train.len());
            order.shuffle(&mut seed::stream(order_seed, "epoch-order", &[epoch as u64]));
            for chunk in order.chunks(self.config.batch_size) {
                batch.clear();
                batch.extend(chunk.iter().map(|&i| train[i]));
                let loss = self.loss_with_grad(&self.params, &batch, Some(&mut grad));
                if !loss.is_finite() {
                    return Err(LearnerError::Divergence { epoch });
                }
                self.adam.step(&mut self.params, &grad, self.config.learning_rate);
            }
            let preds: Vec<usize> = pool
                .iter()
                .map(|x| argmax(&self.forward(&self.params, x).logits))
                .collect();
            on_epoch(epoch, &preds);
            accuracy = self.accuracy(train);
            if accuracy >= self.config.train_acc_threshold {
                return Ok(TrainReport {
                    epochs_run: epoch,
                    final_train_accuracy: accuracy,
                    reached_threshold: true,
                });
            }
        }
        Ok(TrainReport {
            epochs_run: self.config.max_epochs,
            final_train_accuracy: accuracy,
            reached_threshold: false,
        })
    }

    fn predict_proba(&self, xs: &[&[f64]]) -> Result<Vec<Vec<f64>>, LearnerError> {
        xs.iter()
            .map(|x| {
                self.check_dim(x)?;
                let mut z = self.forward(&self.params, x).logits;
                softmax_in_place(&mut z);
                Ok(z)
            })
            .collect()
    }

    fn embed(&self, xs: &[&[f64]]) -> Result<Vec<Vec<f64>>, LearnerError> {
        xs.iter()
            .map(|x| {
                self.check_dim(x)?;
                Ok(self.forward(&self.params, x).hidden)
            })
            .collect()
    }

    fn parameters(&self) -> &[f64] {
        &self.params
    }

    fn snapshot(&self) -> &[f64] {
        &self.initial
    }
}

/// Per-dimension z-score transform fitted on unlabeled features.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    /// Population mean and standard deviation per feature. Constant features
    /// get a unit scale.
    pub fn fit<S: AsRef<[f64]>>(rows: &[S]) -> Self {
        let d = rows.first().map_or(0, |r| r.as_ref().len());
        let n = rows.len().max(1) as f64;
        let mut mean = vec![0.0; d];
        for r in rows {
            for (m, x) in mean.iter_mut().zip(r.as_ref()) {
                *m += x;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; d];
        for r in rows {
            for ((v, x), m) in var.iter_mut().zip(r.as_ref()).zip(&mean) {
                *v += (x - m) * (x - m);
            }
        }
        let std = var
            .into_iter()
            .map(|v| {
                let s = (v / n).sqrt();
                if s > 1e-12 {
                    s
                } else {
                    1.0
                }
            })
            .collect();
        Self { mean, std }
    }

    pub fn apply(&self, sample: &Sample) -> Sample {
        let f = sample
            .features
            .iter()
            .zip(&self.mean)
            .zip(&self.std)
            .map(|((x, m), s)| (x - m) / s)
            .collect();
        Sample::new(f, sample.label)
    }
}
