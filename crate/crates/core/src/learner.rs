//! Desk-scale models and local optimizers.
//!
//! Two architectures share one flat parameter layout convention: every dense
//! layer is stored row by row, each row holding the input weights followed by
//! the bias. A softmax regression is a single such layer; the MLP stacks a
//! `tanh` hidden layer in front of it.

use std::ops::{Index, IndexMut};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::datahub::LabeledDataset;
use crate::error::{Error, Result};
use crate::seed::{rng_for, SimRng};

/// Half-width of the uniform initialisation interval.
pub const INIT_SCALE: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    pub fn zeros(len: usize) -> Self {
        Self(vec![0.0; len])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|x| x.is_finite())
    }

    pub fn dot(&self, other: &ParamVector) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum()
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn scaled(&self, k: f64) -> ParamVector {
        Self(self.0.iter().map(|x| x * k).collect())
    }
}

impl From<Vec<f64>> for ParamVector {
    fn from(v: Vec<f64>) -> Self {
        Self(v)
    }
}

impl Index<usize> for ParamVector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl IndexMut<usize> for ParamVector {
    fn index_mut(&mut self, i: usize) -> &mut f64 {
        &mut self.0[i]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModelKind {
    SoftmaxRegression,
    Mlp1Hidden,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub input_dim: usize,
    pub num_classes: usize,
    /// Ignored for softmax regression.
    pub hidden_dim: usize,
}

impl ModelSpec {
    pub fn new(
        kind: ModelKind,
        input_dim: usize,
        num_classes: usize,
        hidden_dim: usize,
    ) -> Result<Self> {
        if input_dim == 0 || num_classes < 2 {
            return Err(Error::Config(format!(
                "model needs input_dim >= 1 and num_classes >= 2 (got {input_dim}, {num_classes})"
            )));
        }
        if kind == ModelKind::Mlp1Hidden && hidden_dim == 0 {
            return Err(Error::Config("MLP hidden_dim must be >= 1".into()));
        }
        Ok(Self {
            kind,
            input_dim,
            num_classes,
            hidden_dim,
        })
    }

    pub fn param_count(&self) -> usize {
        match self.kind {
            ModelKind::SoftmaxRegression => (self.input_dim + 1) * self.num_classes,
            ModelKind::Mlp1Hidden => {
                (self.input_dim + 1) * self.hidden_dim + (self.hidden_dim + 1) * self.num_classes
            }
        }
    }

    fn check(&self, w: &ParamVector, input_len: usize) -> Result<()> {
        if w.len() != self.param_count() {
            return Err(Error::Config(format!(
                "parameter vector has {} entries, model expects {}",
                w.len(),
                self.param_count()
            )));
        }
        if input_len != self.input_dim {
            return Err(Error::Config(format!(
                "sample has {input_len} features, model expects {}",
                self.input_dim
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    pub learning_rate: f64,
    pub local_epochs: usize,
    pub batch_size: usize,
    /// Proximal coefficient, used by FedProx only.
    pub prox_mu: f64,
}

impl Default for HyperParams {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            local_epochs: 2,
            batch_size: 32,
            prox_mu: 0.01,
        }
    }
}

impl HyperParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning_rate must be > 0, got {}",
                self.learning_rate
            )));
        }
        if self.local_epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config(
                "local_epochs and batch_size must be >= 1".into(),
            ));
        }
        if !(self.prox_mu >= 0.0 && self.prox_mu.is_finite()) {
            return Err(Error::Config(format!(
                "prox_mu must be >= 0, got {}",
                self.prox_mu
            )));
        }
        Ok(())
    }
}

/// SCAFFOLD control variates.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlVariate {
    pub local_c: ParamVector,
    pub global_c: ParamVector,
}

impl ControlVariate {
    pub fn zeros(len: usize) -> Self {
        Self {
            local_c: ParamVector::zeros(len),
            global_c: ParamVector::zeros(len),
        }
    }
}

/// Uniform on `[-INIT_SCALE, INIT_SCALE]` per entry.
pub fn init_params(spec: &ModelSpec, seed: u64) -> ParamVector {
    let mut rng = rng_for(seed, "init-params", 0);
    (0..spec.param_count())
        .map(|_| rng.random_range(-INIT_SCALE..=INIT_SCALE))
        .collect::<Vec<_>>()
        .into()
}

/// `out[r] = W[r] . x + b[r]` for a row-major layer of `out.len()` rows.
fn dense(layer: &[f64], x: &[f64], out: &mut [f64]) {
    let stride = x.len() + 1;
    for (r, o) in out.iter_mut().enumerate() {
        let row = &layer[r * stride..(r + 1) * stride];
        *o = row[..x.len()]
            .iter()
            .zip(x)
            .map(|(a, b)| a * b)
            .sum::<f64>()
            + row[x.len()];
    }
}

/// Accumulates `g[r] += delta[r] * [x, 1]` into a layer gradient.
fn dense_grad(grad: &mut [f64], x: &[f64], delta: &[f64]) {
    let stride = x.len() + 1;
    for (r, &d) in delta.iter().enumerate() {
        let row = &mut grad[r * stride..(r + 1) * stride];
        for (g, &xi) in row[..x.len()].iter_mut().zip(x) {
            *g += d * xi;
        }
        row[x.len()] += d;
    }
}

fn logits_into(w: &[f64], x: &[f64], spec: &ModelSpec, hidden: &mut [f64], logits: &mut [f64]) {
    match spec.kind {
        ModelKind::SoftmaxRegression => dense(w, x, logits),
        ModelKind::Mlp1Hidden => {
            let split = (spec.input_dim + 1) * spec.hidden_dim;
            dense(&w[..split], x, hidden);
            for h in hidden.iter_mut() {
                *h = h.tanh();
            }
            dense(&w[split..], hidden, logits);
        }
    }
}

/// Class scores (pre-softmax) for one sample.
pub fn logits(w: &ParamVector, x: &[f64], spec: &ModelSpec) -> Vec<f64> {
    let mut hidden = vec![0.0; spec.hidden_dim];
    let mut out = vec![0.0; spec.num_classes];
    logits_into(w.as_slice(), x, spec, &mut hidden, &mut out);
    out
}

/// Index of the largest score, lowest index on ties.
pub fn argmax(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

pub fn predict(w: &ParamVector, x: &[f64], spec: &ModelSpec) -> usize {
    argmax(&logits(w, x, spec))
}

pub fn predict_all(w: &ParamVector, data: &LabeledDataset, spec: &ModelSpec) -> Vec<usize> {
    (0..data.len())
        .map(|i| predict(w, data.row(i), spec))
        .collect()
}

/// Mean cross-entropy and its gradient over the rows `indices` of `data`.
pub fn loss_and_grad(
    w: &ParamVector,
    data: &LabeledDataset,
    indices: &[usize],
    spec: &ModelSpec,
) -> Result<(f64, ParamVector)> {
    if indices.is_empty() {
        return Err(Error::Config("empty batch".into()));
    }
    spec.check(w, data.input_dim())?;
    if data.num_classes() > spec.num_classes {
        return Err(Error::Config(format!(
            "dataset has {} classes, model outputs {}",
            data.num_classes(),
            spec.num_classes
        )));
    }
    let ws = w.as_slice();
    let mut grad = vec![0.0; ws.len()];
    let mut hidden = vec![0.0; spec.hidden_dim];
    let mut z = vec![0.0; spec.num_classes];
    let mut loss = 0.0;
    let scale = 1.0 / indices.len() as f64;

    for &i in indices {
        let x = data.row(i);
        let y = data.label(i);
        logits_into(ws, x, spec, &mut hidden, &mut z);
        let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum_exp: f64 = z.iter().map(|v| (v - max).exp()).sum();
        let lse = max + sum_exp.ln();
        loss += lse - z[y];
        // dL/dz = softmax - onehot, scaled for the batch mean.
        let delta: Vec<f64> = z
            .iter()
            .enumerate()
            .map(|(c, v)| ((v - lse).exp() - if c == y { 1.0 } else { 0.0 }) * scale)
            .collect();
        match spec.kind {
            ModelKind::SoftmaxRegression => dense_grad(&mut grad, x, &delta),
            ModelKind::Mlp1Hidden => {
                let split = (spec.input_dim + 1) * spec.hidden_dim;
                let (g1, g2) = grad.split_at_mut(split);
                dense_grad(g2, &hidden, &delta);
                let out_layer = &ws[split..];
                let stride = spec.hidden_dim + 1;
                let dh: Vec<f64> = (0..spec.hidden_dim)
                    .map(|h| {
                        let back: f64 = delta
                            .iter()
                            .enumerate()
                            .map(|(c, d)| d * out_layer[c * stride + h])
                            .sum();
                        back * (1.0 - hidden[h] * hidden[h])
                    })
                    .collect();
                dense_grad(g1, x, &dh);
            }
        }
    }
    let loss = loss * scale;
    let grad = ParamVector(grad);
    if !loss.is_finite() || !grad.is_finite() {
        return Err(Error::NonFinite("loss or gradient is not finite".into()));
    }
    Ok((loss, grad))
}

/// `w - lr * grad`
pub fn sgd_step(w: &ParamVector, grad: &ParamVector, lr: f64) -> ParamVector {
    debug_assert_eq!(w.len(), grad.len());
    ParamVector(w.0.iter().zip(&grad.0).map(|(w, g)| w - lr * g).collect())
}

/// `grad + mu * (w - anchor)`
pub fn prox_grad(
    grad: &ParamVector,
    w: &ParamVector,
    anchor: &ParamVector,
    mu: f64,
) -> ParamVector {
    ParamVector(
        grad.0
            .iter()
            .zip(w.0.iter().zip(&anchor.0))
            .map(|(g, (w, a))| g + mu * (w - a))
            .collect(),
    )
}

/// `grad - local_c + global_c`, evaluated as `grad + (global_c - local_c)`
/// so equal variates leave `grad` bit-identical.
pub fn scaffold_grad(grad: &ParamVector, cv: &ControlVariate) -> ParamVector {
    ParamVector(
        grad.0
            .iter()
            .zip(cv.local_c.0.iter().zip(&cv.global_c.0))
            .map(|(g, (l, c))| g + (c - l))
            .collect(),
    )
}

/// Refreshes the local control variate after `steps` local SGD steps:
/// `local_c - global_c + (w_before - w_after) / (steps * lr)`.
pub fn scaffold_update_cv(
    cv: &ControlVariate,
    w_before: &ParamVector,
    w_after: &ParamVector,
    lr: f64,
    steps: usize,
) -> ControlVariate {
    let k = 1.0 / (steps as f64 * lr);
    let local_c = cv
        .local_c
        .0
        .iter()
        .zip(&cv.global_c.0)
        .zip(w_before.0.iter().zip(&w_after.0))
        .map(|((l, c), (b, a))| l - c + (b - a) * k)
        .collect::<Vec<_>>();
    ControlVariate {
        local_c: ParamVector(local_c),
        global_c: cv.global_c.clone(),
    }
}

/// Gradient correction applied at every local step.
#[derive(Debug, Clone, Copy)]
pub enum Correction<'a> {
    None,
    Prox { anchor: &'a ParamVector, mu: f64 },
    Scaffold(&'a ControlVariate),
}

/// Runs `local_epochs` epochs of mini-batch SGD over `data`, reshuffling the
/// sample order each epoch with `rng`. The final partial batch is kept.
/// Returns the number of SGD steps taken.
pub fn train_local(
    spec: &ModelSpec,
    hp: &HyperParams,
    w: &mut ParamVector,
    data: &LabeledDataset,
    rng: &mut SimRng,
    correction: Correction<'_>,
) -> Result<usize> {
    if data.is_empty() {
        return Err(Error::Config("cannot train on an empty dataset".into()));
    }
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut steps = 0;
    for _ in 0..hp.local_epochs {
        order.shuffle(rng);
        for batch in order.chunks(hp.batch_size) {
            let (_, grad) = loss_and_grad(w, data, batch, spec)?;
            let grad = match correction {
                Correction::None => grad,
                Correction::Prox { anchor, mu } => prox_grad(&grad, w, anchor, mu),
                Correction::Scaffold(cv) => scaffold_grad(&grad, cv),
            };
            *w = sgd_step(w, &grad, hp.learning_rate);
            steps += 1;
        }
    }
    if !w.is_finite() {
        return Err(Error::NonFinite(
            "model diverged during local training; lower the learning rate".into(),
        ));
    }
    Ok(steps)
}
