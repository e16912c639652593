//! Multinomial logistic regression: prediction, cross-entropy loss, analytic
//! gradients (optionally with a proximal term) and accuracy evaluation.

use serde::{Deserialize, Serialize};

use crate::data::Example;
use crate::error::{FedError, Result};

/// Softmax-regression parameters: the `classes x dim` weight matrix stored
/// row-major, followed by the bias vector, in one flat buffer. The flat
/// layout is the canonical exchange format between server and clients, so
/// aggregation, momentum and hashing all operate coordinate-wise on it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    classes: usize,
    dim: usize,
    data: Vec<f64>,
}

impl ModelParams {
    pub fn zeros(dim: usize, classes: usize) -> Self {
        ModelParams {
            classes,
            dim,
            data: vec![0.0; classes * dim + classes],
        }
    }

    /// Wraps an existing flat buffer (W row-major, then b).
    pub fn from_vec(dim: usize, classes: usize, data: Vec<f64>) -> Result<Self> {
        let expected = classes * dim + classes;
        if data.len() != expected {
            return Err(FedError::DimensionMismatch(format!(
                "flat parameter buffer has {} entries, expected {} for dim {} x classes {}",
                data.len(),
                expected,
                dim,
                classes
            )));
        }
        Ok(ModelParams { classes, dim, data })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn weight(&self, class: usize, feature: usize) -> f64 {
        self.data[class * self.dim + feature]
    }

    pub fn bias(&self, class: usize) -> f64 {
        self.data[self.classes * self.dim + class]
    }

    fn bias_offset(&self) -> usize {
        self.classes * self.dim
    }

    pub fn check_same_shape(&self, other: &Self) -> Result<()> {
        if self.dim != other.dim || self.classes != other.classes {
            return Err(FedError::DimensionMismatch(format!(
                "params ({} x {}) vs ({} x {})",
                self.classes, self.dim, other.classes, other.dim
            )));
        }
        Ok(())
    }

    /// Raw class scores `Wx + b`.
    pub fn logits(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dim {
            return Err(FedError::DimensionMismatch(format!(
                "feature vector has {} entries, model dim is {}",
                x.len(),
                self.dim
            )));
        }
        let bias = self.bias_offset();
        let mut out = Vec::with_capacity(self.classes);
        for c in 0..self.classes {
            let row = &self.data[c * self.dim..(c + 1) * self.dim];
            let mut acc = self.data[bias + c];
            for (w, xj) in row.iter().zip(x) {
                acc += w * xj;
            }
            out.push(acc);
        }
        Ok(out)
    }

    /// `self += factor * other`, coordinate-wise.
    pub fn add_scaled(&mut self, other: &Self, factor: f64) -> Result<()> {
        self.check_same_shape(other)?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += factor * b;
        }
        Ok(())
    }

    pub fn scale(&mut self, factor: f64) {
        for a in &mut self.data {
            *a *= factor;
        }
    }

    /// `self - other` as a new value.
    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.check_same_shape(other)?;
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a - b)
            .collect();
        Ok(ModelParams {
            classes: self.classes,
            dim: self.dim,
            data,
        })
    }

    pub fn l2_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Loss value and its gradient with the same shape as the parameters.
#[derive(Debug, Clone)]
pub struct GradEval {
    pub loss: f64,
    pub grad: ModelParams,
}

/// Index of the largest entry; ties break to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

fn stable_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    for p in &mut out {
        *p /= sum;
    }
    out
}

/// Class probabilities `softmax(Wx + b)`, computed with max-subtraction so
/// extreme logits do not overflow.
pub fn predict_proba(params: &ModelParams, x: &[f64]) -> Result<Vec<f64>> {
    Ok(stable_softmax(&params.logits(x)?))
}

/// Mean cross-entropy over a batch plus an optional proximal penalty
/// `prox_mu/2 * ||params - anchor||^2`, together with the analytic gradient
/// of that expression.
pub fn loss_and_grad(
    params: &ModelParams,
    batch: &[Example],
    prox_mu: f64,
    anchor: Option<&ModelParams>,
) -> Result<GradEval> {
    loss_and_grad_over(params, batch.iter(), prox_mu, anchor)
}

/// Iterator form of [`loss_and_grad`]; used for index-selected mini-batches.
pub fn loss_and_grad_over<'a, I>(
    params: &ModelParams,
    batch: I,
    prox_mu: f64,
    anchor: Option<&ModelParams>,
) -> Result<GradEval>
where
    I: IntoIterator<Item = &'a Example>,
{
    if prox_mu < 0.0 {
        return Err(FedError::InvalidParameter(format!(
            "prox_mu must be >= 0, got {prox_mu}"
        )));
    }
    let dim = params.dim();
    let classes = params.classes();
    let bias = params.bias_offset();
    let mut grad = ModelParams::zeros(dim, classes);
    let mut loss_sum = 0.0;
    let mut count = 0usize;
    for ex in batch {
        if ex.features.len() != dim {
            return Err(FedError::DimensionMismatch(format!(
                "example has {} features, model dim is {}",
                ex.features.len(),
                dim
            )));
        }
        if ex.label >= classes {
            return Err(FedError::DimensionMismatch(format!(
                "label {} out of range for {} classes",
                ex.label, classes
            )));
        }
        let logits = params.logits(&ex.features)?;
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        loss_sum += max + sum.ln() - logits[ex.label];
        let g = grad.as_mut_slice();
        for c in 0..classes {
            let coef = exps[c] / sum - if c == ex.label { 1.0 } else { 0.0 };
            let row = c * dim;
            for (j, &xj) in ex.features.iter().enumerate() {
                g[row + j] += coef * xj;
            }
            g[bias + c] += coef;
        }
        count += 1;
    }
    if count == 0 {
        return Err(FedError::Empty("loss_and_grad batch".into()));
    }
    let inv_n = 1.0 / count as f64;
    let mut loss = loss_sum * inv_n;
    grad.scale(inv_n);
    if prox_mu > 0.0 {
        let anchor = anchor.ok_or(FedError::MissingAnchor(prox_mu))?;
        params.check_same_shape(anchor)?;
        let mut sq = 0.0;
        let g = grad.as_mut_slice();
        for (i, (p, a)) in params.as_slice().iter().zip(anchor.as_slice()).enumerate() {
            let diff = p - a;
            sq += diff * diff;
            g[i] += prox_mu * diff;
        }
        loss += 0.5 * prox_mu * sq;
    }
    Ok(GradEval { loss, grad })
}

/// Mean cross-entropy of `params` over an example stream, forward pass only.
pub fn mean_loss_over<'a, I>(params: &ModelParams, examples: I) -> Result<f64>
where
    I: IntoIterator<Item = &'a Example>,
{
    let mut loss_sum = 0.0;
    let mut count = 0usize;
    for ex in examples {
        let logits = params.logits(&ex.features)?;
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = logits.iter().map(|&l| (l - max).exp()).sum();
        loss_sum += max + sum.ln() - logits[ex.label];
        count += 1;
    }
    if count == 0 {
        return Err(FedError::Empty("mean_loss example set".into()));
    }
    Ok(loss_sum / count as f64)
}

/// Fraction of examples whose argmax prediction equals the label.
pub fn accuracy(params: &ModelParams, examples: &[Example]) -> Result<f64> {
    accuracy_over(params, examples.iter())
}

/// Iterator form of [`accuracy`].
pub fn accuracy_over<'a, I>(params: &ModelParams, examples: I) -> Result<f64>
where
    I: IntoIterator<Item = &'a Example>,
{
    let mut correct = 0usize;
    let mut count = 0usize;
    for ex in examples {
        let logits = params.logits(&ex.features)?;
        if argmax(&logits) == ex.label {
            correct += 1;
        }
        count += 1;
    }
    if count == 0 {
        return Err(FedError::Empty("accuracy example set".into()));
    }
    Ok(correct as f64 / count as f64)
}
