//! Softmax classifiers with hand-written backprop.
//!
//! Weights are a single flat vector. Logistic regression stores `W (C×f)`
//! then `b (C)`; the one-hidden-layer MLP stores `W1 (h×f)`, `b1 (h)`,
//! `W2 (C×h)`, `b2 (C)`, all row-major. The hidden activation is `tanh`.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::data::Dataset;
use crate::error::ModelError;
use crate::linalg::GradientVector;
use crate::rng::{stream, Purpose};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    LogReg,
    Mlp,
}

impl FromStr for ModelKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "logreg" => Ok(ModelKind::LogReg),
            "mlp" | "mlp1" => Ok(ModelKind::Mlp),
            other => Err(format!("unknown model `{other}`")),
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::LogReg => "logreg",
            ModelKind::Mlp => "mlp",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Architecture {
    pub kind: ModelKind,
    pub features: usize,
    /// Ignored for logistic regression.
    pub hidden: usize,
    pub classes: usize,
}

impl Architecture {
    pub fn logreg(features: usize, classes: usize) -> Self {
        Self {
            kind: ModelKind::LogReg,
            features,
            hidden: 0,
            classes,
        }
    }

    pub fn mlp(features: usize, hidden: usize, classes: usize) -> Self {
        Self {
            kind: ModelKind::Mlp,
            features,
            hidden,
            classes,
        }
    }

    pub fn num_weights(&self) -> usize {
        let (f, h, c) = (self.features, self.hidden, self.classes);
        match self.kind {
            ModelKind::LogReg => f * c + c,
            ModelKind::Mlp => f * h + h + h * c + c,
        }
    }

    /// Uniform on `[−1/√fan_in, 1/√fan_in]` per layer, biases included.
    pub fn init_weights(&self, seed: u64) -> GradientVector {
        let mut rng = stream(seed, Purpose::ModelInit, &[]);
        let mut draw = |n: usize, fan_in: usize| -> Vec<f64> {
            let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
            (0..n).map(|_| rng.random_range(-bound..=bound)).collect()
        };
        let (f, h, c) = (self.features, self.hidden, self.classes);
        let w = match self.kind {
            ModelKind::LogReg => draw(f * c + c, f),
            ModelKind::Mlp => {
                let mut w = draw(f * h + h, f);
                w.extend(draw(h * c + c, h));
                w
            }
        };
        GradientVector::from_vec(w)
    }

    fn check(&self, weights: &[f64], ds: &Dataset) -> Result<(), ModelError> {
        if weights.len() != self.num_weights() {
            return Err(ModelError::WeightLength {
                expected: self.num_weights(),
                found: weights.len(),
            });
        }
        if ds.num_features() != self.features {
            return Err(ModelError::FeatureMismatch {
                expected: self.features,
                found: ds.num_features(),
            });
        }
        if ds.num_classes() > self.classes {
            return Err(ModelError::ClassMismatch {
                expected: self.classes,
                found: ds.num_classes(),
            });
        }
        Ok(())
    }

    /// Class scores for one input. `hidden` is scratch space of length `h`
    /// (left holding the activations).
    fn forward(&self, w: &[f64], x: &[f64], hidden: &mut [f64], logits: &mut [f64]) {
        let (f, h, c) = (self.features, self.hidden, self.classes);
        match self.kind {
            ModelKind::LogReg => {
                let (wm, b) = w.split_at(f * c);
                for k in 0..c {
                    logits[k] = b[k] + dot(&wm[k * f..(k + 1) * f], x);
                }
            }
            ModelKind::Mlp => {
                let (w1, rest) = w.split_at(f * h);
                let (b1, rest) = rest.split_at(h);
                let (w2, b2) = rest.split_at(h * c);
                for j in 0..h {
                    hidden[j] = (b1[j] + dot(&w1[j * f..(j + 1) * f], x)).tanh();
                }
                for k in 0..c {
                    logits[k] = b2[k] + dot(&w2[k * h..(k + 1) * h], hidden);
                }
            }
        }
    }

    pub fn logits(&self, weights: &[f64], x: &[f64]) -> Vec<f64> {
        let mut hidden = vec![0.0; self.hidden];
        let mut logits = vec![0.0; self.classes];
        self.forward(weights, x, &mut hidden, &mut logits);
        logits
    }

    /// Mean softmax cross-entropy over `batch` rows of `ds`, and its gradient.
    pub fn loss_and_grad(
        &self,
        weights: &[f64],
        ds: &Dataset,
        batch: &[usize],
    ) -> Result<(f64, GradientVector), ModelError> {
        self.check(weights, ds)?;
        if batch.is_empty() {
            return Err(ModelError::EmptyBatch);
        }
        let (f, h, c) = (self.features, self.hidden, self.classes);
        let mut grad = vec![0.0; weights.len()];
        let mut hidden = vec![0.0; h];
        let mut logits = vec![0.0; c];
        let mut dhidden = vec![0.0; h];
        let mut loss = 0.0;

        for &i in batch {
            let x = ds.row(i);
            let y = ds.label(i);
            self.forward(weights, x, &mut hidden, &mut logits);
            let lse = log_sum_exp(&logits);
            loss += lse - logits[y];
            // logits become dL/dz = softmax − onehot.
            for (k, z) in logits.iter_mut().enumerate() {
                *z = (*z - lse).exp() - if k == y { 1.0 } else { 0.0 };
            }
            let dz = &logits;
            match self.kind {
                ModelKind::LogReg => {
                    let (gw, gb) = grad.split_at_mut(f * c);
                    for k in 0..c {
                        axpy(&mut gw[k * f..(k + 1) * f], dz[k], x);
                        gb[k] += dz[k];
                    }
                }
                ModelKind::Mlp => {
                    let w2 = &weights[f * h + h..f * h + h + h * c];
                    let (gw1, rest) = grad.split_at_mut(f * h);
                    let (gb1, rest) = rest.split_at_mut(h);
                    let (gw2, gb2) = rest.split_at_mut(h * c);
                    dhidden.iter_mut().for_each(|v| *v = 0.0);
                    for k in 0..c {
                        axpy(&mut gw2[k * h..(k + 1) * h], dz[k], &hidden);
                        gb2[k] += dz[k];
                        axpy(&mut dhidden, dz[k], &w2[k * h..(k + 1) * h]);
                    }
                    for j in 0..h {
                        let da = dhidden[j] * (1.0 - hidden[j] * hidden[j]);
                        axpy(&mut gw1[j * f..(j + 1) * f], da, x);
                        gb1[j] += da;
                    }
                }
            }
        }
        let scale = 1.0 / batch.len() as f64;
        loss *= scale;
        grad.iter_mut().for_each(|g| *g *= scale);
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(ModelError::NonFinite);
        }
        Ok((loss, GradientVector::from_vec(grad)))
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

pub(crate) fn log_sum_exp(z: &[f64]) -> f64 {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// An architecture with its weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub arch: Architecture,
    pub weights: GradientVector,
}

impl Model {
    pub fn new(arch: Architecture, weights: GradientVector) -> Result<Self, ModelError> {
        if weights.dim() != arch.num_weights() {
            return Err(ModelError::WeightLength {
                expected: arch.num_weights(),
                found: weights.dim(),
            });
        }
        Ok(Self { arch, weights })
    }

    pub fn initialized(arch: Architecture, seed: u64) -> Self {
        let weights = arch.init_weights(seed);
        Self { arch, weights }
    }

    pub fn zeros(arch: Architecture) -> Self {
        Self {
            arch,
            weights: GradientVector::zeros(arch.num_weights()),
        }
    }

    pub fn dim(&self) -> usize {
        self.weights.dim()
    }

    pub fn loss_and_grad(
        &self,
        ds: &Dataset,
        batch: &[usize],
    ) -> Result<(f64, GradientVector), ModelError> {
        self.arch.loss_and_grad(&self.weights, ds, batch)
    }

    /// Argmax class, ties to the lowest index.
    pub fn predict(&self, x: &[f64]) -> usize {
        let z = self.arch.logits(&self.weights, x);
        let mut best = 0;
        for k in 1..z.len() {
            if z[k] > z[best] {
                best = k;
            }
        }
        best
    }
}
