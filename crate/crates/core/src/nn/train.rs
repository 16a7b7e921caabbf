//! Deterministic mini-batch training.
//!
//! Per-sample gradients are computed in parallel and summed in sample order,
//! so results are bit-identical regardless of thread count.

use ndarray::{Array2, ArrayView2};
use rand::seq::SliceRandom;
use rayon::prelude::*;

use super::{Network, ReluRule};
use crate::config::rng_from_seed;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    /// Cross-entropy targets become `1 - eps` / `eps / (N - 1)`.
    pub label_smoothing: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { epochs: 12, batch_size: 16, learning_rate: 3e-3, weight_decay: 1e-4, label_smoothing: 0.0, seed: 0 }
    }
}

/// Training objective on the raw network output.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Objective {
    /// Softmax cross-entropy; targets are class indices.
    SoftmaxCrossEntropy,
    /// Squared error on output 0; targets are real values.
    SquaredError,
}

struct Adam {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: i32,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(net: &Network) -> Self {
        let shapes: Vec<Vec<f64>> = net.params().iter().map(|p| vec![0.0; p.len()]).collect();
        Self { m: shapes.clone(), v: shapes, step: 0 }
    }

    fn update(&mut self, net: &mut Network, grads: &Network, lr: f64, weight_decay: f64) {
        self.step += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.step);
        let c2 = 1.0 - Self::BETA2.powi(self.step);
        for (((p, g), m), v) in net
            .params_mut()
            .into_iter()
            .zip(grads.params())
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            for j in 0..p.len() {
                let gj = g[j] + weight_decay * p[j];
                m[j] = Self::BETA1 * m[j] + (1.0 - Self::BETA1) * gj;
                v[j] = Self::BETA2 * v[j] + (1.0 - Self::BETA2) * gj * gj;
                p[j] -= lr * (m[j] / c1) / ((v[j] / c2).sqrt() + Self::EPS);
            }
        }
    }
}

pub(crate) fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Loss and d loss / d raw output for one sample.
fn loss_and_grad(objective: Objective, raw: &Array2<f64>, target: f64, smoothing: f64) -> (f64, Array2<f64>) {
    let logits: Vec<f64> = raw.column(0).to_vec();
    match objective {
        Objective::SoftmaxCrossEntropy => {
            let class = target as usize;
            let p = softmax(&logits);
            let n = p.len();
            let off = if n > 1 { smoothing / (n - 1) as f64 } else { 0.0 };
            let mut loss = 0.0;
            let mut g = Array2::zeros(raw.dim());
            for (k, pk) in p.iter().enumerate() {
                let q = if k == class { 1.0 - smoothing } else { off };
                loss -= q * pk.max(1e-300).ln();
                g[[k, 0]] = pk - q;
            }
            (loss, g)
        }
        Objective::SquaredError => {
            let diff = logits[0] - target;
            let mut g = Array2::zeros(raw.dim());
            g[[0, 0]] = 2.0 * diff;
            (diff * diff, g)
        }
    }
}

/// Trains `net` in place; returns the mean loss of each epoch.
pub fn train(
    net: &mut Network,
    inputs: &[ArrayView2<'_, f64>],
    targets: &[f64],
    objective: Objective,
    config: &TrainConfig,
) -> Result<Vec<f64>> {
    if inputs.len() != targets.len() || inputs.is_empty() {
        return Err(Error::InvalidParameter(format!(
            "{} inputs for {} targets",
            inputs.len(),
            targets.len()
        )));
    }
    let mut rng = rng_from_seed(config.seed);
    let mut adam = Adam::new(net);
    let mut order: Vec<usize> = (0..inputs.len()).collect();
    let mut history = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(config.batch_size.max(1)) {
            let frozen: &Network = net;
            let per_sample: Vec<(f64, Network)> = batch
                .par_iter()
                .map(|&i| {
                    let trace = frozen.forward_traced(inputs[i]);
                    let (loss, g) = loss_and_grad(objective, trace.output(), targets[i], config.label_smoothing);
                    let mut grads = frozen.zeros_like();
                    frozen.backward(&trace, g, ReluRule::Standard, &[], Some(&mut grads));
                    (loss, grads)
                })
                .collect();
            let mut total = net.zeros_like();
            let scale = 1.0 / batch.len() as f64;
            for (loss, grads) in &per_sample {
                epoch_loss += loss;
                for (acc, g) in total.params_mut().into_iter().zip(grads.params()) {
                    for (a, b) in acc.iter_mut().zip(g) {
                        *a += b * scale;
                    }
                }
            }
            adam.update(net, &total, config.learning_rate, config.weight_decay);
        }
        let mean = epoch_loss / inputs.len() as f64;
        if !mean.is_finite() {
            return Err(Error::TrainingDivergence(epoch));
        }
        history.push(mean);
    }
    Ok(history)
}
