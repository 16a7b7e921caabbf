//! Generator-based counterfactuals: invert a record into a generator's latent
//! space, then walk the latent towards a target model output while staying
//! close to the starting point.

use ndarray::{Array1, Array2, ArrayView2};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::config::{derive_seed, rng_from_seed};
use crate::error::{Error, Result};
use crate::nn::ReluRule;
use crate::record::EcgRecord;
use crate::wrapper::{as_batch, GradSpace, WrappedModel};

/// A differentiable map from a latent vector to an `(L, T)` signal.
pub trait EcgGenerator: Send + Sync {
    fn latent_dim(&self) -> usize;
    fn sampling_rate(&self) -> u32;
    /// `(leads, samples)` of every generated signal.
    fn output_shape(&self) -> (usize, usize);
    fn lead_names(&self) -> Vec<String>;
    /// Deterministic in `z`; always finite.
    fn generate(&self, z: &[f64]) -> Array2<f64>;
    /// Vector-Jacobian product: `grad^T d generate(z) / dz`.
    fn pullback(&self, z: &[f64], grad: ArrayView2<'_, f64>) -> Vec<f64>;
}

/// Output length of a resampling from `old_rate` to `new_rate`.
pub fn resampled_len(samples: usize, old_rate: u32, new_rate: u32) -> usize {
    (samples as f64 * new_rate as f64 / old_rate as f64).round() as usize
}

/// Interpolation stencil of output sample `j`: `(left index, right weight)`.
fn stencil(j: usize, old_len: usize, ratio: f64) -> (usize, f64) {
    let pos = (j as f64 * ratio).min((old_len - 1) as f64);
    let i = pos.floor() as usize;
    if i + 1 >= old_len {
        (old_len - 1, 0.0)
    } else {
        (i, pos - i as f64)
    }
}

/// Linear-interpolation resampling of each row; sample `j` of the output lies
/// at time `j / new_rate`, clamped to the last input sample.
pub fn resample_array(signal: ArrayView2<'_, f64>, old_rate: u32, new_rate: u32) -> Result<Array2<f64>> {
    check_rates(old_rate, new_rate)?;
    if old_rate == new_rate {
        return Ok(signal.to_owned());
    }
    let (leads, old_len) = signal.dim();
    let new_len = resampled_len(old_len, old_rate, new_rate);
    let ratio = old_rate as f64 / new_rate as f64;
    let mut out = Array2::zeros((leads, new_len));
    for j in 0..new_len {
        let (i, w) = stencil(j, old_len, ratio);
        for l in 0..leads {
            let right = if w > 0.0 { signal[[l, i + 1]] } else { 0.0 };
            out[[l, j]] = (1.0 - w) * signal[[l, i]] + w * right;
        }
    }
    Ok(out)
}

/// Transpose of [`resample_array`]: maps a gradient on the resampled signal
/// back to the original `old_len` samples.
pub fn resample_pullback(grad: ArrayView2<'_, f64>, old_len: usize, old_rate: u32, new_rate: u32) -> Result<Array2<f64>> {
    check_rates(old_rate, new_rate)?;
    if old_rate == new_rate {
        return Ok(grad.to_owned());
    }
    let (leads, new_len) = grad.dim();
    let ratio = old_rate as f64 / new_rate as f64;
    let mut out = Array2::zeros((leads, old_len));
    for j in 0..new_len {
        let (i, w) = stencil(j, old_len, ratio);
        for l in 0..leads {
            out[[l, i]] += (1.0 - w) * grad[[l, j]];
            if w > 0.0 {
                out[[l, i + 1]] += w * grad[[l, j]];
            }
        }
    }
    Ok(out)
}

fn check_rates(old_rate: u32, new_rate: u32) -> Result<()> {
    if old_rate == 0 || new_rate == 0 {
        return Err(Error::InvalidParameter("sampling rates must be positive".into()));
    }
    Ok(())
}

/// Resamples a record to `new_rate`; identity when the rates match.
pub fn resample(record: &EcgRecord, new_rate: u32) -> Result<EcgRecord> {
    let signal = resample_array(record.signal(), record.sampling_rate(), new_rate)?;
    EcgRecord::new(signal, new_rate, record.lead_names().to_vec())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InversionParams {
    pub restarts: usize,
    pub steps: usize,
    pub learning_rate: f64,
}

impl Default for InversionParams {
    fn default() -> Self {
        Self { restarts: 4, steps: 500, learning_rate: 0.1 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Inversion {
    pub z: Vec<f64>,
    pub mse: f64,
}

/// Latent whose generated signal best reconstructs `record` (mean squared
/// error), over `restarts` standard-normal starts each refined by Adam.
/// The record must already be at the generator's rate and shape.
pub fn invert(generator: &dyn EcgGenerator, record: &EcgRecord, params: &InversionParams, seed: u64) -> Result<Inversion> {
    if record.sampling_rate() != generator.sampling_rate() {
        return Err(Error::InvalidParameter(format!(
            "record is at {} Hz, generator at {} Hz; resample first",
            record.sampling_rate(),
            generator.sampling_rate()
        )));
    }
    if record.signal().dim() != generator.output_shape() {
        return Err(Error::ShapeMismatch(format!(
            "record is {:?}, generator produces {:?}",
            record.signal().dim(),
            generator.output_shape()
        )));
    }
    if params.restarts == 0 {
        return Err(Error::InvalidParameter("at least one inversion restart is required".into()));
    }
    let target = record.signal();
    let count = target.len() as f64;
    let dim = generator.latent_dim();
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let mut best: Option<Inversion> = None;
    for restart in 0..params.restarts {
        let mut rng = rng_from_seed(derive_seed(seed, "invert", restart as u64));
        let mut z: Vec<f64> = (0..dim).map(|_| unit.sample(&mut rng)).collect();
        let mut adam = AdamState::new(dim);
        let mut local = Inversion { z: z.clone(), mse: f64::INFINITY };
        for _ in 0..=params.steps {
            let residual = generator.generate(&z) - &target;
            let mse = residual.iter().map(|r| r * r).sum::<f64>() / count;
            if !mse.is_finite() {
                return Err(Error::NonFiniteLoss("inversion"));
            }
            if mse < local.mse {
                local = Inversion { z: z.clone(), mse };
            }
            let grad = generator.pullback(&z, (residual * (2.0 / count)).view());
            adam.step(&mut z, &grad, params.learning_rate);
        }
        if best.as_ref().is_none_or(|b| local.mse < b.mse) {
            best = Some(local);
        }
    }
    Ok(best.expect("at least one restart"))
}

struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl AdamState {
    fn new(dim: usize) -> Self {
        Self { m: vec![0.0; dim], v: vec![0.0; dim], t: 0 }
    }

    fn step(&mut self, z: &mut [f64], grad: &[f64], lr: f64) {
        const B1: f64 = 0.9;
        const B2: f64 = 0.999;
        self.t += 1;
        let (c1, c2) = (1.0 - B1.powi(self.t), 1.0 - B2.powi(self.t));
        for i in 0..z.len() {
            self.m[i] = B1 * self.m[i] + (1.0 - B1) * grad[i];
            self.v[i] = B2 * self.v[i] + (1.0 - B2) * grad[i] * grad[i];
            z[i] -= lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + 1e-8);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CounterfactualParams {
    pub lambda_prox: f64,
    pub max_steps: usize,
    pub tol: f64,
    /// Initial step size; halved on every rejected step and grown by 1.5x on
    /// every accepted one.
    pub step_size: f64,
    /// Consecutive steps without a loss decrease before giving up.
    pub patience: usize,
    /// Number of descent starts: `z0` itself, then `z0` plus seeded
    /// Gaussian offsets. Starts are tried in order until one converges.
    pub starts: usize,
    /// Standard deviation of the start offsets.
    pub start_sigma: f64,
    pub inversion: InversionParams,
}

impl Default for CounterfactualParams {
    fn default() -> Self {
        Self {
            lambda_prox: 0.1,
            max_steps: 300,
            tol: 0.05,
            step_size: 0.5,
            patience: 50,
            starts: 8,
            start_sigma: 1.0,
            inversion: InversionParams::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub step: usize,
    pub total: f64,
    pub pred_term: f64,
    pub proximity_term: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CounterfactualResult {
    pub original: EcgRecord,
    pub counterfactual: EcgRecord,
    /// Reconstruction of the original through the generator at `z_init`.
    pub reconstruction: EcgRecord,
    pub reconstruction_mse: f64,
    pub original_pred: f64,
    pub cf_pred: f64,
    pub target_value: f64,
    pub z_init: Vec<f64>,
    pub z_final: Vec<f64>,
    /// Accepted iterates only, so `total` never increases.
    pub loss_trace: Vec<LossRecord>,
    pub converged: bool,
}

impl CounterfactualResult {
    /// Euclidean distance travelled in latent space.
    pub fn latent_distance(&self) -> f64 {
        self.z_final.iter().zip(&self.z_init).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt()
    }

    /// `step,total,pred_term,proximity_term` rows with a header.
    pub fn trace_csv(&self) -> String {
        let mut out = String::from("step,total,pred_term,proximity_term\n");
        for r in &self.loss_trace {
            out.push_str(&format!("{},{:e},{:e},{:e}\n", r.step, r.total, r.pred_term, r.proximity_term));
        }
        out
    }
}

/// Model output and its latent gradient for generated signals, bridging the
/// generator and model sampling rates.
struct Objective<'a> {
    model: &'a WrappedModel,
    generator: &'a dyn EcgGenerator,
    target: usize,
    rate: u32,
    lead_names: Vec<String>,
}

impl Objective<'_> {
    fn record(&self, z: &[f64]) -> Result<EcgRecord> {
        let signal = resample_array(self.generator.generate(z).view(), self.generator.sampling_rate(), self.rate)?;
        EcgRecord::new(signal, self.rate, self.lead_names.clone())
    }

    /// `(F(z), dF/dz)`.
    fn eval(&self, z: &[f64]) -> Result<(f64, Vec<f64>)> {
        let record = self.record(z)?;
        let res = self
            .model
            .input_gradient(as_batch(&record).view(), self.target, GradSpace::Output, ReluRule::Standard)?;
        let pred = res.output[[0, self.target]];
        let grad = res.input_grad.index_axis(ndarray::Axis(0), 0);
        let (_, gen_len) = self.generator.output_shape();
        let grad = resample_pullback(grad, gen_len, self.generator.sampling_rate(), self.rate)?;
        Ok((pred, self.generator.pullback(z, grad.view())))
    }
}

fn loss_terms(pred: f64, target_value: f64, z: &[f64], z0: &[f64], lambda: f64) -> (f64, f64) {
    let dist2: f64 = z.iter().zip(z0).map(|(a, b)| (a - b).powi(2)).sum();
    ((pred - target_value).powi(2), lambda * dist2)
}

struct Descent {
    z: Vec<f64>,
    pred: f64,
    trace: Vec<LossRecord>,
    converged: bool,
}

impl Descent {
    fn total(&self) -> f64 {
        self.trace.last().expect("trace starts with step 0").total
    }
}

/// Backtracking gradient descent on the counterfactual loss from `start`.
fn descend(objective: &Objective<'_>, start: Vec<f64>, z0: &[f64], target_value: f64, params: &CounterfactualParams) -> Result<Descent> {
    let lambda = params.lambda_prox;
    let mut z = start;
    let (mut pred, mut grad_f) = objective.eval(&z)?;
    let (mut pred_term, mut prox_term) = loss_terms(pred, target_value, &z, z0, lambda);
    let mut trace = vec![LossRecord { step: 0, total: pred_term + prox_term, pred_term, proximity_term: prox_term }];
    let mut step_size = params.step_size;
    let mut stale = 0;
    let mut converged = (pred - target_value).abs() <= params.tol;
    let mut step = 0;
    while !converged && step < params.max_steps && stale < params.patience {
        step += 1;
        let total = pred_term + prox_term;
        let candidate: Vec<f64> = (0..z.len())
            .map(|i| {
                let g = 2.0 * (pred - target_value) * grad_f[i] + 2.0 * lambda * (z[i] - z0[i]);
                z[i] - step_size * g
            })
            .collect();
        let (c_pred, c_grad) = objective.eval(&candidate)?;
        let (c_pred_term, c_prox) = loss_terms(c_pred, target_value, &candidate, z0, lambda);
        let c_total = c_pred_term + c_prox;
        if !c_total.is_finite() {
            return Err(Error::NonFiniteLoss("counterfactual search"));
        }
        if c_total < total {
            stale = if total - c_total > 1e-12 * total.max(1e-12) { 0 } else { stale + 1 };
            z = candidate;
            (pred, grad_f, pred_term, prox_term) = (c_pred, c_grad, c_pred_term, c_prox);
            trace.push(LossRecord { step, total: c_total, pred_term, proximity_term: prox_term });
            step_size *= 1.5;
            converged = (pred - target_value).abs() <= params.tol;
        } else {
            stale += 1;
            step_size *= 0.5;
        }
    }
    Ok(Descent { z, pred, trace, converged })
}

/// Searches the generator's latent space for a signal near `record` whose
/// target output is `target_value`.
///
/// Minimizes `(F(G(z)) - target_value)^2 + lambda ||z - z0||^2`, where `z0`
/// is the inversion of `record`, by gradient descent with step-size
/// backtracking (only decreasing steps are accepted). A descent stops as soon
/// as `|F(G(z)) - target_value| <= tol` (`converged`), after `max_steps`, or
/// after `patience` steps without improvement. Descents start from `z0` and
/// then from seeded perturbations of it until one converges; otherwise the
/// lowest-loss descent is returned.
pub fn explain_cf(
    model: &WrappedModel,
    generator: &dyn EcgGenerator,
    record: &EcgRecord,
    target: usize,
    target_value: f64,
    params: &CounterfactualParams,
    seed: u64,
) -> Result<CounterfactualResult> {
    model.check_target(target)?;
    if !(params.lambda_prox >= 0.0) || !(params.tol >= 0.0) || !(params.step_size > 0.0) || !(params.start_sigma >= 0.0) {
        return Err(Error::InvalidParameter(
            "lambda_prox, tol and start_sigma must be >= 0, step_size > 0".into(),
        ));
    }
    if model.task().is_classification() && !(0.0..=1.0).contains(&target_value) {
        return Err(Error::InvalidParameter(format!("target value {target_value} is not a probability")));
    }
    let original_pred = model.predict(as_batch(record).view(), Some(target), false)?.output[[0, 0]];
    let at_gen_rate = resample(record, generator.sampling_rate())?;
    let inversion = invert(generator, &at_gen_rate, &params.inversion, derive_seed(seed, "cf-invert", 0))?;
    let z0 = inversion.z.clone();
    let objective = Objective {
        model,
        generator,
        target,
        rate: record.sampling_rate(),
        lead_names: record.lead_names().to_vec(),
    };

    let offsets = Normal::new(0.0, params.start_sigma.max(f64::MIN_POSITIVE)).expect("finite sigma");
    let mut rng = rng_from_seed(derive_seed(seed, "cf-starts", 0));
    let mut best: Option<Descent> = None;
    for s in 0..params.starts.max(1) {
        let start: Vec<f64> = if s == 0 {
            z0.clone()
        } else {
            z0.iter().map(|v| v + offsets.sample(&mut rng)).collect()
        };
        let descent = descend(&objective, start, &z0, target_value, params)?;
        let done = descent.converged;
        if best.as_ref().is_none_or(|b| done || descent.total() < b.total()) {
            best = Some(descent);
        }
        if done {
            break;
        }
    }
    let best = best.expect("at least one start");

    Ok(CounterfactualResult {
        original: record.clone(),
        counterfactual: objective.record(&best.z)?,
        reconstruction: objective.record(&z0)?,
        reconstruction_mse: inversion.mse,
        original_pred,
        cf_pred: best.pred,
        target_value,
        z_init: z0,
        z_final: best.z,
        loss_trace: best.trace,
        converged: best.converged,
    })
}

/// Latent-space distance of each result, for proximity sweeps.
pub fn latent_distances(results: &[CounterfactualResult]) -> Array1<f64> {
    results.iter().map(CounterfactualResult::latent_distance).collect()
}
