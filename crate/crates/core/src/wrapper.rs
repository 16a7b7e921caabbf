//! Standardized model I/O.
//!
//! A [`WrappedModel`] accepts `(B, L, T)` batches, returns outputs shaped per
//! task (`(B, 2)` binary, `(B, N)` multiclass/multilabel, `(B, 1)` regression)
//! and gives named-layer access to activations and gradients. Captures live
//! only for the duration of one call, so a model can be shared by reference
//! across threads.

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2, Array3, ArrayView3, ArrayViewD, Axis, Ix3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{sha256_hex, TaskType};
use crate::error::{Error, Result};
use crate::nn::{Network, ReluRule};
use crate::record::EcgRecord;

/// Transform from the standardized `(B, L, T)` layout to what the network consumes.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Preprocess {
    #[default]
    Identity,
    /// `(B, L, T) -> (B, T, L)`.
    Transpose,
    Scale { factor: f64 },
}

impl Preprocess {
    pub fn apply(self, batch: ArrayView3<'_, f64>) -> Array3<f64> {
        match self {
            Preprocess::Identity => batch.to_owned(),
            Preprocess::Transpose => batch.permuted_axes([0, 2, 1]).as_standard_layout().into_owned(),
            Preprocess::Scale { factor } => batch.mapv(|v| v * factor),
        }
    }

    /// Pulls a gradient on the network input back to the standardized layout.
    pub fn pullback(self, grad: Array3<f64>) -> Array3<f64> {
        match self {
            Preprocess::Identity => grad,
            Preprocess::Transpose => grad.permuted_axes([0, 2, 1]).as_standard_layout().into_owned(),
            Preprocess::Scale { factor } => grad.mapv(|v| v * factor),
        }
    }
}

/// Transform from raw network outputs to the standardized prediction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Postprocess {
    Identity,
    Softmax,
    Sigmoid,
}

impl Postprocess {
    pub fn default_for(task: TaskType) -> Self {
        match task {
            TaskType::BinaryClassification | TaskType::MulticlassClassification { .. } => Self::Softmax,
            TaskType::MultilabelClassification { .. } => Self::Sigmoid,
            TaskType::Regression => Self::Identity,
        }
    }

    pub fn apply_row(self, raw: &[f64]) -> Vec<f64> {
        match self {
            Postprocess::Identity => raw.to_vec(),
            Postprocess::Softmax => crate::nn::train::softmax(raw),
            Postprocess::Sigmoid => raw.iter().map(|&z| sigmoid(z)).collect(),
        }
    }

    /// Vector-Jacobian product: d<seed, post(raw)>/d raw.
    pub fn pullback_row(self, raw: &[f64], seed: &[f64]) -> Vec<f64> {
        match self {
            Postprocess::Identity => seed.to_vec(),
            Postprocess::Softmax => {
                // sum_j p_k p_j (g_k - g_j) avoids cancellation in 1 - p_k
                // when the softmax saturates
                let p = crate::nn::train::softmax(raw);
                (0..p.len())
                    .map(|k| (0..p.len()).filter(|&j| j != k).map(|j| p[k] * p[j] * (seed[k] - seed[j])).sum())
                    .collect()
            }
            Postprocess::Sigmoid => raw
                .iter()
                .zip(seed)
                .map(|(&z, g)| {
                    let (p, q) = (sigmoid(z), sigmoid(-z));
                    g * p * q
                })
                .collect(),
        }
    }

    /// Applies the transform to a whole `(B, N)` raw output.
    pub fn apply(self, raw: &Array2<f64>) -> Result<Array2<f64>> {
        let mut out = Array2::zeros(raw.dim());
        for (b, row) in raw.outer_iter().enumerate() {
            let values = self.apply_row(&row.to_vec());
            out.row_mut(b).assign(&Array1::from(values));
        }
        Ok(out)
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Which output the gradients are taken from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradSpace {
    /// Postprocessed output (probabilities for classifiers).
    #[default]
    Output,
    /// Raw network output (logits).
    Raw,
}

/// Activations (and optionally gradients) at one named layer, `(B, C, T')`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureCapture {
    pub layer_name: String,
    pub activations: Array3<f64>,
    pub gradients: Option<Array3<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    /// `(B, N)`, or `(B, 1)` when a single output was selected.
    pub output: Array2<f64>,
    /// d(sum of `output`)/d input, `(B, L, T)`, when requested.
    pub input_grad: Option<Array3<f64>>,
}

/// Everything a single backward sweep produces.
#[derive(Debug, Clone)]
pub struct BackpropResult {
    pub raw: Array2<f64>,
    pub output: Array2<f64>,
    /// In the standardized `(B, L, T)` layout.
    pub input_grad: Array3<f64>,
    pub captures: Vec<FeatureCapture>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Checkpoint {
    format: String,
    task: TaskType,
    preprocess: Preprocess,
    postprocess: Postprocess,
    network: Network,
}

const CHECKPOINT_FORMAT: &str = "ecgxai-checkpoint/v1";

/// A network adapted to the standardized I/O convention.
#[derive(Debug, Clone, PartialEq)]
pub struct WrappedModel {
    network: Network,
    task: TaskType,
    preprocess: Preprocess,
    postprocess: Postprocess,
}

impl WrappedModel {
    /// Wraps with the task's default postprocess and an identity preprocess.
    pub fn new(network: Network, task: TaskType) -> Self {
        Self::with_transforms(network, task, Preprocess::Identity, Postprocess::default_for(task))
    }

    pub fn with_transforms(network: Network, task: TaskType, preprocess: Preprocess, postprocess: Postprocess) -> Self {
        Self { network, task, preprocess, postprocess }
    }

    pub fn network(&self) -> &Network {
        &self.network
    }

    pub fn task(&self) -> TaskType {
        self.task
    }

    pub fn num_outputs(&self) -> usize {
        self.task.num_outputs()
    }

    pub fn layer_names(&self) -> Vec<&str> {
        self.network.layer_names()
    }

    /// Stable identifier of weights, task and transforms.
    pub fn model_id(&self) -> String {
        let head = format!("{:?}|{:?}|{:?}|", self.task, self.preprocess, self.postprocess);
        sha256_hex(format!("{head}{}", self.network.weights_hash()).as_bytes())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let ckpt = Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            task: self.task,
            preprocess: self.preprocess,
            postprocess: self.postprocess,
            network: self.network.clone(),
        };
        let text = serde_json::to_string(&ckpt).map_err(|e| Error::Serialization(e.to_string()))?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ckpt: Checkpoint =
            serde_json::from_str(&text).map_err(|e| Error::Serialization(format!("{}: {e}", path.display())))?;
        if ckpt.format != CHECKPOINT_FORMAT {
            return Err(Error::Serialization(format!("unsupported checkpoint format `{}`", ckpt.format)));
        }
        Ok(Self::with_transforms(ckpt.network, ckpt.task, ckpt.preprocess, ckpt.postprocess))
    }

    /// Converts a standardized batch (any array; must be rank 3) into network input.
    pub fn preprocess(&self, batch: ArrayViewD<'_, f64>) -> Result<Array3<f64>> {
        let batch = batch
            .into_dimensionality::<Ix3>()
            .map_err(|_| Error::ShapeMismatch("expected a (B, L, T) batch".to_string()))?;
        check_finite(batch)?;
        Ok(self.preprocess.apply(batch))
    }

    pub fn postprocess(&self, raw: &Array2<f64>) -> Result<Array2<f64>> {
        if raw.ncols() != self.num_outputs() {
            return Err(Error::ShapeMismatch(format!(
                "raw output has {} columns, {} expects {}",
                raw.ncols(),
                self.task,
                self.num_outputs()
            )));
        }
        self.postprocess.apply(raw)
    }

    fn network_input(&self, batch: ArrayView3<'_, f64>) -> Result<Array3<f64>> {
        let input = self.preprocess(batch.into_dyn())?;
        let (_, c, t) = input.dim();
        let (n, _) = self.network.output_shape(c, t)?;
        if n != self.num_outputs() {
            return Err(Error::ModelForward(format!(
                "network produces {n} outputs, {} expects {}",
                self.task,
                self.num_outputs()
            )));
        }
        Ok(input)
    }

    /// Raw `(B, N)` output of the inner network.
    pub fn forward_raw(&self, batch: ArrayView3<'_, f64>) -> Result<Array2<f64>> {
        let input = self.network_input(batch)?;
        let rows: Vec<Array1<f64>> = input
            .outer_iter()
            .collect::<Vec<_>>()
            .into_par_iter()
            .map(|x| self.network.forward(x).column(0).to_owned())
            .collect();
        Ok(stack_rows(&rows, self.num_outputs()))
    }

    /// Standardized prediction; optionally a single output column and the
    /// gradient of the returned values' sum with respect to the input.
    pub fn predict(&self, batch: ArrayView3<'_, f64>, output_idx: Option<usize>, requires_grad: bool) -> Result<Prediction> {
        let n = self.num_outputs();
        if let Some(index) = output_idx {
            if index >= n {
                return Err(Error::OutputIdxOutOfRange { index, num_outputs: n });
            }
        }
        let select = |out: Array2<f64>| match output_idx {
            Some(i) => out.column(i).to_owned().insert_axis(Axis(1)),
            None => out,
        };
        if !requires_grad {
            let raw = self.forward_raw(batch)?;
            return Ok(Prediction { output: select(self.postprocess(&raw)?), input_grad: None });
        }
        let seed = match output_idx {
            Some(i) => one_hot(n, i),
            None => Array1::ones(n),
        };
        let res = self.backprop(batch, &seed, GradSpace::Output, ReluRule::Standard, &[])?;
        Ok(Prediction { output: select(res.output), input_grad: Some(res.input_grad) })
    }

    pub fn predict_records(&self, records: &[EcgRecord]) -> Result<Array2<f64>> {
        Ok(self.predict(stack_records(records)?.view(), None, false)?.output)
    }

    fn resolve_layers(&self, names: &[&str]) -> Result<Vec<usize>> {
        names
            .iter()
            .map(|name| {
                self.network.layer_index(name).ok_or_else(|| Error::UnknownLayer {
                    name: name.to_string(),
                    known: self.network.layer_names().join(", "),
                })
            })
            .collect()
    }

    /// One forward/backward sweep: gradient of `sum_b seed . out[b]` where
    /// `out` is the postprocessed (`GradSpace::Output`) or raw output.
    pub fn backprop(
        &self,
        batch: ArrayView3<'_, f64>,
        seed: &Array1<f64>,
        space: GradSpace,
        rule: ReluRule,
        capture: &[&str],
    ) -> Result<BackpropResult> {
        let n = self.num_outputs();
        if seed.len() != n {
            return Err(Error::ShapeMismatch(format!("seed of length {} for {n} outputs", seed.len())));
        }
        let indices = self.resolve_layers(capture)?;
        let input = self.network_input(batch)?;
        let postprocess = self.postprocess;
        let per_sample: Vec<_> = input
            .outer_iter()
            .collect::<Vec<_>>()
            .into_par_iter()
            .map(|x| {
                let trace = self.network.forward_traced(x);
                let raw = trace.output().column(0).to_vec();
                let out = postprocess.apply_row(&raw);
                let g_raw = match space {
                    GradSpace::Output => postprocess.pullback_row(&raw, seed.as_slice().expect("contiguous")),
                    GradSpace::Raw => seed.to_vec(),
                };
                let g = Array2::from_shape_vec((n, 1), g_raw).expect("n outputs");
                let back = self.network.backward(&trace, g, rule, &indices, None);
                let acts: Vec<Array2<f64>> = indices.iter().map(|&i| trace.layer_output(i).clone()).collect();
                (raw, out, back, acts)
            })
            .collect();

        let raw_rows: Vec<Array1<f64>> = per_sample.iter().map(|s| Array1::from(s.0.clone())).collect();
        let out_rows: Vec<Array1<f64>> = per_sample.iter().map(|s| Array1::from(s.1.clone())).collect();
        let grads: Vec<_> = per_sample.iter().map(|s| s.2.input_grad.view()).collect();
        let input_grad = self.preprocess.pullback(
            ndarray::stack(Axis(0), &grads).map_err(|e| Error::ShapeMismatch(e.to_string()))?,
        );
        let mut captures = Vec::with_capacity(indices.len());
        for (k, name) in capture.iter().enumerate() {
            let acts: Vec<_> = per_sample.iter().map(|s| s.3[k].view()).collect();
            let gs: Vec<_> = per_sample.iter().map(|s| s.2.captures[k].1.view()).collect();
            captures.push(FeatureCapture {
                layer_name: name.to_string(),
                activations: ndarray::stack(Axis(0), &acts).map_err(|e| Error::ShapeMismatch(e.to_string()))?,
                gradients: Some(ndarray::stack(Axis(0), &gs).map_err(|e| Error::ShapeMismatch(e.to_string()))?),
            });
        }
        Ok(BackpropResult {
            raw: stack_rows(&raw_rows, n),
            output: stack_rows(&out_rows, n),
            input_grad,
            captures,
        })
    }

    /// d F_target / d input for every batch item, `(B, L, T)`.
    pub fn input_gradient(
        &self,
        batch: ArrayView3<'_, f64>,
        target: usize,
        space: GradSpace,
        rule: ReluRule,
    ) -> Result<BackpropResult> {
        self.check_target(target)?;
        self.backprop(batch, &one_hot(self.num_outputs(), target), space, rule, &[])
    }

    /// Named-layer activations and, if requested, gradients of
    /// `sum_b out[b, target]` (postprocessed output) with respect to them.
    pub fn get_features(
        &self,
        batch: ArrayView3<'_, f64>,
        layer_names: &[&str],
        target: usize,
        want_gradients: bool,
    ) -> Result<Vec<FeatureCapture>> {
        self.get_features_in(batch, layer_names, target, want_gradients, GradSpace::Output)
    }

    pub fn get_features_in(
        &self,
        batch: ArrayView3<'_, f64>,
        layer_names: &[&str],
        target: usize,
        want_gradients: bool,
        space: GradSpace,
    ) -> Result<Vec<FeatureCapture>> {
        self.check_target(target)?;
        let mut res = self.backprop(batch, &one_hot(self.num_outputs(), target), space, ReluRule::Standard, layer_names)?;
        if !want_gradients {
            for c in &mut res.captures {
                c.gradients = None;
            }
        }
        Ok(res.captures)
    }

    /// Whether the named layer keeps a positional axis.
    pub fn layer_is_spatial(&self, name: &str) -> Result<bool> {
        let idx = self.resolve_layers(&[name])?[0];
        Ok(self.network.layers()[idx].layer.is_spatial())
    }

    pub fn check_target(&self, target: usize) -> Result<()> {
        if target >= self.num_outputs() {
            return Err(Error::OutputIdxOutOfRange { index: target, num_outputs: self.num_outputs() });
        }
        Ok(())
    }
}

fn check_finite(batch: ArrayView3<'_, f64>) -> Result<()> {
    if let Some(((_, lead, sample), _)) = batch.indexed_iter().find(|(_, v)| !v.is_finite()) {
        return Err(Error::NonFiniteValues { lead, sample });
    }
    Ok(())
}

pub(crate) fn one_hot(n: usize, i: usize) -> Array1<f64> {
    let mut v = Array1::zeros(n);
    v[i] = 1.0;
    v
}

fn stack_rows(rows: &[Array1<f64>], n: usize) -> Array2<f64> {
    let mut out = Array2::zeros((rows.len(), n));
    for (b, r) in rows.iter().enumerate() {
        out.row_mut(b).assign(r);
    }
    out
}

/// Stacks equally shaped records into a `(B, L, T)` batch.
pub fn stack_records(records: &[EcgRecord]) -> Result<Array3<f64>> {
    let first = records
        .first()
        .ok_or_else(|| Error::ShapeMismatch("empty batch".to_string()))?;
    let dim = (first.n_leads(), first.n_samples());
    let views: Vec<_> = records
        .iter()
        .map(|r| {
            if (r.n_leads(), r.n_samples()) == dim {
                Ok(r.signal())
            } else {
                Err(Error::ShapeMismatch(format!(
                    "record of {}x{} in a batch of {}x{}",
                    r.n_leads(),
                    r.n_samples(),
                    dim.0,
                    dim.1
                )))
            }
        })
        .collect::<Result<_>>()?;
    ndarray::stack(Axis(0), &views).map_err(|e| Error::ShapeMismatch(e.to_string()))
}

/// A single record as a `(1, L, T)` batch.
pub fn as_batch(record: &EcgRecord) -> Array3<f64> {
    record.signal().to_owned().insert_axis(Axis(0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::rng_from_seed;
    use crate::nn::{Dense, Layer, NamedLayer};
    use ndarray::{array, Array};

    fn linear(weights: Array2<f64>, n_out: usize, task: TaskType) -> WrappedModel {
        let d = weights.len();
        let w = Array2::from_shape_fn((n_out, d), |(k, j)| weights.as_slice().unwrap()[j] * (k + 1) as f64);
        let net = Network::new(vec![NamedLayer {
            name: "fc".into(),
            layer: Layer::Dense(Dense::new(w, Array1::zeros(n_out))),
        }])
        .unwrap();
        WrappedModel::new(net, task)
    }

    #[test]
    fn transpose_preprocess() {
        let net = Network::new(vec![]).unwrap();
        let m = WrappedModel::with_transforms(net, TaskType::Regression, Preprocess::Transpose, Postprocess::Identity);
        let x = Array::from_shape_fn((1, 12, 2500), |(_, l, t)| (l * 10_000 + t) as f64);
        let y = m.preprocess(x.view().into_dyn()).unwrap();
        assert_eq!(y.dim(), (1, 2500, 12));
        assert_eq!(y[[0, 7, 3]], x[[0, 3, 7]]);
    }

    #[test]
    fn identity_preprocess_and_rank_check() {
        let m = WrappedModel::new(Network::new(vec![]).unwrap(), TaskType::Regression);
        let x = Array::from_shape_fn((2, 3, 4), |(b, l, t)| (b + l * t) as f64);
        assert_eq!(m.preprocess(x.view().into_dyn()).unwrap(), x);
        let flat = Array2::<f64>::zeros((12, 2500));
        assert!(matches!(m.preprocess(flat.view().into_dyn()), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn softmax_postprocess_values() {
        let m = WrappedModel::new(Network::new(vec![]).unwrap(), TaskType::BinaryClassification);
        assert_eq!(m.postprocess(&array![[0.0, 0.0]]).unwrap(), array![[0.5, 0.5]]);
        let p = m.postprocess(&array![[3.0_f64.ln(), 0.0]]).unwrap();
        assert!((p[[0, 0]] - 0.75).abs() < 1e-12 && (p[[0, 1]] - 0.25).abs() < 1e-12);
        let r = WrappedModel::new(Network::new(vec![]).unwrap(), TaskType::Regression);
        assert_eq!(r.postprocess(&array![[1.5], [-2.0]]).unwrap(), array![[1.5], [-2.0]]);
        assert!(matches!(m.postprocess(&array![[1.0, 2.0, 3.0]]), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn constant_model_has_zero_input_gradient() {
        let m = linear(Array2::zeros((2, 5)), 2, TaskType::BinaryClassification);
        let x = Array::from_elem((3, 2, 5), 0.7);
        let p = m.predict(x.view(), Some(1), true).unwrap();
        assert_eq!(p.output.dim(), (3, 1));
        assert!(p.input_grad.unwrap().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn output_index_bounds() {
        let m = linear(Array2::ones((1, 4)), 2, TaskType::BinaryClassification);
        let x = Array::zeros((1, 1, 4));
        assert!(matches!(
            m.predict(x.view(), Some(2), false),
            Err(Error::OutputIdxOutOfRange { index: 2, num_outputs: 2 })
        ));
    }

    #[test]
    fn mismatched_input_is_a_forward_failure() {
        let m = linear(Array2::ones((1, 4)), 2, TaskType::BinaryClassification);
        let x = Array::zeros((1, 2, 4));
        assert!(matches!(m.predict(x.view(), None, false), Err(Error::ModelForward(_))));
    }

    #[test]
    fn unknown_layer() {
        let mut rng = rng_from_seed(0);
        let m = WrappedModel::new(Network::reference(2, 2, &mut rng), TaskType::BinaryClassification);
        let x = Array::zeros((1, 2, 64));
        let err = m.get_features(x.view(), &["conv9"], 0, true).unwrap_err();
        assert!(matches!(err, Error::UnknownLayer { .. }));
    }

    #[test]
    fn checkpoint_roundtrip() {
        let mut rng = rng_from_seed(2);
        let m = WrappedModel::new(Network::reference(12, 2, &mut rng), TaskType::BinaryClassification);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        m.save(&path).unwrap();
        let back = WrappedModel::load(&path).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.model_id(), m.model_id());
    }
}
