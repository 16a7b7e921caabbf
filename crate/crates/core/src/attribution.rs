//! Gradient-based attribution methods.
//!
//! Input-space methods (saliency, SmoothGrad, integrated gradients, guided
//! Grad-CAM) return `(L, T)` scores; class-activation maps (Grad-CAM,
//! Grad-CAM++) return a `(T,)` map upsampled from the layer resolution.
//! Input-gradient methods differentiate the postprocessed output by default,
//! the Grad-CAM family differentiates raw logits; every method accepts a
//! `grad_on_raw` override.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use ndarray::{Array1, Array2, Array3, ArrayD, ArrayView1, ArrayView2, ArrayViewD, Axis, Ix1, Ix2};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::config::{derive_seed, rng_from_seed, ParamValue, Params, RunConfig};
use crate::error::{Error, Result};
use crate::explain::Explainer;
use crate::nn::ReluRule;
use crate::record::{decode_binary_array, encode_binary, EcgRecord};
use crate::wrapper::{as_batch, GradSpace, WrappedModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Saliency,
    Smoothgrad,
    IntegratedGradients,
    Gradcam,
    Gradcampp,
    GuidedGradcam,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::Saliency,
        Method::Smoothgrad,
        Method::IntegratedGradients,
        Method::Gradcam,
        Method::Gradcampp,
        Method::GuidedGradcam,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Saliency => "saliency",
            Method::Smoothgrad => "smoothgrad",
            Method::IntegratedGradients => "integrated_gradients",
            Method::Gradcam => "gradcam",
            Method::Gradcampp => "gradcampp",
            Method::GuidedGradcam => "guided_gradcam",
        }
    }

    /// Whether the method needs a target layer.
    pub fn needs_layer(self) -> bool {
        matches!(self, Method::Gradcam | Method::Gradcampp | Method::GuidedGradcam)
    }

    pub fn valid_names() -> String {
        Self::ALL.iter().map(|m| m.name()).collect::<Vec<_>>().join(", ")
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase().replace(['-', '_', ' '], "").replace("++", "pp");
        let key = if key == "ig" { "integratedgradients".to_string() } else { key };
        Self::ALL
            .into_iter()
            .find(|m| m.name().replace('_', "") == key)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown method `{s}`; valid methods: {}", Self::valid_names())))
    }
}

/// Importance scores for one record and one target output.
#[derive(Debug, Clone, PartialEq)]
pub struct AttributionResult {
    /// `(L, T)` or `(T,)`.
    pub scores: ArrayD<f64>,
    pub method: Method,
    pub target: usize,
    pub params: Params,
    pub run_config: RunConfig,
}

impl AttributionResult {
    pub fn time_len(&self) -> usize {
        *self.scores.shape().last().expect("scores have at least one axis")
    }

    /// Scores as an `(L, T)` matrix; time-only maps become a single row.
    pub fn as_matrix(&self) -> ArrayView2<'_, f64> {
        as_matrix(self.scores.view())
    }

    /// Collapses leads into one time series.
    pub fn reduce(&self, reduction: LeadReduction) -> Result<Array1<f64>> {
        reduce_leads(self.scores.view(), reduction)
    }

    /// Writes `<stem>.bin` (scores in the binary signal layout, one row for a
    /// `(T,)` map) and the `<stem>.toml` sidecar. Returns both file names.
    pub fn save(&self, dir: &Path, stem: &str, sampling_rate: u32) -> Result<[PathBuf; 2]> {
        let bin = PathBuf::from(format!("{stem}.bin"));
        let meta = PathBuf::from(format!("{stem}.toml"));
        let sidecar = AttributionMeta {
            method: self.method,
            target: self.target,
            shape: self.scores.shape().to_vec(),
            sampling_rate,
            params: self.params.clone(),
            run_config: self.run_config.clone(),
        };
        let text = toml::to_string(&sidecar).map_err(|e| Error::Serialization(e.to_string()))?;
        fs::write(dir.join(&bin), encode_binary(self.as_matrix(), sampling_rate)).map_err(|e| Error::io(dir.join(&bin), e))?;
        fs::write(dir.join(&meta), text).map_err(|e| Error::io(dir.join(&meta), e))?;
        Ok([bin, meta])
    }

    /// Reads a result written by [`AttributionResult::save`] from its `.bin` path.
    pub fn load(bin_path: &Path) -> Result<Self> {
        let meta_path = bin_path.with_extension("toml");
        let text = fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
        let meta: AttributionMeta = toml::from_str(&text).map_err(|e| Error::Serialization(e.to_string()))?;
        let bytes = fs::read(bin_path).map_err(|e| Error::io(bin_path, e))?;
        let (_, values) = decode_binary_array(&bytes)?;
        let scores = values
            .into_shape_with_order(meta.shape.clone())
            .map_err(|_| Error::ShapeMismatch(format!("scores do not fit shape {:?}", meta.shape)))?;
        Ok(Self { scores, method: meta.method, target: meta.target, params: meta.params, run_config: meta.run_config })
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct AttributionMeta {
    method: Method,
    target: usize,
    shape: Vec<usize>,
    sampling_rate: u32,
    params: Params,
    run_config: RunConfig,
}

fn as_matrix(scores: ArrayViewD<'_, f64>) -> ArrayView2<'_, f64> {
    match scores.ndim() {
        1 => scores.into_dimensionality::<Ix1>().expect("rank 1").insert_axis(Axis(0)),
        _ => scores.into_dimensionality::<Ix2>().expect("scores are rank 1 or 2"),
    }
}

/// How `(L, T)` scores are collapsed to a single time series.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "lead")]
pub enum LeadReduction {
    /// Absolute scores of one lead.
    Lead(usize),
    /// Mean absolute score over leads.
    MeanAbs,
}

impl Default for LeadReduction {
    /// Lead II.
    fn default() -> Self {
        LeadReduction::Lead(1)
    }
}

pub fn reduce_leads(scores: ArrayViewD<'_, f64>, reduction: LeadReduction) -> Result<Array1<f64>> {
    if scores.ndim() == 0 || scores.ndim() > 2 {
        return Err(Error::ShapeMismatch(format!("scores of rank {}", scores.ndim())));
    }
    let m = as_matrix(scores);
    if m.nrows() == 1 {
        return Ok(m.row(0).mapv(f64::abs));
    }
    match reduction {
        LeadReduction::Lead(l) if l < m.nrows() => Ok(m.row(l).mapv(f64::abs)),
        LeadReduction::Lead(l) => Err(Error::LeadOutOfRange { index: l, leads: m.nrows() }),
        LeadReduction::MeanAbs => Ok(m.mapv(f64::abs).mean_axis(Axis(0)).expect("at least one lead")),
    }
}

/// Mean of `|scores|` over consecutive windows of `bin_size` samples along the
/// last axis; a trailing partial window is averaged over its own length.
pub fn bin_attribution(scores: ArrayViewD<'_, f64>, bin_size: usize) -> Result<ArrayD<f64>> {
    if bin_size == 0 {
        return Err(Error::InvalidParameter("bin_size must be at least 1".into()));
    }
    if scores.ndim() == 0 || scores.ndim() > 2 {
        return Err(Error::ShapeMismatch(format!("scores of rank {}", scores.ndim())));
    }
    let m = as_matrix(scores.view());
    let t = m.ncols();
    let bins = t.div_ceil(bin_size);
    let mut out = Array2::zeros((m.nrows(), bins));
    for (l, row) in m.outer_iter().enumerate() {
        for b in 0..bins {
            let lo = b * bin_size;
            let hi = (lo + bin_size).min(t);
            out[[l, b]] = row.slice(ndarray::s![lo..hi]).iter().map(|v| v.abs()).sum::<f64>() / (hi - lo) as f64;
        }
    }
    Ok(if scores.ndim() == 1 { out.row(0).to_owned().into_dyn() } else { out.into_dyn() })
}

/// Linear interpolation from `T'` to `T` samples with both endpoints aligned.
pub fn upsample_linear(map: ArrayView1<'_, f64>, len: usize) -> Array1<f64> {
    let src = map.len();
    if src == 0 || len == 0 {
        return Array1::zeros(len);
    }
    if src == 1 || len == 1 {
        return Array1::from_elem(len, map[0]);
    }
    let scale = (src - 1) as f64 / (len - 1) as f64;
    Array1::from_shape_fn(len, |t| {
        let pos = t as f64 * scale;
        let i = (pos.floor() as usize).min(src - 2);
        let w = pos - i as f64;
        (1.0 - w) * map[i] + w * map[i + 1]
    })
}

fn space(grad_on_raw: bool) -> GradSpace {
    if grad_on_raw {
        GradSpace::Raw
    } else {
        GradSpace::Output
    }
}

fn run_config(model: &WrappedModel, record: &EcgRecord, method: Method, seed: u64, params: &Params) -> RunConfig {
    RunConfig {
        seed,
        method_name: method.name().to_string(),
        method_params: params.clone(),
        model_id: model.model_id(),
        input_fingerprint: record.fingerprint(),
    }
}

fn finish(model: &WrappedModel, record: &EcgRecord, method: Method, target: usize, seed: u64, mut params: Params, scores: ArrayD<f64>) -> AttributionResult {
    params.insert("target".into(), target.into());
    AttributionResult { run_config: run_config(model, record, method, seed, &params), scores, method, target, params }
}

/// Gradient of output `target` for each item of `batch`, `(B, L, T)`.
fn gradients(model: &WrappedModel, batch: &Array3<f64>, target: usize, space: GradSpace, rule: ReluRule) -> Result<Array3<f64>> {
    Ok(model.input_gradient(batch.view(), target, space, rule)?.input_grad)
}

/// `|dF_target / dx|`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Saliency {
    pub grad_on_raw: bool,
}

impl Saliency {
    fn params(&self) -> Params {
        Params::from([("grad_on_raw".into(), self.grad_on_raw.into())])
    }
}

impl Explainer for Saliency {
    type Output = AttributionResult;

    fn name(&self) -> &'static str {
        Method::Saliency.name()
    }

    fn explain(&self, model: &WrappedModel, record: &EcgRecord, target: usize) -> Result<AttributionResult> {
        let g = gradients(model, &as_batch(record), target, space(self.grad_on_raw), ReluRule::Standard)?;
        let scores = g.index_axis(Axis(0), 0).mapv(f64::abs).into_dyn();
        Ok(finish(model, record, Method::Saliency, target, 0, self.params(), scores))
    }
}

/// Mean absolute gradient over Gaussian-perturbed copies of the input, with
/// noise scale `noise_level * (max(x) - min(x))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmoothGrad {
    pub n_samples: usize,
    pub noise_level: f64,
    pub seed: u64,
    pub grad_on_raw: bool,
}

impl Default for SmoothGrad {
    fn default() -> Self {
        Self { n_samples: 25, noise_level: 0.1, seed: 0, grad_on_raw: false }
    }
}

impl SmoothGrad {
    fn params(&self) -> Params {
        Params::from([
            ("n_samples".into(), self.n_samples.into()),
            ("noise_level".into(), self.noise_level.into()),
            ("grad_on_raw".into(), self.grad_on_raw.into()),
        ])
    }
}

impl Explainer for SmoothGrad {
    type Output = AttributionResult;

    fn name(&self) -> &'static str {
        Method::Smoothgrad.name()
    }

    fn explain(&self, model: &WrappedModel, record: &EcgRecord, target: usize) -> Result<AttributionResult> {
        if self.n_samples == 0 || !(self.noise_level >= 0.0) {
            return Err(Error::InvalidParameter("smoothgrad needs n_samples >= 1 and noise_level >= 0".into()));
        }
        let x = record.signal();
        let (lo, hi) = x.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        let sigma = self.noise_level * (hi - lo);
        let noise = Normal::new(0.0, sigma).map_err(|e| Error::InvalidParameter(e.to_string()))?;
        let mut rng = rng_from_seed(derive_seed(self.seed, "smoothgrad", 0));
        let (l, t) = x.dim();
        let mut batch = Array3::zeros((self.n_samples, l, t));
        for mut item in batch.outer_iter_mut() {
            item.assign(&x);
            if sigma > 0.0 {
                item.mapv_inplace(|v| v + noise.sample(&mut rng));
            }
        }
        let mut sum = Array2::<f64>::zeros((l, t));
        // chunks bound memory; summation order is fixed
        for chunk in batch.axis_chunks_iter(Axis(0), 16) {
            let g = gradients(model, &chunk.to_owned(), target, space(self.grad_on_raw), ReluRule::Standard)?;
            for item in g.outer_iter() {
                sum.zip_mut_with(&item, |s, v| *s += v.abs());
            }
        }
        let scores = (sum / self.n_samples as f64).into_dyn();
        Ok(finish(model, record, Method::Smoothgrad, target, self.seed, self.params(), scores))
    }
}

/// Right-Riemann integrated gradients from `baseline` (zeros by default).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntegratedGradients {
    pub steps: usize,
    #[serde(skip)]
    pub baseline: Option<EcgRecord>,
    pub grad_on_raw: bool,
}

impl Default for IntegratedGradients {
    fn default() -> Self {
        Self { steps: 50, baseline: None, grad_on_raw: false }
    }
}

impl IntegratedGradients {
    fn params(&self) -> Params {
        let baseline = match &self.baseline {
            Some(b) => ParamValue::Text(b.fingerprint()),
            None => ParamValue::Text("zeros".into()),
        };
        Params::from([
            ("steps".into(), self.steps.into()),
            ("baseline".into(), baseline),
            ("grad_on_raw".into(), self.grad_on_raw.into()),
        ])
    }
}

impl Explainer for IntegratedGradients {
    type Output = AttributionResult;

    fn name(&self) -> &'static str {
        Method::IntegratedGradients.name()
    }

    fn explain(&self, model: &WrappedModel, record: &EcgRecord, target: usize) -> Result<AttributionResult> {
        if self.steps == 0 {
            return Err(Error::InvalidParameter("integrated gradients needs steps >= 1".into()));
        }
        let x = record.signal();
        let x0 = match &self.baseline {
            Some(b) if b.signal().dim() != x.dim() => {
                return Err(Error::ShapeMismatch(format!(
                    "baseline {:?} vs record {:?}",
                    b.signal().dim(),
                    x.dim()
                )))
            }
            Some(b) => b.signal().to_owned(),
            None => Array2::zeros(x.dim()),
        };
        let delta = &x - &x0;
        let (l, t) = x.dim();
        let mut sum = Array2::<f64>::zeros((l, t));
        let m = self.steps;
        for chunk in (1..=m).collect::<Vec<_>>().chunks(16) {
            let mut batch = Array3::zeros((chunk.len(), l, t));
            for (mut item, &k) in batch.outer_iter_mut().zip(chunk) {
                item.assign(&(&x0 + &(&delta * (k as f64 / m as f64))));
            }
            let g = gradients(model, &batch, target, space(self.grad_on_raw), ReluRule::Standard)?;
            for item in g.outer_iter() {
                sum += &item;
            }
        }
        let scores = (delta * sum / m as f64).into_dyn();
        Ok(finish(model, record, Method::IntegratedGradients, target, 0, self.params(), scores))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CamVariant {
    #[default]
    Gradcam,
    Gradcampp,
}

/// Class-activation map at a named convolutional layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCam {
    pub layer: String,
    pub variant: CamVariant,
    pub grad_on_raw: bool,
}

impl GradCam {
    pub fn new(layer: impl Into<String>, variant: CamVariant) -> Self {
        Self { layer: layer.into(), variant, grad_on_raw: true }
    }

    fn method(&self) -> Method {
        match self.variant {
            CamVariant::Gradcam => Method::Gradcam,
            CamVariant::Gradcampp => Method::Gradcampp,
        }
    }

    fn params(&self) -> Params {
        let mut p = Params::from([
            ("target_layer_name".into(), self.layer.clone().into()),
            ("grad_on_raw".into(), self.grad_on_raw.into()),
        ]);
        if self.variant == CamVariant::Gradcampp {
            p.insert("higher_order".into(), "exponential_approximation".into());
        }
        p
    }

    /// Layer-resolution map `(T',)` before upsampling.
    pub fn layer_map(&self, model: &WrappedModel, record: &EcgRecord, target: usize) -> Result<Array1<f64>> {
        if !model.layer_is_spatial(&self.layer)? {
            return Err(Error::LayerRankMismatch(self.layer.clone()));
        }
        let caps = model.get_features_in(as_batch(record).view(), &[&self.layer], target, true, space(self.grad_on_raw))?;
        let cap = &caps[0];
        let a = cap.activations.index_axis(Axis(0), 0);
        let g = cap.gradients.as_ref().expect("gradients requested").index_axis(Axis(0), 0).to_owned();
        Ok(cam_from(a, g.view(), self.variant))
    }
}

/// Grad-CAM / Grad-CAM++ combination of `(C, T')` activations and gradients.
pub fn cam_from(a: ArrayView2<'_, f64>, g: ArrayView2<'_, f64>, variant: CamVariant) -> Array1<f64> {
    let weights: Array1<f64> = match variant {
        CamVariant::Gradcam => g.mean_axis(Axis(1)).expect("at least one position"),
        CamVariant::Gradcampp => Array1::from_iter(a.outer_iter().zip(g.outer_iter()).map(|(ak, gk)| {
            let a_sum: f64 = ak.sum();
            gk.iter()
                .map(|&gv| {
                    let g2 = gv * gv;
                    let denom = 2.0 * g2 + a_sum * g2 * gv;
                    let alpha = if denom != 0.0 { g2 / denom } else { 0.0 };
                    alpha * gv.max(0.0)
                })
                .sum::<f64>()
        })),
    };
    weights.dot(&a).mapv(|v| v.max(0.0))
}

impl Explainer for GradCam {
    type Output = AttributionResult;

    fn name(&self) -> &'static str {
        self.method().name()
    }

    fn explain(&self, model: &WrappedModel, record: &EcgRecord, target: usize) -> Result<AttributionResult> {
        let map = self.layer_map(model, record, target)?;
        let scores = upsample_linear(map.view(), record.n_samples()).into_dyn();
        Ok(finish(model, record, self.method(), target, 0, self.params(), scores))
    }
}

/// Guided backpropagation multiplied by the upsampled Grad-CAM map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GuidedGradCam {
    pub layer: String,
    pub grad_on_raw: bool,
}

impl GuidedGradCam {
    pub fn new(layer: impl Into<String>) -> Self {
        Self { layer: layer.into(), grad_on_raw: true }
    }
}

impl Explainer for GuidedGradCam {
    type Output = AttributionResult;

    fn name(&self) -> &'static str {
        Method::GuidedGradcam.name()
    }

    fn explain(&self, model: &WrappedModel, record: &EcgRecord, target: usize) -> Result<AttributionResult> {
        let cam = GradCam { layer: self.layer.clone(), variant: CamVariant::Gradcam, grad_on_raw: self.grad_on_raw };
        let map = upsample_linear(cam.layer_map(model, record, target)?.view(), record.n_samples());
        let guided = gradients(model, &as_batch(record), target, space(self.grad_on_raw), ReluRule::Guided)?;
        let scores = (&guided.index_axis(Axis(0), 0) * &map.insert_axis(Axis(0))).into_dyn();
        let rule = if model.network().has_rectifiers() { "guided" } else { "pass_through" };
        let params = Params::from([
            ("target_layer_name".into(), self.layer.clone().into()),
            ("grad_on_raw".into(), self.grad_on_raw.into()),
            ("guided_rule".into(), rule.into()),
        ]);
        Ok(finish(model, record, Method::GuidedGradcam, target, 0, params, scores))
    }
}

pub fn saliency(model: &WrappedModel, record: &EcgRecord, target: usize) -> Result<AttributionResult> {
    Saliency::default().explain(model, record, target)
}

pub fn smoothgrad(
    model: &WrappedModel,
    record: &EcgRecord,
    target: usize,
    n_samples: usize,
    noise_level: f64,
    seed: u64,
) -> Result<AttributionResult> {
    SmoothGrad { n_samples, noise_level, seed, grad_on_raw: false }.explain(model, record, target)
}

pub fn integrated_gradients(
    model: &WrappedModel,
    record: &EcgRecord,
    target: usize,
    baseline: Option<&EcgRecord>,
    steps: usize,
) -> Result<AttributionResult> {
    IntegratedGradients { steps, baseline: baseline.cloned(), grad_on_raw: false }.explain(model, record, target)
}

pub fn gradcam(
    model: &WrappedModel,
    record: &EcgRecord,
    target: usize,
    target_layer_name: &str,
    variant: CamVariant,
) -> Result<AttributionResult> {
    GradCam::new(target_layer_name, variant).explain(model, record, target)
}

pub fn guided_gradcam(model: &WrappedModel, record: &EcgRecord, target: usize, target_layer_name: &str) -> Result<AttributionResult> {
    GuidedGradCam::new(target_layer_name).explain(model, record, target)
}
