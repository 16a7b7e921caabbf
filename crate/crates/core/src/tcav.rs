//! Concept activation vectors and TCAV scores with t-based confidence
//! intervals.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ndarray::{Array2, Array3, Axis};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::config::{derive_seed, rng_from_seed};
use crate::error::{Error, Result};
use crate::record::{load_ecg, EcgFormat, EcgRecord};
use crate::wrapper::{stack_records, GradSpace, WrappedModel};

/// Fewest examples a concept set may hold.
pub const MIN_CONCEPT_EXAMPLES: usize = 10;

/// Name of the concept-directory subfolder holding the random pool.
pub const RANDOM_DIR: &str = "random";

#[derive(Debug, Clone, PartialEq)]
pub struct ConceptSet {
    pub name: String,
    pub examples: Vec<EcgRecord>,
}

impl ConceptSet {
    pub fn new(name: impl Into<String>, examples: Vec<EcgRecord>) -> Result<Self> {
        let name = name.into();
        if examples.len() < MIN_CONCEPT_EXAMPLES {
            return Err(Error::InvalidParameter(format!(
                "concept `{name}` has {} examples, need at least {MIN_CONCEPT_EXAMPLES}",
                examples.len()
            )));
        }
        let (leads, rate) = (examples[0].n_leads(), examples[0].sampling_rate());
        if examples.iter().any(|e| e.n_leads() != leads || e.sampling_rate() != rate) {
            return Err(Error::ShapeMismatch(format!("concept `{name}` mixes lead counts or sampling rates")));
        }
        Ok(Self { name, examples })
    }
}

/// How a `(C, T')` activation map becomes a CAV feature vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    /// All `C * T'` values.
    #[default]
    Flatten,
    /// Per-channel mean over positions (`C` values).
    MeanOverTime,
}

impl Pooling {
    fn features(self, acts: &Array3<f64>) -> Array2<f64> {
        let b = acts.shape()[0];
        match self {
            Pooling::Flatten => acts.to_shape((b, acts.len() / b.max(1))).expect("contiguous").to_owned(),
            Pooling::MeanOverTime => acts.mean_axis(Axis(2)).expect("positions"),
        }
    }

    /// Derivative of the output along `direction` given the activation
    /// gradient `(C, T')` of one input.
    fn directional(self, grad: ndarray::ArrayView2<'_, f64>, direction: &[f64]) -> f64 {
        match self {
            Pooling::Flatten => grad.iter().zip(direction).map(|(g, v)| g * v).sum(),
            // the pooled direction is broadcast over every position
            Pooling::MeanOverTime => grad
                .outer_iter()
                .zip(direction)
                .map(|(row, v)| row.sum() * v)
                .sum(),
        }
    }
}

/// L2-penalized logistic regression settings for CAV fitting.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CavParams {
    pub l2: f64,
    pub iterations: usize,
    pub learning_rate: f64,
    /// Fraction of examples held out to measure generalization.
    pub holdout_fraction: f64,
    pub pooling: Pooling,
}

impl Default for CavParams {
    fn default() -> Self {
        Self { l2: 1e-2, iterations: 300, learning_rate: 0.5, holdout_fraction: 1.0 / 3.0, pooling: Pooling::Flatten }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cav {
    pub layer_name: String,
    pub concept_name: String,
    /// Unit vector in the pooled activation space, pointing toward the concept.
    pub direction: Vec<f64>,
    /// Accuracy on the examples the classifier was fitted on.
    pub train_accuracy: f64,
    /// Accuracy on the held-out examples (NaN when nothing is held out).
    pub holdout_accuracy: f64,
    pub pooling: Pooling,
}

impl Cav {
    pub fn negated(&self) -> Self {
        Self { direction: self.direction.iter().map(|v| -v).collect(), ..self.clone() }
    }
}

/// Pooled layer activations, one row per record.
pub fn layer_features(model: &WrappedModel, layer: &str, records: &[EcgRecord], pooling: Pooling) -> Result<Array2<f64>> {
    if !model.layer_is_spatial(layer)? {
        return Err(Error::LayerRankMismatch(layer.to_string()));
    }
    let batch = stack_records(records)?;
    let mut caps = model.get_features(batch.view(), &[layer], 0, false)?;
    Ok(pooling.features(&caps.remove(0).activations))
}

/// Fits a CAV separating `concept` (label 1) from `random` (label 0) rows.
///
/// Rows are centred by their joint mean and scaled by one global standard
/// deviation, so the fitted weight vector keeps its direction in the raw
/// activation space. The train/holdout split is drawn from `seed`.
pub fn fit_cav(
    layer: &str,
    concept_name: &str,
    concept: &Array2<f64>,
    random: &Array2<f64>,
    params: &CavParams,
    seed: u64,
) -> Result<Cav> {
    if concept.nrows() == 0 || random.nrows() == 0 {
        return Err(Error::InvalidParameter("concept and random sets must be non-empty".into()));
    }
    if concept.ncols() != random.ncols() {
        return Err(Error::ShapeMismatch("concept and random features differ in width".into()));
    }
    if !(0.0..1.0).contains(&params.holdout_fraction) || !(params.l2 >= 0.0) || !(params.learning_rate > 0.0) {
        return Err(Error::InvalidParameter("holdout_fraction in [0, 1), l2 >= 0 and learning_rate > 0 required".into()));
    }
    let x = ndarray::concatenate(Axis(0), &[concept.view(), random.view()]).expect("equal widths");
    let y: Vec<f64> = (0..x.nrows()).map(|i| if i < concept.nrows() { 1.0 } else { 0.0 }).collect();
    let mean = x.mean_axis(Axis(0)).expect("non-empty");
    let centred = &x - &mean;
    let scale = (centred.iter().map(|v| v * v).sum::<f64>() / centred.len() as f64).sqrt();
    if !(scale > 1e-12) {
        return Err(Error::DegenerateActivations(layer.to_string()));
    }
    let z = centred / scale;

    // stratified split so both sides keep both classes
    let mut rng = rng_from_seed(seed);
    let (mut fit_idx, mut held_idx) = (Vec::new(), Vec::new());
    for class in [1.0, 0.0] {
        let mut idx: Vec<usize> = (0..y.len()).filter(|&i| y[i] == class).collect();
        idx.shuffle(&mut rng);
        let n_held = ((idx.len() as f64) * params.holdout_fraction).floor() as usize;
        let n_held = n_held.min(idx.len() - 1);
        held_idx.extend_from_slice(&idx[..n_held]);
        fit_idx.extend_from_slice(&idx[n_held..]);
    }
    fit_idx.sort_unstable();
    held_idx.sort_unstable();

    let (w, b) = logistic_fit(&z, &y, &fit_idx, params);
    let accuracy = |idx: &[usize]| -> f64 {
        if idx.is_empty() {
            return f64::NAN;
        }
        let hits = idx
            .iter()
            .filter(|&&i| {
                let s: f64 = z.row(i).iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() + b;
                (s > 0.0) == (y[i] == 1.0)
            })
            .count();
        hits as f64 / idx.len() as f64
    };
    let norm = w.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !(norm > 0.0) || !norm.is_finite() {
        return Err(Error::DegenerateActivations(layer.to_string()));
    }
    Ok(Cav {
        layer_name: layer.to_string(),
        concept_name: concept_name.to_string(),
        direction: w.iter().map(|v| v / norm).collect(),
        train_accuracy: accuracy(&fit_idx),
        holdout_accuracy: accuracy(&held_idx),
        pooling: params.pooling,
    })
}

/// Full-batch gradient descent on mean log-loss plus `l2/2 ||w||^2`.
fn logistic_fit(x: &Array2<f64>, y: &[f64], rows: &[usize], params: &CavParams) -> (Vec<f64>, f64) {
    let d = x.ncols();
    let n = rows.len() as f64;
    let (mut w, mut b) = (vec![0.0; d], 0.0);
    let mut grad = vec![0.0; d];
    for _ in 0..params.iterations {
        grad.iter_mut().zip(&w).for_each(|(g, wi)| *g = params.l2 * wi);
        let mut grad_b = 0.0;
        for &i in rows {
            let row = x.row(i);
            let s: f64 = row.iter().zip(&w).map(|(a, c)| a * c).sum::<f64>() + b;
            let err = (sigmoid(s) - y[i]) / n;
            grad.iter_mut().zip(row).for_each(|(g, a)| *g += err * a);
            grad_b += err;
        }
        w.iter_mut().zip(&grad).for_each(|(wi, g)| *wi -= params.learning_rate * g);
        b -= params.learning_rate * grad_b;
    }
    (w, b)
}

fn sigmoid(s: f64) -> f64 {
    if s >= 0.0 {
        1.0 / (1.0 + (-s).exp())
    } else {
        let e = s.exp();
        e / (1.0 + e)
    }
}

/// Trains a CAV for `concept` against `random_set` at `layer`.
pub fn train_cav(
    model: &WrappedModel,
    layer: &str,
    concept: &ConceptSet,
    random_set: &[EcgRecord],
    params: &CavParams,
    seed: u64,
) -> Result<Cav> {
    if random_set.is_empty() {
        return Err(Error::InvalidParameter("random set is empty".into()));
    }
    let c = layer_features(model, layer, &concept.examples, params.pooling)?;
    let r = layer_features(model, layer, random_set, params.pooling)?;
    fit_cav(layer, &concept.name, &c, &r, params, seed)
}

/// Activation gradients of the target output, `(B, C, T')`.
fn layer_gradients(model: &WrappedModel, layer: &str, records: &[EcgRecord], target: usize, space: GradSpace) -> Result<Array3<f64>> {
    let batch = stack_records(records)?;
    let mut caps = model.get_features_in(batch.view(), &[layer], target, true, space)?;
    Ok(caps.remove(0).gradients.expect("gradients requested"))
}

fn check_cav(cav: &Cav, layer: &str) -> Result<()> {
    if cav.layer_name != layer {
        return Err(Error::InvalidParameter(format!(
            "CAV was trained at `{}`, not `{layer}`",
            cav.layer_name
        )));
    }
    Ok(())
}

/// Sensitivity of the target output to moving layer activations along the CAV.
pub fn directional_derivative(model: &WrappedModel, layer: &str, cav: &Cav, record: &EcgRecord, target: usize) -> Result<f64> {
    check_cav(cav, layer)?;
    let g = layer_gradients(model, layer, std::slice::from_ref(record), target, GradSpace::Output)?;
    Ok(cav.pooling.directional(g.index_axis(Axis(0), 0), &cav.direction))
}

/// Fraction of `inputs` whose directional derivative is positive.
pub fn tcav_score(model: &WrappedModel, layer: &str, cav: &Cav, inputs: &[EcgRecord], target: usize) -> Result<f64> {
    check_cav(cav, layer)?;
    if inputs.is_empty() {
        return Err(Error::InvalidParameter("no inputs to score".into()));
    }
    let g = layer_gradients(model, layer, inputs, target, GradSpace::Output)?;
    Ok(score_from_gradients(&g, cav))
}

fn score_from_gradients(grads: &Array3<f64>, cav: &Cav) -> f64 {
    let positive = grads
        .outer_iter()
        .filter(|g| cav.pooling.directional(g.view(), &cav.direction) > 0.0)
        .count();
    positive as f64 / grads.shape()[0] as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TcavParams {
    pub n_runs: usize,
    pub alpha: f64,
    /// Records are cropped or zero-padded to this many seconds first.
    pub input_duration_s: Option<f64>,
    pub cav: CavParams,
}

impl Default for TcavParams {
    fn default() -> Self {
        Self { n_runs: 10, alpha: 0.05, input_duration_s: None, cav: CavParams::default() }
    }
}

/// Scores of one (layer, concept) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TcavEntry {
    pub layer: String,
    pub concept: String,
    /// Mean of `per_run_scores`.
    pub score: f64,
    pub per_run_scores: Vec<f64>,
    /// Unclipped interval `mean -/+ t * s / sqrt(n)`.
    pub ci_low_raw: f64,
    pub ci_high_raw: f64,
    pub p_value: f64,
    pub n_runs: usize,
    pub mean_holdout_accuracy: f64,
}

impl TcavEntry {
    /// Interval clipped to `[0, 1]` for reporting.
    pub fn ci(&self) -> (f64, f64) {
        (self.ci_low_raw.clamp(0.0, 1.0), self.ci_high_raw.clamp(0.0, 1.0))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TcavResult {
    pub entries: Vec<TcavEntry>,
    pub alpha: f64,
    /// Two-sided critical value `t_{alpha/2, n_runs - 1}`.
    pub t_critical: f64,
}

impl TcavResult {
    pub fn get(&self, layer: &str, concept: &str) -> Option<&TcavEntry> {
        self.entries.iter().find(|e| e.layer == layer && e.concept == concept)
    }

    pub fn layers(&self) -> Vec<&str> {
        unique(self.entries.iter().map(|e| e.layer.as_str()))
    }

    pub fn concepts(&self) -> Vec<&str> {
        unique(self.entries.iter().map(|e| e.concept.as_str()))
    }

    /// `layer,concept,score,ci_low,ci_high,p_value,n_runs` with clipped CIs.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("layer,concept,score,ci_low,ci_high,p_value,n_runs\n");
        for e in &self.entries {
            let (lo, hi) = e.ci();
            let _ = writeln!(out, "{},{},{},{lo},{hi},{},{}", e.layer, e.concept, e.score, e.p_value, e.n_runs);
        }
        out
    }
}

fn unique<'a>(items: impl Iterator<Item = &'a str>) -> Vec<&'a str> {
    let mut out: Vec<&str> = Vec::new();
    for s in items {
        if !out.contains(&s) {
            out.push(s);
        }
    }
    out
}

/// Two-sided critical value of Student's t with `dof` degrees of freedom.
pub fn t_critical(alpha: f64, dof: usize) -> f64 {
    StudentsT::new(0.0, 1.0, dof as f64)
        .expect("positive dof")
        .inverse_cdf(1.0 - alpha / 2.0)
}

/// Mean, interval and two-sided one-sample t-test against 0.5.
fn summarize(scores: &[f64], alpha: f64) -> (f64, f64, f64, f64) {
    let n = scores.len() as f64;
    let mean = scores.iter().sum::<f64>() / n;
    let sd = (scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let se = sd / n.sqrt();
    let half = t_critical(alpha, scores.len() - 1) * se;
    let p = if se == 0.0 {
        if mean == 0.5 {
            1.0
        } else {
            0.0
        }
    } else {
        let t = ((mean - 0.5) / se).abs();
        let dist = StudentsT::new(0.0, 1.0, n - 1.0).expect("positive dof");
        2.0 * (1.0 - dist.cdf(t))
    };
    (mean, mean - half, mean + half, p)
}

/// Runs TCAV for every (layer, concept) pair.
///
/// Each of the `n_runs` runs draws a fresh random set (as large as the
/// concept set, seeded by run index so concepts share random sets) from
/// `random_pool`, fits one CAV and scores `inputs`.
pub fn run_tcav(
    model: &WrappedModel,
    layers: &[&str],
    concepts: &[ConceptSet],
    random_pool: &[EcgRecord],
    inputs: &[EcgRecord],
    target: usize,
    params: &TcavParams,
    seed: u64,
) -> Result<TcavResult> {
    model.check_target(target)?;
    if params.n_runs < 2 {
        return Err(Error::InvalidParameter("n_runs must be at least 2".into()));
    }
    if !(params.alpha > 0.0 && params.alpha < 1.0) {
        return Err(Error::InvalidParameter(format!("alpha {} not in (0, 1)", params.alpha)));
    }
    if layers.is_empty() || concepts.is_empty() || inputs.is_empty() {
        return Err(Error::InvalidParameter("layers, concepts and inputs must be non-empty".into()));
    }
    let needed = concepts.iter().map(|c| c.examples.len()).max().unwrap_or(0);
    if random_pool.len() < needed {
        return Err(Error::InsufficientRandomPool { available: random_pool.len(), required: needed });
    }
    let fit = |records: &[EcgRecord]| -> Result<Vec<EcgRecord>> {
        match params.input_duration_s {
            Some(d) => records.iter().map(|r| r.crop_or_pad(d)).collect(),
            None => Ok(records.to_vec()),
        }
    };
    let pool = fit(random_pool)?;
    let inputs = fit(inputs)?;
    let concepts: Vec<ConceptSet> = concepts
        .iter()
        .map(|c| Ok(ConceptSet { name: c.name.clone(), examples: fit(&c.examples)? }))
        .collect::<Result<_>>()?;

    let draws: Vec<Vec<usize>> = (0..params.n_runs)
        .map(|r| {
            let mut idx: Vec<usize> = (0..pool.len()).collect();
            idx.shuffle(&mut rng_from_seed(derive_seed(seed, "tcav-random-set", r as u64)));
            idx
        })
        .collect();

    let mut entries = Vec::with_capacity(layers.len() * concepts.len());
    for (li, &layer) in layers.iter().enumerate() {
        let pool_feats = layer_features(model, layer, &pool, params.cav.pooling)?;
        let grads = layer_gradients(model, layer, &inputs, target, GradSpace::Output)?;
        for (ci, concept) in concepts.iter().enumerate() {
            let feats = layer_features(model, layer, &concept.examples, params.cav.pooling)?;
            let k = concept.examples.len();
            let runs: Vec<(f64, f64)> = draws
                .par_iter()
                .enumerate()
                .map(|(r, idx)| {
                    let random = pool_feats.select(Axis(0), &idx[..k]);
                    let cav_seed = derive_seed(seed, &format!("cav/{li}/{ci}"), r as u64);
                    let cav = fit_cav(layer, &concept.name, &feats, &random, &params.cav, cav_seed)?;
                    Ok((score_from_gradients(&grads, &cav), cav.holdout_accuracy))
                })
                .collect::<Result<_>>()?;
            let scores: Vec<f64> = runs.iter().map(|r| r.0).collect();
            let (score, ci_low_raw, ci_high_raw, p_value) = summarize(&scores, params.alpha);
            entries.push(TcavEntry {
                layer: layer.to_string(),
                concept: concept.name.clone(),
                score,
                per_run_scores: scores,
                ci_low_raw,
                ci_high_raw,
                p_value,
                n_runs: params.n_runs,
                mean_holdout_accuracy: runs.iter().map(|r| r.1).sum::<f64>() / runs.len() as f64,
            });
        }
    }
    Ok(TcavResult { entries, alpha: params.alpha, t_critical: t_critical(params.alpha, params.n_runs - 1) })
}

/// Every record file (`csv`, `bin`, `hea`) directly inside `dir`, in file-name order.
pub fn load_dir_records(dir: &Path) -> Result<Vec<EcgRecord>> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && EcgFormat::from_extension(p).is_some())
        .collect();
    files.sort();
    files
        .iter()
        .map(|p| load_ecg(p, EcgFormat::from_extension(p).expect("filtered")))
        .collect()
}

/// Loads `<root>/<concept>/*.{csv,bin}` as concept sets (sorted by name) and
/// `<root>/random/` as the random pool.
pub fn load_concept_dir(root: &Path) -> Result<(Vec<ConceptSet>, Vec<EcgRecord>)> {
    let random_dir = root.join(RANDOM_DIR);
    if !random_dir.is_dir() {
        return Err(Error::FileNotFound(random_dir));
    }
    let mut names: Vec<String> = fs::read_dir(root)
        .map_err(|e| Error::io(root, e))?
        .filter_map(|e| e.ok())
        .filter(|e| e.path().is_dir())
        .filter_map(|e| e.file_name().into_string().ok())
        .filter(|n| n != RANDOM_DIR)
        .collect();
    names.sort();
    let concepts = names
        .into_iter()
        .map(|n| {
            let examples = load_dir_records(&root.join(&n))?;
            ConceptSet::new(n, examples)
        })
        .collect::<Result<_>>()?;
    Ok((concepts, load_dir_records(&random_dir)?))
}

/// Writes concept sets and a random pool in the layout read by [`load_concept_dir`].
pub fn save_concept_dir(root: &Path, concepts: &[ConceptSet], random_pool: &[EcgRecord]) -> Result<()> {
    let sets = concepts
        .iter()
        .map(|c| (c.name.as_str(), c.examples.as_slice()))
        .chain(std::iter::once((RANDOM_DIR, random_pool)));
    for (name, records) in sets {
        let dir = root.join(name);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        for (i, r) in records.iter().enumerate() {
            crate::record::save_ecg(r, dir.join(format!("ex_{i:04}.bin")), EcgFormat::BinaryFloat32)?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::TaskType;
    use crate::nn::{Conv1d, Layer, NamedLayer, Network};
    use ndarray::{Array1, Array3};

    fn rec(values: Vec<f64>) -> EcgRecord {
        EcgRecord::from_signal(Array2::from_shape_vec((1, values.len()), values).unwrap(), 100).unwrap()
    }

    #[test]
    fn t_table_constant() {
        assert!((t_critical(0.05, 9) - 2.262).abs() < 5e-4);
    }

    #[test]
    fn summary_of_constant_scores() {
        let (m, lo, hi, p) = summarize(&[0.5; 10], 0.05);
        assert_eq!((m, lo, hi, p), (0.5, 0.5, 0.5, 1.0));
        let (_, _, _, p) = summarize(&[1.0; 10], 0.05);
        assert_eq!(p, 0.0);
    }

    #[test]
    fn summary_p_value_matches_hand_calc() {
        // reference: scipy.stats.ttest_1samp(s, 0.5) gives t = 4.7434, p = 0.0010539
        let s = [0.5, 0.5, 0.6, 0.6, 0.6, 0.6, 0.6, 0.6, 0.7, 0.7];
        let (m, lo, hi, p) = summarize(&s, 0.05);
        assert!((m - 0.6).abs() < 1e-12);
        assert!(lo < m && m < hi);
        assert!((p - 0.0010539).abs() < 1e-6, "{p}");
    }

    #[test]
    fn separable_concept_is_learned() {
        let c = Array2::from_shape_fn((15, 3), |(i, j)| if j == 0 { 2.0 + 0.1 * i as f64 } else { (i * j) as f64 % 3.0 });
        let r = Array2::from_shape_fn((15, 3), |(i, j)| if j == 0 { -2.0 - 0.1 * i as f64 } else { (i + j) as f64 % 3.0 });
        let cav = fit_cav("l", "c", &c, &r, &CavParams::default(), 1).unwrap();
        assert!(cav.train_accuracy >= 0.95 && cav.holdout_accuracy >= 0.95);
        let norm: f64 = cav.direction.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-9);
        assert!(cav.direction[0] > 0.9);
        assert_eq!(cav, fit_cav("l", "c", &c, &r, &CavParams::default(), 1).unwrap());
    }

    #[test]
    fn constant_activations_are_degenerate() {
        let c = Array2::ones((10, 4));
        assert!(matches!(
            fit_cav("l", "c", &c, &c.clone(), &CavParams::default(), 0),
            Err(Error::DegenerateActivations(_))
        ));
    }

    #[test]
    fn hand_set_directional_derivative() {
        let g = Array2::from_shape_vec((2, 1), vec![1.0, -1.0]).unwrap();
        assert_eq!(Pooling::Flatten.directional(g.view(), &[1.0, 0.0]), 1.0);
        assert_eq!(Pooling::Flatten.directional(g.view(), &[1.0 / 2f64.sqrt(), 1.0 / 2f64.sqrt()]), 0.0);
        let g = Array2::from_shape_vec((2, 2), vec![1.0, 2.0, -1.0, 0.5]).unwrap();
        assert_eq!(Pooling::MeanOverTime.directional(g.view(), &[0.0, 1.0]), -0.5);
    }

    /// Rectifier (identity on positive inputs) into a full-width two-channel
    /// convolution whose second channel is `w . x`.
    fn linear_model(w: &[f64]) -> WrappedModel {
        let t = w.len();
        let weight = Array3::from_shape_fn((2, 1, t), |(o, _, i)| if o == 1 { w[i] } else { 0.0 });
        let net = Network::new(vec![
            NamedLayer { name: "id".into(), layer: Layer::Relu },
            NamedLayer { name: "fc".into(), layer: Layer::Conv1d(Conv1d::new(weight, Array1::zeros(2), 1, 0)) },
        ])
        .unwrap();
        WrappedModel::new(net, TaskType::BinaryClassification)
    }

    #[test]
    fn self_aligned_and_orthogonal_directions() {
        let model = linear_model(&[1.0, 2.0, -1.0]);
        let r = rec(vec![0.5, 0.2, 0.1]);
        let g = layer_gradients(&model, "id", std::slice::from_ref(&r), 1, GradSpace::Output).unwrap();
        let g: Vec<f64> = g.iter().copied().collect();
        let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        let cav = |direction: Vec<f64>| Cav {
            layer_name: "id".into(),
            concept_name: "c".into(),
            direction,
            train_accuracy: 1.0,
            holdout_accuracy: 1.0,
            pooling: Pooling::Flatten,
        };
        let aligned = cav(g.iter().map(|v| v / norm).collect());
        let s = directional_derivative(&model, "id", &aligned, &r, 1).unwrap();
        assert!((s - norm).abs() < 1e-12 && s > 0.0);
        let orth = cav(vec![2.0 / 5f64.sqrt(), -1.0 / 5f64.sqrt(), 0.0]);
        assert!(directional_derivative(&model, "id", &orth, &r, 1).unwrap().abs() < 1e-12);
        assert_eq!(tcav_score(&model, "id", &aligned, &[r.clone(), r.clone()], 1).unwrap(), 1.0);
        assert_eq!(tcav_score(&model, "id", &aligned.negated(), &[r.clone()], 1).unwrap(), 0.0);
        assert!(directional_derivative(&model, "fc", &aligned, &r, 1).is_err());
    }

    #[test]
    fn concept_set_validation() {
        let few = vec![rec(vec![0.0, 1.0]); 3];
        assert!(ConceptSet::new("c", few).is_err());
        let mut mixed = vec![rec(vec![0.0, 1.0]); 10];
        mixed.push(EcgRecord::from_signal(Array2::zeros((2, 2)), 100).unwrap());
        assert!(ConceptSet::new("c", mixed).is_err());
    }

    #[test]
    fn insufficient_pool_rejected() {
        let model = linear_model(&[1.0, 2.0, -1.0]);
        let concept = ConceptSet::new("c", vec![rec(vec![0.5, 0.2, 0.1]); 10]).unwrap();
        let err = run_tcav(&model, &["id"], &[concept], &[rec(vec![0.0; 3])], &[rec(vec![0.0; 3])], 1, &TcavParams::default(), 0);
        assert!(matches!(err, Err(Error::InsufficientRandomPool { available: 1, required: 10 })));
    }

    #[test]
    fn concept_dir_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let make = |k: f64| (0..10).map(|i| rec(vec![k, i as f64])).collect::<Vec<_>>();
        let concepts = vec![ConceptSet::new("b", make(1.0)).unwrap(), ConceptSet::new("a", make(2.0)).unwrap()];
        save_concept_dir(dir.path(), &concepts, &make(0.0)).unwrap();
        let (loaded, pool) = load_concept_dir(dir.path()).unwrap();
        assert_eq!(loaded.iter().map(|c| c.name.as_str()).collect::<Vec<_>>(), ["a", "b"]);
        assert_eq!(loaded[1].examples[3].signal()[[0, 1]], 3.0);
        assert_eq!(pool.len(), 10);
    }
}
