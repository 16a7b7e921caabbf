//! Desk-scale reference classifier (and a scalar regression variant) trained
//! on the AF-proxy dataset.

use ndarray::{Array2, Array3};

use super::dataset::Dataset;
use crate::config::{derive_seed, rng_from_seed, TaskType};
use crate::error::{Error, Result};
use crate::nn::train::{train, Objective, TrainConfig};
use crate::nn::Network;
use crate::record::EcgRecord;
use crate::wrapper::{stack_records, WrappedModel};

/// Default number of training epochs for the reference model.
pub const REFERENCE_EPOCHS: usize = 12;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingReport {
    pub epoch_losses: Vec<f64>,
    pub train_accuracy: f64,
    pub val_accuracy: f64,
    pub test_accuracy: f64,
}

/// Trains the reference binary classifier on the dataset's train split.
/// Deterministic: equal `(dataset, epochs, seed)` give bit-identical weights.
pub fn train_reference_model(dataset: &Dataset, epochs: usize, seed: u64) -> Result<(WrappedModel, TrainingReport)> {
    train_reference_model_with(dataset, &TrainConfig { epochs, ..reference_train_config() }, seed)
}

/// Training hyperparameters of the reference model (the seed is overridden).
pub fn reference_train_config() -> TrainConfig {
    TrainConfig::default()
}

/// As [`train_reference_model`] with explicit hyperparameters.
pub fn train_reference_model_with(dataset: &Dataset, config: &TrainConfig, seed: u64) -> Result<(WrappedModel, TrainingReport)> {
    let (n_leads, _) = record_dims(dataset)?;
    let mut net = Network::reference(n_leads, 2, &mut rng_from_seed(derive_seed(seed, "init", 0)));
    let (records, labels) = dataset.subset(&dataset.split.train);
    let targets: Vec<f64> = labels.iter().map(|&l| l as f64).collect();
    let config = TrainConfig { seed: derive_seed(seed, "shuffle", 0), ..*config };
    let views: Vec<_> = records.iter().map(EcgRecord::signal).collect();
    let epoch_losses = train(&mut net, &views, &targets, Objective::SoftmaxCrossEntropy, &config)?;
    let model = WrappedModel::new(net, TaskType::BinaryClassification);
    let report = TrainingReport {
        epoch_losses,
        train_accuracy: accuracy(&model, dataset, &dataset.split.train)?,
        val_accuracy: accuracy(&model, dataset, &dataset.split.val)?,
        test_accuracy: accuracy(&model, dataset, &dataset.split.test)?,
    };
    Ok((model, report))
}

/// Scalar-head regression variant trained to predict the label as a real
/// value; provided for single-output coverage.
pub fn train_reference_regressor(dataset: &Dataset, epochs: usize, seed: u64) -> Result<WrappedModel> {
    let (n_leads, _) = record_dims(dataset)?;
    let mut net = Network::reference(n_leads, 1, &mut rng_from_seed(derive_seed(seed, "init-reg", 0)));
    let (records, labels) = dataset.subset(&dataset.split.train);
    let targets: Vec<f64> = labels.iter().map(|&l| l as f64).collect();
    let config = TrainConfig { epochs, seed: derive_seed(seed, "shuffle-reg", 0), ..TrainConfig::default() };
    let views: Vec<_> = records.iter().map(EcgRecord::signal).collect();
    train(&mut net, &views, &targets, Objective::SquaredError, &config)?;
    Ok(WrappedModel::new(net, TaskType::Regression))
}

/// Fraction of `indices` whose arg-max prediction equals the label.
pub fn accuracy(model: &WrappedModel, dataset: &Dataset, indices: &[usize]) -> Result<f64> {
    if indices.is_empty() {
        return Ok(f64::NAN);
    }
    let (records, labels) = dataset.subset(indices);
    let probs = predict_in_chunks(model, &records)?;
    let correct = probs
        .outer_iter()
        .zip(&labels)
        .filter(|(row, &label)| argmax(row.as_slice().expect("row-major")) == label)
        .count();
    Ok(correct as f64 / labels.len() as f64)
}

fn predict_in_chunks(model: &WrappedModel, records: &[EcgRecord]) -> Result<Array2<f64>> {
    let mut rows = Vec::with_capacity(records.len());
    for chunk in records.chunks(64) {
        let batch: Array3<f64> = stack_records(chunk)?;
        let out = model.predict(batch.view(), None, false)?.output;
        rows.extend(out.outer_iter().map(|r| r.to_owned()));
    }
    let views: Vec<_> = rows.iter().map(|r| r.view()).collect();
    ndarray::stack(ndarray::Axis(0), &views).map_err(|e| Error::ShapeMismatch(e.to_string()))
}

fn argmax(row: &[f64]) -> usize {
    row.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) })
        .0
}

fn record_dims(dataset: &Dataset) -> Result<(usize, usize)> {
    let first = dataset
        .records
        .first()
        .ok_or_else(|| Error::InvalidParameter("empty dataset".into()))?;
    Ok((first.n_leads(), first.n_samples()))
}
