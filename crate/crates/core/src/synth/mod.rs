//! Synthetic fixtures: parametric ECGs, the AF-proxy dataset, a toy
//! differentiable generator and the reference model.

mod concepts;
mod dataset;
mod ecg;
mod generator;
mod reference;

pub use concepts::{af_records, make_concept_sets};
pub use dataset::{make_af_dataset, make_af_record, sample_class_params, Dataset, Split, AF_LEADS, AF_RATE, AF_SAMPLES};
pub use ecg::{
    lead_gain, p_window_mask, r_peak_times, sinus_rr_jitter, synth_ecg, synth_ecg_with_peaks, BeatParams, Wave,
    LEAD_GAINS, P_WINDOW,
};
pub use generator::{toy_generator, ToyGenerator};
pub use reference::{
    accuracy, reference_train_config, train_reference_model, train_reference_model_with, train_reference_regressor,
    TrainingReport, REFERENCE_EPOCHS,
};
