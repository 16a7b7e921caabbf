use std::path::{Path, PathBuf};

use ecgxai::attribution::{
    AttributionResult, CamVariant, GradCam, GuidedGradCam, IntegratedGradients, Method, Saliency, SmoothGrad,
};
use ecgxai::config::{derive_seed, RunConfig};
use ecgxai::counterfactual::explain_cf;
use ecgxai::record::{fingerprint_all, save_ecg, EcgFormat, EcgRecord};
use ecgxai::synth::toy_generator;
use ecgxai::viz::{plot_attribution, plot_counterfactual_overlay};
use ecgxai::wrapper::WrappedModel;
use ecgxai::Explainer;
use serde::Serialize;

use super::{check_layer, load_model, load_record, section_table};
use crate::config::{ExplainConfig, ExplainKind, Resolved, DEFAULT_BIN_SIZE, DEFAULT_LATENT_DIM};
use crate::error::{CliError, CliResult};
use crate::run::{params_of, write_stage, Run};

pub fn run(resolved: &Resolved, c: &ExplainConfig, out_root: &Path) -> CliResult<PathBuf> {
    let kind = c.kind()?;
    let model = load_model(&c.model)?;
    let records = c.inputs.iter().map(|p| load_record(p)).collect::<CliResult<Vec<_>>>()?;
    model.check_target(c.target).map_err(CliError::config)?;
    if let Some(layer) = &c.layer {
        check_layer(&model, layer)?;
    }
    let run_config = RunConfig {
        seed: resolved.seed,
        method_name: kind.name().to_string(),
        method_params: params_of(&section_table(resolved), &["model", "inputs", "method"]),
        model_id: model.model_id(),
        input_fingerprint: fingerprint_all(&records),
    };
    let mut run = Run::create(resolved, out_root, run_config)?;
    match kind {
        ExplainKind::Attribution(method) => attributions(&mut run, &model, &records, c, method, resolved.seed)?,
        ExplainKind::Counterfactual => counterfactuals(&mut run, &model, &records, c, resolved.seed)?,
    }
    run.finish()
}

fn stage_name(i: usize, c: &ExplainConfig) -> String {
    format!("explain input {i} ({})", c.inputs[i].display())
}

fn explainer(
    method: Method,
    c: &ExplainConfig,
    seed: u64,
    baseline: Option<EcgRecord>,
) -> Box<dyn Explainer<Output = AttributionResult>> {
    let grad_on_raw = c.grad_on_raw.unwrap_or(method.needs_layer());
    let layer = c.layer.clone().unwrap_or_default();
    match method {
        Method::Saliency => Box::new(Saliency { grad_on_raw }),
        Method::Smoothgrad => Box::new(SmoothGrad {
            n_samples: c.n_samples.unwrap_or(25),
            noise_level: c.noise_level.unwrap_or(0.1),
            seed,
            grad_on_raw,
        }),
        Method::IntegratedGradients => {
            Box::new(IntegratedGradients { steps: c.steps.unwrap_or(50), baseline, grad_on_raw })
        }
        Method::Gradcam => Box::new(GradCam { layer, variant: CamVariant::Gradcam, grad_on_raw }),
        Method::Gradcampp => Box::new(GradCam { layer, variant: CamVariant::Gradcampp, grad_on_raw }),
        Method::GuidedGradcam => Box::new(GuidedGradCam { layer, grad_on_raw }),
    }
}

fn attributions(
    run: &mut Run,
    model: &WrappedModel,
    records: &[EcgRecord],
    c: &ExplainConfig,
    method: Method,
    seed: u64,
) -> CliResult<()> {
    let baseline = c.baseline.as_deref().map(load_record).transpose()?;
    let explainer = explainer(method, c, seed, baseline);
    let bin_size = c.bin_size.unwrap_or(DEFAULT_BIN_SIZE);
    for (i, record) in records.iter().enumerate() {
        let result = explainer.explain(model, record, c.target).map_err(CliError::stage(stage_name(i, c)))?;
        let stem = format!("attribution_{i:03}");
        result.save(&run.dir, &stem, record.sampling_rate()).map_err(write_stage)?;
        run.record("attribution", format!("{stem}.bin"))?;
        run.record("attribution_meta", format!("{stem}.toml"))?;
        if c.plot.unwrap_or(true) {
            let svg = format!("{stem}.svg");
            plot_attribution(record, &result, bin_size, &run.path(&svg))
                .map_err(CliError::stage(format!("plot input {i}")))?;
            run.record("figure", svg)?;
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct CfSummary {
    original_pred: f64,
    cf_pred: f64,
    target_value: f64,
    converged: bool,
    reconstruction_mse: f64,
    latent_distance: f64,
    steps: usize,
    z_init: Vec<f64>,
    z_final: Vec<f64>,
}

fn counterfactuals(run: &mut Run, model: &WrappedModel, records: &[EcgRecord], c: &ExplainConfig, seed: u64) -> CliResult<()> {
    let target_value = c.target_value.unwrap_or(1.0);
    if model.task().is_classification() && !(0.0..=1.0).contains(&target_value) {
        return Err(CliError::config(format!("target_value {target_value} is not a probability")));
    }
    let lead = c.lead.unwrap_or(1);
    if let Some(r) = records.iter().find(|r| lead >= r.n_leads()) {
        return Err(CliError::config(format!("lead {lead} out of range for a {}-lead record", r.n_leads())));
    }
    let generator = toy_generator(c.latent_dim.unwrap_or(DEFAULT_LATENT_DIM));
    let params = c.cf_params();
    for (i, record) in records.iter().enumerate() {
        let res = explain_cf(model, &generator, record, c.target, target_value, &params, derive_seed(seed, "cli-cf", i as u64))
            .map_err(CliError::stage(stage_name(i, c)))?;
        let stem = format!("cf_{i:03}");
        for (suffix, rec) in [("", &res.counterfactual), ("_reconstruction", &res.reconstruction)] {
            let rel = format!("{stem}{suffix}.bin");
            save_ecg(rec, run.path(&rel), EcgFormat::BinaryFloat32).map_err(write_stage)?;
            run.record(if suffix.is_empty() { "counterfactual" } else { "reconstruction" }, rel)?;
        }
        run.write(&format!("{stem}_trace.csv"), res.trace_csv())?;
        run.record("loss_trace", format!("{stem}_trace.csv"))?;
        let summary = CfSummary {
            original_pred: res.original_pred,
            cf_pred: res.cf_pred,
            target_value,
            converged: res.converged,
            reconstruction_mse: res.reconstruction_mse,
            latent_distance: res.latent_distance(),
            steps: res.loss_trace.last().map_or(0, |r| r.step),
            z_init: res.z_init.clone(),
            z_final: res.z_final.clone(),
        };
        run.write(&format!("{stem}.toml"), toml::to_string(&summary).map_err(write_stage)?)?;
        run.record("counterfactual_summary", format!("{stem}.toml"))?;
        if !res.converged {
            run.note(format!(
                "input {i}: no start reached the tolerance; |cf_pred - target| = {:.4}",
                (res.cf_pred - target_value).abs()
            ));
        }
        if c.plot.unwrap_or(true) {
            let svg = format!("{stem}_overlay.svg");
            plot_counterfactual_overlay(record, &res.counterfactual, lead, res.original_pred, res.cf_pred, &run.path(&svg))
                .map_err(CliError::stage(format!("plot input {i}")))?;
            run.record("figure", svg)?;
        }
    }
    Ok(())
}
