use std::path::{Path, PathBuf};

use ecgxai::config::RunConfig;
use ecgxai::record::fingerprint_all;
use ecgxai::tcav::{load_concept_dir, load_dir_records, run_tcav};
use ecgxai::viz::plot_tcav;

use super::{check_layer, load_model, load_record, section_table};
use crate::config::{Resolved, TcavConfig};
use crate::error::{CliError, CliResult};
use crate::run::{params_of, write_stage, Run};

pub fn run(resolved: &Resolved, c: &TcavConfig, out_root: &Path) -> CliResult<PathBuf> {
    let model = load_model(&c.model)?;
    for layer in &c.layers {
        check_layer(&model, layer)?;
    }
    model.check_target(c.target).map_err(CliError::config)?;
    let (concepts, pool) = load_concept_dir(&c.concepts_dir)
        .map_err(|e| CliError::config(format!("{}: {e}", c.concepts_dir.display())))?;
    let mut inputs = Vec::new();
    for p in &c.inputs {
        if p.is_dir() {
            inputs.extend(load_dir_records(p).map_err(|e| CliError::config(format!("{}: {e}", p.display())))?);
        } else {
            inputs.push(load_record(p)?);
        }
    }
    if inputs.is_empty() {
        return Err(CliError::config("tcav.inputs contain no records"));
    }

    let run_config = RunConfig {
        seed: resolved.seed,
        method_name: "tcav".into(),
        method_params: params_of(&section_table(resolved), &["model", "inputs", "concepts_dir"]),
        model_id: model.model_id(),
        input_fingerprint: fingerprint_all(&inputs),
    };
    let mut run = Run::create(resolved, out_root, run_config)?;
    if let Some(s) = c.input_duration_s {
        run.note(format!("all records cropped or zero-padded to {s} s before scoring"));
    }
    let layers: Vec<&str> = c.layers.iter().map(String::as_str).collect();
    let result = run_tcav(&model, &layers, &concepts, &pool, &inputs, c.target, &c.params(), resolved.seed)
        .map_err(CliError::stage("tcav"))?;

    run.write("tcav.csv", result.to_csv())?;
    run.record("tcav_scores", "tcav.csv")?;
    run.write("tcav.toml", toml::to_string(&result).map_err(write_stage)?)?;
    run.record("tcav_result", "tcav.toml")?;
    plot_tcav(&result, &layers, &run.path("tcav_heatmap.svg"), &run.path("tcav_ci.svg"))
        .map_err(CliError::stage("plot tcav"))?;
    run.record("figure", "tcav_heatmap.svg")?;
    run.record("figure", "tcav_ci.svg")?;
    run.finish()
}
