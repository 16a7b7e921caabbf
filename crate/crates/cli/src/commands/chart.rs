use std::fs;
use std::path::{Path, PathBuf};

use ecgxai::attribution::AttributionResult;
use ecgxai::config::RunConfig;
use ecgxai::record::fingerprint_all;
use ecgxai::tcav::TcavResult;
use ecgxai::viz::{plot_ecg_chart, EcgChart};

use super::{load_record, section_table};
use crate::config::{ChartConfig, Resolved, DEFAULT_BIN_SIZE};
use crate::error::{CliError, CliResult};
use crate::run::{params_of, Run};

pub fn run(resolved: &Resolved, c: &ChartConfig, out_root: &Path) -> CliResult<PathBuf> {
    let record = load_record(&c.record)?;
    let cf = c.counterfactual.as_deref().map(load_record).transpose()?;
    let attribution = c
        .attribution
        .as_deref()
        .map(|p| AttributionResult::load(p).map_err(|e| CliError::config(format!("{}: {e}", p.display()))))
        .transpose()?;
    let tcav = c.tcav.as_deref().map(load_tcav).transpose()?;

    let mut inputs = vec![record.clone()];
    inputs.extend(cf.iter().cloned());
    let run_config = RunConfig {
        seed: resolved.seed,
        method_name: "chart".into(),
        method_params: params_of(&section_table(resolved), &["record"]),
        model_id: String::new(),
        input_fingerprint: fingerprint_all(&inputs),
    };
    let chart = EcgChart {
        style: c.style.clone().unwrap_or_default(),
        show_calibration: c.show_calibration.unwrap_or(true),
        cf_ecg: cf.as_ref(),
        attribution: attribution.as_ref(),
        attribution_bin_size: c.attribution_bin_size.unwrap_or(DEFAULT_BIN_SIZE),
        title: c.title.clone().unwrap_or_default(),
        concepts: tcav.as_ref(),
    };
    let mut run = Run::create(resolved, out_root, run_config)?;
    plot_ecg_chart(&record, &chart, &run.path("chart.svg")).map_err(CliError::stage("render chart"))?;
    run.record("figure", "chart.svg")?;
    run.finish()
}

fn load_tcav(path: &Path) -> CliResult<TcavResult> {
    let text = fs::read_to_string(path).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| CliError::config(format!("{}: {e}", path.display())))
}
