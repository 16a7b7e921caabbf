mod chart;
mod explain;
mod synth;
mod tcav;

use std::path::{Path, PathBuf};

use ecgxai::record::{load_ecg, EcgFormat, EcgRecord};
use ecgxai::wrapper::WrappedModel;

use crate::config::{Resolved, Section};
use crate::error::{CliError, CliResult};

pub fn execute(resolved: &Resolved, out_root: &Path) -> CliResult<PathBuf> {
    match &resolved.section {
        Section::Explain(c) => explain::run(resolved, c, out_root),
        Section::Chart(c) => chart::run(resolved, c, out_root),
        Section::Synth(c) => synth::run(resolved, c, out_root),
        Section::Tcav(c) => tcav::run(resolved, c, out_root),
    }
}

fn load_model(path: &Path) -> CliResult<WrappedModel> {
    WrappedModel::load(path).map_err(|e| CliError::ModelLoad(e.to_string()))
}

/// A referenced input record; failures are configuration errors.
fn load_record(path: &Path) -> CliResult<EcgRecord> {
    let format = EcgFormat::from_extension(path).ok_or_else(|| {
        CliError::config(format!("{}: unrecognized record extension (expected csv, bin or hea)", path.display()))
    })?;
    load_ecg(path, format).map_err(|e| CliError::config(format!("{}: {e}", path.display())))
}

/// The section of the resolved table for this command.
fn section_table(resolved: &Resolved) -> toml::Table {
    match resolved.table.get(resolved.command.name()) {
        Some(toml::Value::Table(t)) => t.clone(),
        _ => toml::Table::new(),
    }
}

fn check_layer(model: &WrappedModel, layer: &str) -> CliResult<()> {
    if model.layer_names().contains(&layer) {
        return Ok(());
    }
    Err(CliError::config(format!("unknown layer `{layer}`; model layers: {}", model.layer_names().join(", "))))
}
