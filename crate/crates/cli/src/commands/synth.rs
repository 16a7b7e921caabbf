use std::fs;
use std::path::{Path, PathBuf};

use ecgxai::config::{derive_seed, RunConfig};
use ecgxai::synth::{make_af_dataset, make_concept_sets, train_reference_model};
use ecgxai::tcav::save_concept_dir;
use serde::Serialize;

use super::section_table;
use crate::config::{Resolved, SynthConfig};
use crate::error::{CliError, CliResult};
use crate::run::{params_of, write_stage, Run};

#[derive(Serialize)]
struct Report {
    train_accuracy: f64,
    val_accuracy: f64,
    test_accuracy: f64,
    epoch_losses: Vec<f64>,
}

pub fn run(resolved: &Resolved, c: &SynthConfig, out_root: &Path) -> CliResult<PathBuf> {
    let seed = resolved.seed;
    let run_config = RunConfig {
        seed,
        method_name: "synth".into(),
        method_params: params_of(&section_table(resolved), &[]),
        model_id: String::new(),
        input_fingerprint: String::new(),
    };
    let mut run = Run::create(resolved, out_root, run_config)?;

    let dataset = make_af_dataset(c.n_per_class.unwrap_or(200), derive_seed(seed, "synth-dataset", 0))
        .map_err(CliError::stage("generate dataset"))?;
    let dataset_dir = run.mkdir("dataset")?;
    for rel in dataset.save(&dataset_dir).map_err(write_stage)? {
        run.record("dataset", Path::new("dataset").join(rel))?;
    }

    let epochs = c.epochs.unwrap_or(ecgxai::synth::REFERENCE_EPOCHS);
    let (model, report) =
        train_reference_model(&dataset, epochs, derive_seed(seed, "synth-train", 0)).map_err(CliError::stage("training"))?;
    model.save(&run.path("model.ckpt")).map_err(write_stage)?;
    run.record("checkpoint", "model.ckpt")?;
    let report = Report {
        train_accuracy: report.train_accuracy,
        val_accuracy: report.val_accuracy,
        test_accuracy: report.test_accuracy,
        epoch_losses: report.epoch_losses,
    };
    run.write("training.toml", toml::to_string(&report).map_err(write_stage)?)?;
    run.record("training_report", "training.toml")?;

    if c.concepts.unwrap_or(true) {
        let k = c.n_per_concept.unwrap_or(20);
        let (concepts, pool) = make_concept_sets(k, c.pool_size.unwrap_or(3 * k), derive_seed(seed, "synth-concepts", 0))
            .map_err(CliError::stage("generate concepts"))?;
        let root = run.mkdir("concepts")?;
        save_concept_dir(&root, &concepts, &pool).map_err(write_stage)?;
        for rel in files_under(&root, Path::new("concepts"))? {
            run.record("concept_example", rel)?;
        }
    }
    run.finish()
}

/// Files below `dir` as paths prefixed by `prefix`, sorted.
fn files_under(dir: &Path, prefix: &Path) -> CliResult<Vec<PathBuf>> {
    let mut out = Vec::new();
    let mut entries: Vec<_> = fs::read_dir(dir).map_err(write_stage)?.filter_map(|e| e.ok()).collect();
    entries.sort_by_key(|e| e.file_name());
    for e in entries {
        let rel = prefix.join(e.file_name());
        if e.path().is_dir() {
            out.extend(files_under(&e.path(), &rel)?);
        } else {
            out.push(rel);
        }
    }
    Ok(out)
}
