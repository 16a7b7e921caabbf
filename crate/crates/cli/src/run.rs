//! Run directories and their manifests.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use ecgxai::config::{ExplanationManifest, ParamValue, Params, RunConfig};

use crate::config::Resolved;
use crate::error::{CliError, CliResult};

const WRITE_STAGE: &str = "write outputs";

/// An open run directory collecting artifacts for its manifest.
pub struct Run {
    pub dir: PathBuf,
    manifest: ExplanationManifest,
    started: Instant,
}

impl Run {
    pub fn create(resolved: &Resolved, out_root: &Path, run_config: RunConfig) -> CliResult<Self> {
        let dir = out_root.join(resolved.run_dir_name());
        fs::create_dir_all(&dir).map_err(|e| CliError::Stage {
            stage: "create run directory".into(),
            message: format!("{}: {e}", dir.display()),
        })?;
        let mut manifest = ExplanationManifest::new(run_config);
        manifest.config = Some(resolved.table.clone());
        Ok(Self { dir, manifest, started: Instant::now() })
    }

    pub fn path(&self, rel: impl AsRef<Path>) -> PathBuf {
        self.dir.join(rel)
    }

    pub fn mkdir(&self, rel: impl AsRef<Path>) -> CliResult<PathBuf> {
        let p = self.path(rel);
        fs::create_dir_all(&p).map_err(|e| write_error(&p, e))?;
        Ok(p)
    }

    pub fn write(&self, rel: &str, contents: impl AsRef<[u8]>) -> CliResult<()> {
        let p = self.path(rel);
        fs::write(&p, contents).map_err(|e| write_error(&p, e))
    }

    /// Lists an artifact that already exists under the run directory.
    pub fn record(&mut self, kind: &str, rel: impl Into<PathBuf>) -> CliResult<()> {
        self.manifest.add_output(kind, &self.dir, rel).map_err(CliError::stage(WRITE_STAGE))
    }

    pub fn note(&mut self, note: impl Into<String>) {
        self.manifest.notes.push(note.into());
    }

    /// Writes `manifest.toml` and returns the run directory.
    pub fn finish(mut self) -> CliResult<PathBuf> {
        self.manifest.wall_time_s = self.started.elapsed().as_secs_f64();
        let path = self.path("manifest.toml");
        self.manifest.write(&path).map_err(CliError::stage(WRITE_STAGE))?;
        Ok(self.dir)
    }
}

fn write_error(p: &Path, e: std::io::Error) -> CliError {
    CliError::Stage { stage: WRITE_STAGE.into(), message: format!("{}: {e}", p.display()) }
}

pub fn write_stage<E: std::fmt::Display>(e: E) -> CliError {
    CliError::stage(WRITE_STAGE)(e)
}

/// Scalar entries of a resolved section as method parameters; nested values
/// are kept as their TOML text.
pub fn params_of(section: &toml::Table, skip: &[&str]) -> Params {
    section
        .iter()
        .filter(|(k, _)| !skip.contains(&k.as_str()))
        .map(|(k, v)| {
            let p = match v {
                toml::Value::Boolean(b) => ParamValue::Bool(*b),
                toml::Value::Integer(i) => ParamValue::Int(*i),
                toml::Value::Float(f) => ParamValue::Float(*f),
                toml::Value::String(s) => ParamValue::Text(s.clone()),
                other => ParamValue::Text(other.to_string()),
            };
            (k.clone(), p)
        })
        .collect()
}
