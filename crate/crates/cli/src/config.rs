//! Config schema, loading and resolution.
//!
//! A config file is TOML with an optional top-level `seed` and `out_dir` and
//! one table per command (`[explain]`, `[chart]`, `[synth]`, `[tcav]`).
//! Unknown keys are rejected. Resolution fills every default and makes paths
//! absolute (relative paths are taken from the config file's directory), so
//! the resolved table alone reproduces a run. A run's `manifest.toml` embeds
//! that table and is itself accepted as a config.

use std::fs;
use std::path::{Path, PathBuf};

use ecgxai::attribution::Method;
use ecgxai::config::sha256_hex;
use ecgxai::counterfactual::CounterfactualParams;
use ecgxai::record::EcgFormat;
use ecgxai::tcav::{CavParams, TcavParams, MIN_CONCEPT_EXAMPLES};
use ecgxai::viz::ChartStyle;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

pub const COUNTERFACTUAL: &str = "counterfactual";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Explain,
    Chart,
    Synth,
    Tcav,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Explain => "explain",
            Command::Chart => "chart",
            Command::Synth => "synth",
            Command::Tcav => "tcav",
        }
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    seed: Option<u64>,
    out_dir: Option<PathBuf>,
    explain: Option<ExplainConfig>,
    chart: Option<ChartConfig>,
    synth: Option<SynthConfig>,
    tcav: Option<TcavConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExplainConfig {
    pub model: PathBuf,
    pub inputs: Vec<PathBuf>,
    /// An attribution method name or `counterfactual`.
    pub method: String,
    #[serde(default)]
    pub target: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub layer: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grad_on_raw: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_samples: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_level: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub steps: Option<usize>,
    /// Integrated-gradients baseline record; zeros when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub baseline: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_value: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda_prox: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_steps: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step_size: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub patience: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub starts: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub start_sigma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latent_dim: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inversion_restarts: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inversion_steps: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inversion_learning_rate: Option<f64>,
    /// Bin width of attribution plots, samples.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bin_size: Option<usize>,
    /// Lead drawn in counterfactual overlays.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lead: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plot: Option<bool>,
}

/// What an `explain` run computes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExplainKind {
    Attribution(Method),
    Counterfactual,
}

impl ExplainKind {
    pub fn parse(name: &str) -> CliResult<Self> {
        let key = name.trim().to_ascii_lowercase();
        if key == COUNTERFACTUAL || key == "cf" {
            return Ok(ExplainKind::Counterfactual);
        }
        name.parse::<Method>().map(ExplainKind::Attribution).map_err(|_| {
            CliError::config(format!(
                "unknown method `{name}`; valid methods: {}, {COUNTERFACTUAL}",
                Method::valid_names()
            ))
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            ExplainKind::Attribution(m) => m.name(),
            ExplainKind::Counterfactual => COUNTERFACTUAL,
        }
    }

    fn allowed(self) -> &'static [&'static str] {
        match self {
            ExplainKind::Attribution(Method::Saliency) => &["grad_on_raw", "bin_size", "plot"],
            ExplainKind::Attribution(Method::Smoothgrad) => &["grad_on_raw", "bin_size", "plot", "n_samples", "noise_level"],
            ExplainKind::Attribution(Method::IntegratedGradients) => {
                &["grad_on_raw", "bin_size", "plot", "steps", "baseline"]
            }
            ExplainKind::Attribution(_) => &["grad_on_raw", "bin_size", "plot", "layer"],
            ExplainKind::Counterfactual => &[
                "target_value",
                "lambda_prox",
                "max_steps",
                "tol",
                "step_size",
                "patience",
                "starts",
                "start_sigma",
                "latent_dim",
                "inversion_restarts",
                "inversion_steps",
                "inversion_learning_rate",
                "lead",
                "plot",
            ],
        }
    }
}

pub const DEFAULT_BIN_SIZE: usize = 25;
pub const DEFAULT_LATENT_DIM: usize = 8;

impl ExplainConfig {
    fn present(&self) -> Vec<&'static str> {
        let flags = [
            ("layer", self.layer.is_some()),
            ("grad_on_raw", self.grad_on_raw.is_some()),
            ("n_samples", self.n_samples.is_some()),
            ("noise_level", self.noise_level.is_some()),
            ("steps", self.steps.is_some()),
            ("baseline", self.baseline.is_some()),
            ("target_value", self.target_value.is_some()),
            ("lambda_prox", self.lambda_prox.is_some()),
            ("max_steps", self.max_steps.is_some()),
            ("tol", self.tol.is_some()),
            ("step_size", self.step_size.is_some()),
            ("patience", self.patience.is_some()),
            ("starts", self.starts.is_some()),
            ("start_sigma", self.start_sigma.is_some()),
            ("latent_dim", self.latent_dim.is_some()),
            ("inversion_restarts", self.inversion_restarts.is_some()),
            ("inversion_steps", self.inversion_steps.is_some()),
            ("inversion_learning_rate", self.inversion_learning_rate.is_some()),
            ("bin_size", self.bin_size.is_some()),
            ("lead", self.lead.is_some()),
            ("plot", self.plot.is_some()),
        ];
        flags.into_iter().filter(|(_, set)| *set).map(|(k, _)| k).collect()
    }

    pub fn kind(&self) -> CliResult<ExplainKind> {
        ExplainKind::parse(&self.method)
    }

    fn resolve(mut self, base: &Path) -> CliResult<Self> {
        let kind = self.kind()?;
        if let Some(key) = self.present().into_iter().find(|k| !kind.allowed().contains(k)) {
            return Err(CliError::config(format!("parameter `{key}` does not apply to method `{}`", kind.name())));
        }
        if self.inputs.is_empty() {
            return Err(CliError::config("explain.inputs is empty"));
        }
        self.method = kind.name().to_string();
        self.model = rebase(base, &self.model);
        self.inputs = expand_dirs(self.inputs.iter().map(|p| rebase(base, p)))?;
        self.plot.get_or_insert(true);
        match kind {
            ExplainKind::Attribution(method) => {
                if method.needs_layer() && self.layer.is_none() {
                    return Err(CliError::config(format!("method `{}` needs `layer`", method.name())));
                }
                self.grad_on_raw.get_or_insert(method.needs_layer());
                positive("bin_size", *self.bin_size.get_or_insert(DEFAULT_BIN_SIZE))?;
                match method {
                    Method::Smoothgrad => {
                        positive("n_samples", *self.n_samples.get_or_insert(25))?;
                        non_negative("noise_level", *self.noise_level.get_or_insert(0.1))?;
                    }
                    Method::IntegratedGradients => {
                        positive("steps", *self.steps.get_or_insert(50))?;
                        self.baseline = self.baseline.as_deref().map(|p| rebase(base, p));
                    }
                    _ => {}
                }
            }
            ExplainKind::Counterfactual => {
                let d = CounterfactualParams::default();
                finite("target_value", *self.target_value.get_or_insert(1.0))?;
                non_negative("lambda_prox", *self.lambda_prox.get_or_insert(d.lambda_prox))?;
                self.max_steps.get_or_insert(d.max_steps);
                non_negative("tol", *self.tol.get_or_insert(d.tol))?;
                strictly_positive("step_size", *self.step_size.get_or_insert(d.step_size))?;
                self.patience.get_or_insert(d.patience);
                positive("starts", *self.starts.get_or_insert(d.starts))?;
                non_negative("start_sigma", *self.start_sigma.get_or_insert(d.start_sigma))?;
                positive("latent_dim", *self.latent_dim.get_or_insert(DEFAULT_LATENT_DIM))?;
                positive("inversion_restarts", *self.inversion_restarts.get_or_insert(d.inversion.restarts))?;
                self.inversion_steps.get_or_insert(d.inversion.steps);
                strictly_positive(
                    "inversion_learning_rate",
                    *self.inversion_learning_rate.get_or_insert(d.inversion.learning_rate),
                )?;
                self.lead.get_or_insert(1);
            }
        }
        Ok(self)
    }

    /// Counterfactual settings; only meaningful after resolution.
    pub fn cf_params(&self) -> CounterfactualParams {
        let d = CounterfactualParams::default();
        CounterfactualParams {
            lambda_prox: self.lambda_prox.unwrap_or(d.lambda_prox),
            max_steps: self.max_steps.unwrap_or(d.max_steps),
            tol: self.tol.unwrap_or(d.tol),
            step_size: self.step_size.unwrap_or(d.step_size),
            patience: self.patience.unwrap_or(d.patience),
            starts: self.starts.unwrap_or(d.starts),
            start_sigma: self.start_sigma.unwrap_or(d.start_sigma),
            inversion: ecgxai::counterfactual::InversionParams {
                restarts: self.inversion_restarts.unwrap_or(d.inversion.restarts),
                steps: self.inversion_steps.unwrap_or(d.inversion.steps),
                learning_rate: self.inversion_learning_rate.unwrap_or(d.inversion.learning_rate),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChartConfig {
    pub record: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub counterfactual: Option<PathBuf>,
    /// An attribution `.bin` written by `explain`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attribution: Option<PathBuf>,
    /// A `tcav.toml` written by `tcav`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tcav: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attribution_bin_size: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub show_calibration: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub title: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub style: Option<ChartStyle>,
}

impl ChartConfig {
    fn resolve(mut self, base: &Path) -> CliResult<Self> {
        self.record = rebase(base, &self.record);
        for p in [&mut self.counterfactual, &mut self.attribution, &mut self.tcav] {
            *p = p.as_deref().map(|p| rebase(base, p));
        }
        positive("attribution_bin_size", *self.attribution_bin_size.get_or_insert(DEFAULT_BIN_SIZE))?;
        self.show_calibration.get_or_insert(true);
        self.title.get_or_insert_with(String::new);
        self.style.get_or_insert_with(ChartStyle::default).validate().map_err(CliError::config)?;
        Ok(self)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_per_class: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epochs: Option<usize>,
    /// Also write concept sets and a random pool for `tcav`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub concepts: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_per_concept: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pool_size: Option<usize>,
}

impl SynthConfig {
    fn resolve(mut self) -> CliResult<Self> {
        let n = *self.n_per_class.get_or_insert(200);
        if n < 5 {
            return Err(CliError::config("synth.n_per_class must be >= 5 so every split is populated"));
        }
        positive("epochs", *self.epochs.get_or_insert(ecgxai::synth::REFERENCE_EPOCHS))?;
        if *self.concepts.get_or_insert(true) {
            let k = *self.n_per_concept.get_or_insert(20);
            if k < MIN_CONCEPT_EXAMPLES {
                return Err(CliError::config(format!("synth.n_per_concept must be >= {MIN_CONCEPT_EXAMPLES}")));
            }
            if *self.pool_size.get_or_insert(3 * k) < k {
                return Err(CliError::config("synth.pool_size must be >= n_per_concept"));
            }
        } else if self.n_per_concept.is_some() || self.pool_size.is_some() {
            return Err(CliError::config("n_per_concept and pool_size need concepts = true"));
        }
        Ok(self)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TcavConfig {
    pub model: PathBuf,
    /// Directory of concept subdirectories plus `random/`.
    pub concepts_dir: PathBuf,
    /// Record files or directories of records.
    pub inputs: Vec<PathBuf>,
    pub layers: Vec<String>,
    #[serde(default)]
    pub target: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_runs: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input_duration_s: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cav: Option<CavParams>,
}

impl TcavConfig {
    fn resolve(mut self, base: &Path) -> CliResult<Self> {
        self.model = rebase(base, &self.model);
        self.concepts_dir = rebase(base, &self.concepts_dir);
        self.inputs = self.inputs.iter().map(|p| rebase(base, p)).collect();
        if self.inputs.is_empty() || self.layers.is_empty() {
            return Err(CliError::config("tcav.inputs and tcav.layers must be non-empty"));
        }
        let d = TcavParams::default();
        if *self.n_runs.get_or_insert(d.n_runs) < 2 {
            return Err(CliError::config("tcav.n_runs must be >= 2"));
        }
        let alpha = *self.alpha.get_or_insert(d.alpha);
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(CliError::config("tcav.alpha must lie in (0, 1)"));
        }
        if let Some(s) = self.input_duration_s {
            strictly_positive("input_duration_s", s)?;
        }
        let cav = *self.cav.get_or_insert(d.cav);
        positive("cav.iterations", cav.iterations)?;
        strictly_positive("cav.learning_rate", cav.learning_rate)?;
        non_negative("cav.l2", cav.l2)?;
        if !(cav.holdout_fraction >= 0.0 && cav.holdout_fraction < 1.0) {
            return Err(CliError::config("cav.holdout_fraction must lie in [0, 1)"));
        }
        Ok(self)
    }

    pub fn params(&self) -> TcavParams {
        let d = TcavParams::default();
        TcavParams {
            n_runs: self.n_runs.unwrap_or(d.n_runs),
            alpha: self.alpha.unwrap_or(d.alpha),
            input_duration_s: self.input_duration_s,
            cav: self.cav.unwrap_or(d.cav),
        }
    }
}

fn rebase(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

/// Replaces each directory by its record files in name order, so the
/// resolved config pins the exact inputs.
fn expand_dirs(paths: impl Iterator<Item = PathBuf>) -> CliResult<Vec<PathBuf>> {
    let mut out = Vec::new();
    for p in paths {
        if !p.is_dir() {
            out.push(p);
            continue;
        }
        let entries = fs::read_dir(&p).map_err(|e| CliError::config(format!("{}: {e}", p.display())))?;
        let mut files: Vec<PathBuf> = entries
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|f| f.is_file() && EcgFormat::from_extension(f).is_some())
            .collect();
        if files.is_empty() {
            return Err(CliError::config(format!("{}: no record files", p.display())));
        }
        files.sort();
        out.extend(files);
    }
    Ok(out)
}

fn positive(name: &str, v: usize) -> CliResult<()> {
    if v == 0 {
        return Err(CliError::config(format!("`{name}` must be >= 1")));
    }
    Ok(())
}

fn finite(name: &str, v: f64) -> CliResult<()> {
    if !v.is_finite() {
        return Err(CliError::config(format!("`{name}` must be finite")));
    }
    Ok(())
}

fn non_negative(name: &str, v: f64) -> CliResult<()> {
    if !(v >= 0.0 && v.is_finite()) {
        return Err(CliError::config(format!("`{name}` must be finite and >= 0")));
    }
    Ok(())
}

fn strictly_positive(name: &str, v: f64) -> CliResult<()> {
    if !(v > 0.0 && v.is_finite()) {
        return Err(CliError::config(format!("`{name}` must be finite and > 0")));
    }
    Ok(())
}

/// A parsed config file before resolution.
#[derive(Debug)]
pub struct Loaded {
    pub out_dir: Option<PathBuf>,
    seed: Option<u64>,
    base: PathBuf,
    file: ConfigFile,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Section {
    Explain(ExplainConfig),
    Chart(ChartConfig),
    Synth(SynthConfig),
    Tcav(TcavConfig),
}

/// A fully resolved command configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct Resolved {
    pub command: Command,
    pub seed: u64,
    pub section: Section,
    /// `seed` plus the command's table; embedded in the manifest.
    pub table: toml::Table,
    /// SHA-256 of `table` serialized as TOML.
    pub hash: String,
}

impl Resolved {
    pub fn run_dir_name(&self) -> String {
        format!("{}-{}", self.command.name(), &self.hash[..16])
    }
}

/// Reads a config file or a manifest with an embedded config.
pub fn load(path: &Path) -> CliResult<Loaded> {
    let text = fs::read_to_string(path).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
    let mut table: toml::Table = toml::from_str(&text).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
    if table.contains_key("run_config") {
        table = match table.remove("config") {
            Some(toml::Value::Table(t)) => t,
            _ => return Err(CliError::config(format!("manifest {} embeds no config", path.display()))),
        };
    }
    let file: ConfigFile =
        table.try_into().map_err(|e: toml::de::Error| CliError::config(format!("{}: {e}", path.display())))?;
    let dir = path.parent().unwrap_or(Path::new(""));
    let base = std::path::absolute(if dir.as_os_str().is_empty() { Path::new(".") } else { dir })
        .map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
    Ok(Loaded { out_dir: file.out_dir.as_deref().map(|p| rebase(&base, p)), seed: file.seed, base, file })
}

impl Loaded {
    /// Validates and completes the section for `command`. `seed_override`
    /// wins over the file's seed; the default seed is 0.
    pub fn resolve(self, command: Command, seed_override: Option<u64>) -> CliResult<Resolved> {
        let missing = || CliError::config(format!("config has no [{}] table", command.name()));
        let base = &self.base;
        let section = match command {
            Command::Explain => Section::Explain(self.file.explain.ok_or_else(missing)?.resolve(base)?),
            Command::Chart => Section::Chart(self.file.chart.ok_or_else(missing)?.resolve(base)?),
            Command::Synth => Section::Synth(self.file.synth.ok_or_else(missing)?.resolve()?),
            Command::Tcav => Section::Tcav(self.file.tcav.ok_or_else(missing)?.resolve(base)?),
        };
        let seed = seed_override.or(self.seed).unwrap_or(0);
        let value = match &section {
            Section::Explain(s) => toml::Value::try_from(s),
            Section::Chart(s) => toml::Value::try_from(s),
            Section::Synth(s) => toml::Value::try_from(s),
            Section::Tcav(s) => toml::Value::try_from(s),
        }
        .map_err(CliError::config)?;
        let mut table = toml::Table::new();
        // TOML integers are i64
        let seed_value = i64::try_from(seed).map_err(|_| CliError::config("seed must be < 2^63"))?;
        table.insert("seed".into(), toml::Value::Integer(seed_value));
        table.insert(command.name().into(), value);
        let text = toml::to_string(&table).map_err(CliError::config)?;
        Ok(Resolved { command, seed, section, hash: sha256_hex(text.as_bytes()), table })
    }
}
