//! Run configuration, seeding and manifests.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const TOOLKIT_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Prediction task of a wrapped model; fixes the standardized output shape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TaskType {
    BinaryClassification,
    MulticlassClassification { num_classes: usize },
    MultilabelClassification { num_labels: usize },
    Regression,
}

impl TaskType {
    /// `N` in the `(B, N)` output shape.
    pub fn num_outputs(self) -> usize {
        match self {
            TaskType::BinaryClassification => 2,
            TaskType::MulticlassClassification { num_classes } => num_classes,
            TaskType::MultilabelClassification { num_labels } => num_labels,
            TaskType::Regression => 1,
        }
    }

    pub fn is_classification(self) -> bool {
        !matches!(self, TaskType::Regression)
    }
}

impl fmt::Display for TaskType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TaskType::BinaryClassification => write!(f, "binary_classification"),
            TaskType::MulticlassClassification { num_classes } => {
                write!(f, "multiclass_classification({num_classes})")
            }
            TaskType::MultilabelClassification { num_labels } => {
                write!(f, "multilabel_classification({num_labels})")
            }
            TaskType::Regression => write!(f, "regression"),
        }
    }
}

/// A method parameter value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ParamValue {
    Bool(bool),
    Int(i64),
    Float(f64),
    Text(String),
}

impl From<bool> for ParamValue {
    fn from(v: bool) -> Self {
        ParamValue::Bool(v)
    }
}

impl From<i64> for ParamValue {
    fn from(v: i64) -> Self {
        ParamValue::Int(v)
    }
}

impl From<usize> for ParamValue {
    fn from(v: usize) -> Self {
        ParamValue::Int(v as i64)
    }
}

impl From<f64> for ParamValue {
    fn from(v: f64) -> Self {
        ParamValue::Float(v)
    }
}

impl From<&str> for ParamValue {
    fn from(v: &str) -> Self {
        ParamValue::Text(v.to_string())
    }
}

impl From<String> for ParamValue {
    fn from(v: String) -> Self {
        ParamValue::Text(v)
    }
}

pub type Params = BTreeMap<String, ParamValue>;

/// Everything needed to reproduce one explainer run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub seed: u64,
    pub method_name: String,
    pub method_params: Params,
    pub model_id: String,
    pub input_fingerprint: String,
}

impl RunConfig {
    pub fn new(seed: u64, method_name: impl Into<String>) -> Self {
        Self {
            seed,
            method_name: method_name.into(),
            method_params: Params::new(),
            model_id: String::new(),
            input_fingerprint: String::new(),
        }
    }

    pub fn param(mut self, key: &str, value: impl Into<ParamValue>) -> Self {
        self.method_params.insert(key.to_string(), value.into());
        self
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Serialization(e.to_string()))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Serialization(e.to_string()))
    }

    /// Stable hash of the configuration (hex SHA-256 of its TOML form).
    pub fn hash(&self) -> Result<String> {
        Ok(sha256_hex(self.to_toml()?.as_bytes()))
    }
}

/// Seeded RNG used throughout the toolkit.
pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Derives an independent stream seed from a run seed and a label path.
pub fn derive_seed(seed: u64, label: &str, index: u64) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(label.as_bytes());
    hasher.update(index.to_le_bytes());
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn hash_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtifactEntry {
    pub kind: String,
    /// Relative to the run directory.
    pub path: PathBuf,
    pub sha256: String,
}

/// Per-run record of configuration and produced artifacts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplanationManifest {
    pub toolkit_version: String,
    pub wall_time_s: f64,
    pub run_config: RunConfig,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
    #[serde(default)]
    pub outputs: Vec<ArtifactEntry>,
    /// Fully resolved front-end configuration, when the run came from one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<toml::Table>,
}

impl ExplanationManifest {
    pub fn new(run_config: RunConfig) -> Self {
        Self {
            toolkit_version: TOOLKIT_VERSION.to_string(),
            wall_time_s: 0.0,
            run_config,
            notes: Vec::new(),
            outputs: Vec::new(),
            config: None,
        }
    }

    /// Hashes `run_dir/rel_path` as it is on disk now and lists it.
    pub fn add_output(&mut self, kind: &str, run_dir: &Path, rel_path: impl Into<PathBuf>) -> Result<()> {
        let rel_path = rel_path.into();
        let sha256 = hash_file(&run_dir.join(&rel_path))?;
        self.outputs.push(ArtifactEntry { kind: kind.to_string(), path: rel_path, sha256 });
        Ok(())
    }

    /// Artifacts whose on-disk hash no longer matches.
    pub fn stale_outputs(&self, run_dir: &Path) -> Vec<PathBuf> {
        self.outputs
            .iter()
            .filter(|o| hash_file(&run_dir.join(&o.path)).ok().as_deref() != Some(o.sha256.as_str()))
            .map(|o| o.path.clone())
            .collect()
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Serialization(e.to_string()))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Serialization(e.to_string()))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_toml()?).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }
}
