//! ECG records and their on-disk formats.
//!
//! Three formats are supported, all storing amplitudes as little-endian or
//! text `f32` millivolts:
//!
//! * `csv`: a `sampling_rate,<int>` header row, a lead-name row, then one row
//!   per time sample with `L` comma-separated values.
//! * `binary_float32`: a 16-byte header (`EXE1`, `u32` leads, `u32` samples,
//!   `u32` sampling rate) followed by `L x T` row-major `f32` values.
//! * `wfdb_like`: a `.hea` text header naming the leads plus a `.dat` payload
//!   of sample-interleaved `f32` values.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Standard 12-lead order.
pub const STANDARD_LEADS: [&str; 12] = [
    "I", "II", "III", "aVR", "aVL", "aVF", "V1", "V2", "V3", "V4", "V5", "V6",
];

pub const BINARY_MAGIC: &[u8; 4] = b"EXE1";

/// Default lead names for `n` leads: the standard order for 12, `lead<i>` otherwise.
pub fn default_lead_names(n: usize) -> Vec<String> {
    if n == STANDARD_LEADS.len() {
        STANDARD_LEADS.iter().map(|s| s.to_string()).collect()
    } else {
        (0..n).map(|i| format!("lead{i}")).collect()
    }
}

/// A multi-lead ECG: `(L leads x T samples)` in millivolts.
///
/// Immutable after construction; every constructor validates shape, lead
/// names and finiteness.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EcgRecord {
    signal: Array2<f64>,
    sampling_rate: u32,
    lead_names: Vec<String>,
}

impl EcgRecord {
    pub fn new(signal: Array2<f64>, sampling_rate: u32, lead_names: Vec<String>) -> Result<Self> {
        let (leads, samples) = signal.dim();
        if leads < 1 || samples < 2 {
            return Err(Error::InvalidRecord(format!(
                "signal must have at least 1 lead and 2 samples, got {leads}x{samples}"
            )));
        }
        if sampling_rate == 0 {
            return Err(Error::InvalidRecord("sampling rate must be positive".into()));
        }
        if lead_names.len() != leads {
            return Err(Error::InvalidRecord(format!(
                "{} lead names for {leads} leads",
                lead_names.len()
            )));
        }
        for (i, name) in lead_names.iter().enumerate() {
            if lead_names[..i].contains(name) {
                return Err(Error::InvalidRecord(format!("duplicate lead name `{name}`")));
            }
        }
        if let Some(((lead, sample), _)) = signal.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::NonFiniteValues { lead, sample });
        }
        Ok(Self { signal, sampling_rate, lead_names })
    }

    /// Record with default lead names.
    pub fn from_signal(signal: Array2<f64>, sampling_rate: u32) -> Result<Self> {
        let names = default_lead_names(signal.nrows());
        Self::new(signal, sampling_rate, names)
    }

    /// Same rate and lead names, new samples (the sample count may differ).
    pub fn with_signal(&self, signal: Array2<f64>) -> Result<Self> {
        Self::new(signal, self.sampling_rate, self.lead_names.clone())
    }

    pub fn signal(&self) -> ArrayView2<'_, f64> {
        self.signal.view()
    }

    pub fn into_signal(self) -> Array2<f64> {
        self.signal
    }

    pub fn sampling_rate(&self) -> u32 {
        self.sampling_rate
    }

    pub fn lead_names(&self) -> &[String] {
        &self.lead_names
    }

    pub fn n_leads(&self) -> usize {
        self.signal.nrows()
    }

    pub fn n_samples(&self) -> usize {
        self.signal.ncols()
    }

    pub fn duration_s(&self) -> f64 {
        self.n_samples() as f64 / self.sampling_rate as f64
    }

    /// Crops or zero-pads (at the end) to exactly `duration_s` seconds.
    pub fn crop_or_pad(&self, duration_s: f64) -> Result<Self> {
        let target = (duration_s * self.sampling_rate as f64).round() as usize;
        if target == self.n_samples() {
            return Ok(self.clone());
        }
        let mut out = Array2::zeros((self.n_leads(), target));
        let keep = target.min(self.n_samples());
        out.slice_mut(ndarray::s![.., ..keep])
            .assign(&self.signal.slice(ndarray::s![.., ..keep]));
        self.with_signal(out)
    }

    /// SHA-256 over a canonical little-endian serialization of shape, rate,
    /// lead names (in order) and the `f64` samples.
    pub fn fingerprint(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(b"ecg-record/v1");
        hasher.update((self.n_leads() as u64).to_le_bytes());
        hasher.update((self.n_samples() as u64).to_le_bytes());
        hasher.update(self.sampling_rate.to_le_bytes());
        for name in &self.lead_names {
            hasher.update((name.len() as u64).to_le_bytes());
            hasher.update(name.as_bytes());
        }
        for v in self.signal.iter() {
            hasher.update(v.to_le_bytes());
        }
        hex::encode(hasher.finalize())
    }
}

/// Free-function form of [`EcgRecord::fingerprint`].
pub fn fingerprint(record: &EcgRecord) -> String {
    record.fingerprint()
}

/// Combined fingerprint of an ordered list of records.
pub fn fingerprint_all(records: &[EcgRecord]) -> String {
    let mut hasher = Sha256::new();
    for r in records {
        hasher.update(r.fingerprint().as_bytes());
    }
    hex::encode(hasher.finalize())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EcgFormat {
    Csv,
    BinaryFloat32,
    WfdbLike,
}

impl EcgFormat {
    /// Guess the format from a file extension (`csv`, `bin`, `hea`).
    pub fn from_extension(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()? {
            "csv" => Some(Self::Csv),
            "bin" => Some(Self::BinaryFloat32),
            "hea" => Some(Self::WfdbLike),
            _ => None,
        }
    }

    pub fn extension(self) -> &'static str {
        match self {
            Self::Csv => "csv",
            Self::BinaryFloat32 => "bin",
            Self::WfdbLike => "hea",
        }
    }
}

impl FromStr for EcgFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(Self::Csv),
            "binary_float32" | "bin" => Ok(Self::BinaryFloat32),
            "wfdb_like" | "wfdb" => Ok(Self::WfdbLike),
            other => Err(Error::InvalidParameter(format!(
                "unknown ECG format `{other}` (expected csv, binary_float32, wfdb_like)"
            ))),
        }
    }
}

pub fn load_ecg(path: impl AsRef<Path>, format: EcgFormat) -> Result<EcgRecord> {
    let path = path.as_ref();
    match format {
        EcgFormat::Csv => {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            parse_csv(&text)
        }
        EcgFormat::BinaryFloat32 => {
            let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
            decode_binary(&bytes)
        }
        EcgFormat::WfdbLike => {
            let header = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            let dat_path = path.with_extension("dat");
            let payload = fs::read(&dat_path).map_err(|e| Error::io(&dat_path, e))?;
            decode_wfdb(&header, &payload)
        }
    }
}

/// Writes `record`; for `wfdb_like` the payload goes next to `path` with a
/// `.dat` extension. Returns every file written.
pub fn save_ecg(record: &EcgRecord, path: impl AsRef<Path>, format: EcgFormat) -> Result<Vec<PathBuf>> {
    let path = path.as_ref();
    let write = |p: &Path, bytes: &[u8]| fs::write(p, bytes).map_err(|e| Error::io(p, e));
    match format {
        EcgFormat::Csv => {
            write(path, encode_csv(record).as_bytes())?;
            Ok(vec![path.to_path_buf()])
        }
        EcgFormat::BinaryFloat32 => {
            write(path, &encode_binary(record.signal(), record.sampling_rate()))?;
            Ok(vec![path.to_path_buf()])
        }
        EcgFormat::WfdbLike => {
            let dat_path = path.with_extension("dat");
            let stem = dat_path
                .file_name()
                .and_then(|s| s.to_str())
                .unwrap_or("record.dat")
                .to_string();
            let (header, payload) = encode_wfdb(record, &stem);
            write(path, header.as_bytes())?;
            write(&dat_path, &payload)?;
            Ok(vec![path.to_path_buf(), dat_path])
        }
    }
}

fn csv_err(reason: impl Into<String>) -> Error {
    Error::Format { format: "csv", reason: reason.into() }
}

pub fn parse_csv(text: &str) -> Result<EcgRecord> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines.next().ok_or_else(|| csv_err("empty file"))?;
    let rate = match header.split_once(',') {
        Some((key, value)) if key.trim() == "sampling_rate" => value
            .trim()
            .parse::<u32>()
            .map_err(|e| csv_err(format!("bad sampling rate `{}`: {e}", value.trim())))?,
        _ => return Err(csv_err("first row must be `sampling_rate,<int>`")),
    };
    let names: Vec<String> = lines
        .next()
        .ok_or_else(|| csv_err("missing lead-name row"))?
        .split(',')
        .map(|s| s.trim().to_string())
        .collect();
    let n_leads = names.len();
    let mut values = Vec::new();
    let mut n_samples = 0usize;
    for (row, line) in lines.enumerate() {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != n_leads {
            return Err(Error::ShapeMismatch(format!(
                "csv sample row {row} has {} values, header names {n_leads} leads",
                fields.len()
            )));
        }
        for f in fields {
            let v: f32 = f
                .trim()
                .parse()
                .map_err(|e| csv_err(format!("bad value `{}` in sample row {row}: {e}", f.trim())))?;
            values.push(v as f64);
        }
        n_samples += 1;
    }
    // rows are time samples; the record is lead-major
    let by_time = Array2::from_shape_vec((n_samples, n_leads), values)
        .map_err(|e| Error::ShapeMismatch(e.to_string()))?;
    EcgRecord::new(by_time.reversed_axes().as_standard_layout().into_owned(), rate, names)
}

pub fn encode_csv(record: &EcgRecord) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "sampling_rate,{}", record.sampling_rate());
    out.push_str(&record.lead_names().join(","));
    out.push('\n');
    for column in record.signal().axis_iter(Axis(1)) {
        let row: Vec<String> = column.iter().map(|&v| format!("{}", v as f32)).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

fn bin_err(reason: impl Into<String>) -> Error {
    Error::Format { format: "binary_float32", reason: reason.into() }
}

/// Decodes the `EXE1` container into `(rate, L x T array)` without record validation.
pub fn decode_binary_array(bytes: &[u8]) -> Result<(u32, Array2<f64>)> {
    if bytes.len() < 16 {
        return Err(bin_err(format!("{} bytes is shorter than the 16-byte header", bytes.len())));
    }
    if &bytes[..4] != BINARY_MAGIC {
        return Err(bin_err("bad magic (expected EXE1)"));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().expect("4-byte slice"));
    let (leads, samples, rate) = (word(4) as usize, word(8) as usize, word(12));
    let payload = &bytes[16..];
    if payload.len() != leads * samples * 4 {
        return Err(Error::ShapeMismatch(format!(
            "header declares {leads}x{samples} samples ({} bytes), payload has {} bytes",
            leads * samples * 4,
            payload.len()
        )));
    }
    let values: Vec<f64> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4-byte chunk")) as f64)
        .collect();
    let array = Array2::from_shape_vec((leads, samples), values)
        .map_err(|e| Error::ShapeMismatch(e.to_string()))?;
    Ok((rate, array))
}

pub fn decode_binary(bytes: &[u8]) -> Result<EcgRecord> {
    let (rate, signal) = decode_binary_array(bytes)?;
    EcgRecord::from_signal(signal, rate)
}

/// Encodes any `(rows x T)` array in the `EXE1` container.
pub fn encode_binary(values: ArrayView2<'_, f64>, rate: u32) -> Vec<u8> {
    let (rows, cols) = values.dim();
    let mut out = Vec::with_capacity(16 + rows * cols * 4);
    out.extend_from_slice(BINARY_MAGIC);
    out.extend_from_slice(&(rows as u32).to_le_bytes());
    out.extend_from_slice(&(cols as u32).to_le_bytes());
    out.extend_from_slice(&rate.to_le_bytes());
    for v in values.iter() {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    out
}

fn wfdb_err(reason: impl Into<String>) -> Error {
    Error::Format { format: "wfdb_like", reason: reason.into() }
}

fn encode_wfdb(record: &EcgRecord, dat_name: &str) -> (String, Vec<u8>) {
    let record_name = dat_name.trim_end_matches(".dat");
    let mut header = format!(
        "{record_name} {} {} {}\n",
        record.n_leads(),
        record.sampling_rate(),
        record.n_samples()
    );
    for name in record.lead_names() {
        let _ = writeln!(header, "{dat_name} 32 {name}");
    }
    let mut payload = Vec::with_capacity(record.n_leads() * record.n_samples() * 4);
    for column in record.signal().axis_iter(Axis(1)) {
        for v in column {
            payload.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    (header, payload)
}

fn decode_wfdb(header: &str, payload: &[u8]) -> Result<EcgRecord> {
    let mut lines = header.lines().filter(|l| !l.trim().is_empty());
    let first: Vec<&str> = lines
        .next()
        .ok_or_else(|| wfdb_err("empty header"))?
        .split_whitespace()
        .collect();
    if first.len() != 4 {
        return Err(wfdb_err("record line must be `<name> <leads> <rate> <samples>`"));
    }
    let parse = |s: &str, what: &str| {
        s.parse::<usize>()
            .map_err(|e| wfdb_err(format!("bad {what} `{s}`: {e}")))
    };
    let leads = parse(first[1], "lead count")?;
    let rate = parse(first[2], "sampling rate")? as u32;
    let samples = parse(first[3], "sample count")?;
    let names: Vec<String> = lines
        .map(|l| {
            let parts: Vec<&str> = l.split_whitespace().collect();
            match parts.as_slice() {
                [_, "32", name] => Ok(name.to_string()),
                _ => Err(wfdb_err(format!("bad signal line `{l}`"))),
            }
        })
        .collect::<Result<_>>()?;
    if names.len() != leads {
        return Err(Error::ShapeMismatch(format!(
            "header declares {leads} leads but lists {} signal lines",
            names.len()
        )));
    }
    if payload.len() != leads * samples * 4 {
        return Err(Error::ShapeMismatch(format!(
            "header declares {leads}x{samples} samples, payload has {} bytes",
            payload.len()
        )));
    }
    let values: Vec<f64> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4-byte chunk")) as f64)
        .collect();
    let by_time = Array2::from_shape_vec((samples, leads), values)
        .map_err(|e| Error::ShapeMismatch(e.to_string()))?;
    EcgRecord::new(by_time.reversed_axes().as_standard_layout().into_owned(), rate as u32, names)
}
