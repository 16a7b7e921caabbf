//! Synthetic AF-proxy dataset: class 1 has no P wave and irregular RR
//! intervals, class 0 is sinus rhythm with a visible P wave.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;

use super::ecg::{p_window_mask, synth_ecg_with_peaks, BeatParams, Wave};
use crate::config::{derive_seed, rng_from_seed};
use crate::error::{Error, Result};
use crate::record::{load_ecg, save_ecg, EcgFormat, EcgRecord};

pub const AF_LEADS: usize = 12;
pub const AF_RATE: u32 = 250;
pub const AF_SAMPLES: usize = 2500;

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub records: Vec<EcgRecord>,
    pub labels: Vec<usize>,
    /// R-peak times (s) inside each record; empty for datasets loaded from disk.
    pub r_peaks: Vec<Vec<f64>>,
    pub split: Split,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn subset(&self, indices: &[usize]) -> (Vec<EcgRecord>, Vec<usize>) {
        (
            indices.iter().map(|&i| self.records[i].clone()).collect(),
            indices.iter().map(|&i| self.labels[i]).collect(),
        )
    }

    /// Per-sample P-window mask of record `i`.
    pub fn p_window(&self, i: usize) -> Vec<bool> {
        let r = &self.records[i];
        p_window_mask(&self.r_peaks[i], r.sampling_rate(), r.n_samples())
    }

    /// Same records with labels permuted (seeded); a permutation control.
    pub fn with_shuffled_labels(&self, seed: u64) -> Self {
        let mut labels = self.labels.clone();
        labels.shuffle(&mut rng_from_seed(seed));
        Self { labels, ..self.clone() }
    }

    /// Writes `records/rec_NNNN.bin` and `labels.csv` (`file,label,split`).
    /// Returns the written paths relative to `dir`.
    pub fn save(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        let rec_dir = dir.join("records");
        fs::create_dir_all(&rec_dir).map_err(|e| Error::io(&rec_dir, e))?;
        let mut written = Vec::with_capacity(self.len() + 1);
        let mut csv = String::from("file,label,split\n");
        for (i, (rec, label)) in self.records.iter().zip(&self.labels).enumerate() {
            let rel = PathBuf::from("records").join(format!("rec_{i:04}.bin"));
            save_ecg(rec, dir.join(&rel), EcgFormat::BinaryFloat32)?;
            let _ = writeln!(csv, "{},{label},{}", rel.display(), self.split_of(i));
            written.push(rel);
        }
        let labels = dir.join("labels.csv");
        fs::write(&labels, csv).map_err(|e| Error::io(&labels, e))?;
        written.push(PathBuf::from("labels.csv"));
        Ok(written)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let labels_path = dir.join("labels.csv");
        let text = fs::read_to_string(&labels_path).map_err(|e| Error::io(&labels_path, e))?;
        let mut ds = Dataset { records: Vec::new(), labels: Vec::new(), r_peaks: Vec::new(), split: Split::default() };
        for (i, line) in text.lines().skip(1).filter(|l| !l.trim().is_empty()).enumerate() {
            let fields: Vec<&str> = line.split(',').collect();
            let [file, label, split] = fields.as_slice() else {
                return Err(Error::Format { format: "labels.csv", reason: format!("bad row `{line}`") });
            };
            ds.records.push(load_ecg(dir.join(file), EcgFormat::BinaryFloat32)?);
            ds.labels.push(label.parse().map_err(|_| Error::Format {
                format: "labels.csv",
                reason: format!("bad label `{label}`"),
            })?);
            ds.r_peaks.push(Vec::new());
            match *split {
                "train" => ds.split.train.push(i),
                "val" => ds.split.val.push(i),
                "test" => ds.split.test.push(i),
                other => {
                    return Err(Error::Format { format: "labels.csv", reason: format!("bad split `{other}`") })
                }
            }
        }
        Ok(ds)
    }

    fn split_of(&self, i: usize) -> &'static str {
        if self.split.train.contains(&i) {
            "train"
        } else if self.split.val.contains(&i) {
            "val"
        } else {
            "test"
        }
    }
}

/// Randomized beat parameters for one class.
pub fn sample_class_params(label: usize, rng: &mut impl Rng) -> BeatParams {
    let base = BeatParams::normal_sinus();
    let af = label == 1;
    BeatParams {
        heart_rate: rng.random_range(55.0..95.0),
        p: Wave { amplitude_mv: rng.random_range(0.10..0.25), ..base.p },
        q: Wave { amplitude_mv: rng.random_range(-0.12..-0.04), ..base.q },
        r: Wave { amplitude_mv: rng.random_range(0.8..1.4), ..base.r },
        s: Wave { amplitude_mv: rng.random_range(-0.3..-0.1), ..base.s },
        t: Wave { amplitude_mv: rng.random_range(0.15..0.4), ..base.t },
        rr_jitter: if af { rng.random_range(0.12..0.25) } else { rng.random_range(0.0..0.04) },
        p_wave_present: !af,
        noise_mv: 0.02,
    }
}

/// Generates one AF-proxy record of the given class.
pub fn make_af_record(label: usize, seed: u64) -> Result<(EcgRecord, Vec<f64>)> {
    let mut rng = rng_from_seed(seed);
    let params = sample_class_params(label, &mut rng);
    synth_ecg_with_peaks(&params, AF_LEADS, AF_SAMPLES, AF_RATE, derive_seed(seed, "render", 0))
}

/// Balanced AF-proxy dataset, 12 leads x 10 s at 250 Hz, split 70/15/15.
pub fn make_af_dataset(n_per_class: usize, seed: u64) -> Result<Dataset> {
    if n_per_class == 0 {
        return Err(Error::InvalidParameter("n_per_class must be at least 1".into()));
    }
    let mut records = Vec::with_capacity(2 * n_per_class);
    let mut labels = Vec::with_capacity(2 * n_per_class);
    let mut r_peaks = Vec::with_capacity(2 * n_per_class);
    for i in 0..n_per_class {
        for label in [0usize, 1] {
            let (rec, peaks) = make_af_record(label, derive_seed(seed, "af-record", (2 * i + label) as u64))?;
            records.push(rec);
            labels.push(label);
            r_peaks.push(peaks);
        }
    }
    let n = records.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng_from_seed(derive_seed(seed, "split", 0)));
    let n_train = (0.70 * n as f64).round() as usize;
    let n_val = (0.15 * n as f64).round() as usize;
    let split = Split {
        train: order[..n_train].to_vec(),
        val: order[n_train..n_train + n_val].to_vec(),
        test: order[n_train + n_val..].to_vec(),
    };
    Ok(Dataset { records, labels, r_peaks, split })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn balanced_and_split() {
        let ds = make_af_dataset(20, 3).unwrap();
        assert_eq!(ds.len(), 40);
        assert_eq!(ds.labels.iter().filter(|&&l| l == 1).count(), 20);
        let s = &ds.split;
        assert_eq!(s.train.len() + s.val.len() + s.test.len(), 40);
        assert_eq!(s.train.len(), 28);
        let mut all: Vec<usize> = s.train.iter().chain(&s.val).chain(&s.test).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..40).collect::<Vec<_>>());
    }

    #[test]
    fn class_zero_has_p_energy() {
        let ds = make_af_dataset(10, 11).unwrap();
        let energy = |i: usize| -> f64 {
            let mask = ds.p_window(i);
            let lead = ds.records[i].signal().row(1).to_owned();
            let (s, n) = lead
                .iter()
                .zip(&mask)
                .filter(|(_, &m)| m)
                .fold((0.0, 0), |(s, n), (v, _)| (s + v * v, n + 1));
            s / n as f64
        };
        let e0: f64 = (0..ds.len()).filter(|&i| ds.labels[i] == 0).map(energy).sum::<f64>() / 10.0;
        let e1: f64 = (0..ds.len()).filter(|&i| ds.labels[i] == 1).map(energy).sum::<f64>() / 10.0;
        assert!(e1 <= 0.1 * e0, "{e1} vs {e0}");
    }

    #[test]
    fn save_load_roundtrip() {
        let ds = make_af_dataset(3, 5).unwrap();
        let dir = tempfile::tempdir().unwrap();
        ds.save(dir.path()).unwrap();
        let back = Dataset::load(dir.path()).unwrap();
        assert_eq!(back.labels, ds.labels);
        assert_eq!(back.split.test.len(), ds.split.test.len());
        let max_err = back.records[0]
            .signal()
            .iter()
            .zip(ds.records[0].signal())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(max_err < 1e-6);
    }

    #[test]
    fn deterministic() {
        assert_eq!(make_af_dataset(4, 1).unwrap(), make_af_dataset(4, 1).unwrap());
    }
}
