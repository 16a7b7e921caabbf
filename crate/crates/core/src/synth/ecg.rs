//! Parametric Gaussian-bump ECG morphology.

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::config::rng_from_seed;
use crate::error::{Error, Result};
use crate::record::EcgRecord;

/// Per-lead gains projecting the single-source waveform onto 12 leads.
pub const LEAD_GAINS: [f64; 12] = [0.7, 1.0, 0.35, -0.85, 0.2, 0.65, -0.3, 0.45, 0.8, 1.1, 1.0, 0.8];

/// P-window bounds relative to each R peak, in seconds.
pub const P_WINDOW: (f64, f64) = (-0.110, -0.030);

/// Bumps further than this many widths from their centre are not rendered.
pub(crate) const SUPPORT_WIDTHS: f64 = 8.0;

/// One Gaussian deflection: amplitude (mV), centre relative to the R peak (s)
/// and standard deviation (s).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Wave {
    pub amplitude_mv: f64,
    pub offset_s: f64,
    pub width_s: f64,
}

impl Wave {
    pub const fn new(amplitude_mv: f64, offset_s: f64, width_s: f64) -> Self {
        Self { amplitude_mv, offset_s, width_s }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BeatParams {
    pub heart_rate: f64,
    pub p: Wave,
    pub q: Wave,
    pub r: Wave,
    pub s: Wave,
    pub t: Wave,
    /// Fractional standard deviation of RR intervals.
    pub rr_jitter: f64,
    pub p_wave_present: bool,
    /// Additive white measurement noise (mV).
    pub noise_mv: f64,
}

/// RR jitter of the canonical sinus rhythm (matches the toy generator at z = 0).
pub fn sinus_rr_jitter() -> f64 {
    0.3 / (1.0 + 2.5_f64.exp())
}

impl BeatParams {
    /// Canonical normal sinus beat at 75 bpm.
    pub fn normal_sinus() -> Self {
        Self {
            heart_rate: 75.0,
            p: Wave::new(0.15, -0.070, 0.015),
            q: Wave::new(-0.08, -0.028, 0.006),
            r: Wave::new(1.1, 0.0, 0.010),
            s: Wave::new(-0.2, 0.028, 0.007),
            t: Wave::new(0.28, 0.250, 0.040),
            rr_jitter: sinus_rr_jitter(),
            p_wave_present: true,
            noise_mv: 0.0,
        }
    }

    pub fn waves(&self) -> [Wave; 5] {
        [self.p, self.q, self.r, self.s, self.t]
    }

    pub fn rr_interval_s(&self) -> f64 {
        60.0 / self.heart_rate
    }

    pub fn validate(&self) -> Result<()> {
        if !(20.0..=300.0).contains(&self.heart_rate) {
            return Err(Error::InvalidParameter(format!(
                "heart rate {} outside [20, 300] bpm",
                self.heart_rate
            )));
        }
        if self.waves().iter().any(|w| !(w.width_s > 0.0)) {
            return Err(Error::InvalidParameter("wave widths must be positive".into()));
        }
        if !(self.rr_jitter >= 0.0) || !(self.noise_mv >= 0.0) {
            return Err(Error::InvalidParameter("rr_jitter and noise must be non-negative".into()));
        }
        Ok(())
    }
}

impl Default for BeatParams {
    fn default() -> Self {
        Self::normal_sinus()
    }
}

/// Adds every bump of every beat to `out` (sampled at `rate`).
pub(crate) fn render_waves(out: &mut [f64], rate: f64, r_times: &[f64], waves: &[Wave]) {
    let n = out.len() as isize;
    for &r in r_times {
        for w in waves {
            if w.amplitude_mv == 0.0 {
                continue;
            }
            let centre = r + w.offset_s;
            let reach = SUPPORT_WIDTHS * w.width_s;
            let lo = (((centre - reach) * rate).ceil() as isize).max(0);
            let hi = (((centre + reach) * rate).floor() as isize).min(n - 1);
            let inv = 1.0 / (2.0 * w.width_s * w.width_s);
            for i in lo..=hi {
                let u = i as f64 / rate - centre;
                out[i as usize] += w.amplitude_mv * (-u * u * inv).exp();
            }
        }
    }
}

/// Lead gain for lead `l` of an `n`-lead projection.
pub fn lead_gain(l: usize) -> f64 {
    LEAD_GAINS[l % LEAD_GAINS.len()]
}

/// R-peak times (s) of a rendered record: beat onsets start at a random phase
/// within the first RR interval and accumulate jittered RR intervals. One beat
/// before and after the window is included so edge beats are complete.
pub fn r_peak_times(params: &BeatParams, duration_s: f64, rng: &mut impl Rng) -> Vec<f64> {
    let rr = params.rr_interval_s();
    let phase = rng.random_range(0.1..0.9) * rr;
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let mut step = || {
        let eps: f64 = unit.sample(rng);
        rr * (1.0 + params.rr_jitter * eps.clamp(-2.0, 2.0)).max(0.3)
    };
    let before = phase - step();
    let mut times = vec![before, phase];
    while *times.last().expect("non-empty") < duration_s {
        let next = times.last().expect("non-empty") + step();
        times.push(next);
    }
    times
}

/// Renders an `(L, T)` record from `params`; deterministic given `seed`.
pub fn synth_ecg(params: &BeatParams, leads: usize, samples: usize, rate: u32, seed: u64) -> Result<EcgRecord> {
    synth_ecg_with_peaks(params, leads, samples, rate, seed).map(|(r, _)| r)
}

/// As [`synth_ecg`], also returning the R-peak times (s) falling inside the record.
pub fn synth_ecg_with_peaks(
    params: &BeatParams,
    leads: usize,
    samples: usize,
    rate: u32,
    seed: u64,
) -> Result<(EcgRecord, Vec<f64>)> {
    params.validate()?;
    if leads == 0 || samples < 2 || rate == 0 {
        return Err(Error::InvalidParameter(format!(
            "cannot synthesize {leads} leads x {samples} samples at {rate} Hz"
        )));
    }
    let mut rng = rng_from_seed(seed);
    let duration = samples as f64 / rate as f64;
    let r_times = r_peak_times(params, duration, &mut rng);
    let mut waves = params.waves().to_vec();
    if !params.p_wave_present {
        waves.remove(0);
    }
    let mut base = vec![0.0; samples];
    render_waves(&mut base, rate as f64, &r_times, &waves);
    let base = Array1::from(base);
    let noise = Normal::new(0.0, params.noise_mv.max(f64::MIN_POSITIVE)).expect("finite std");
    let mut signal = Array2::zeros((leads, samples));
    for (l, mut row) in signal.outer_iter_mut().enumerate() {
        row.assign(&(&base * lead_gain(l)));
        if params.noise_mv > 0.0 {
            row.mapv_inplace(|v| v + noise.sample(&mut rng));
        }
    }
    let inside = r_times.into_iter().filter(|&t| (0.0..duration).contains(&t)).collect();
    Ok((EcgRecord::from_signal(signal, rate)?, inside))
}

/// Per-sample mask of the P-window `[R - 110 ms, R - 30 ms]` around each peak.
pub fn p_window_mask(r_times: &[f64], rate: u32, samples: usize) -> Vec<bool> {
    let mut mask = vec![false; samples];
    for &r in r_times {
        let lo = ((r + P_WINDOW.0) * rate as f64).ceil().max(0.0) as usize;
        let hi = ((r + P_WINDOW.1) * rate as f64).floor();
        if hi < 0.0 {
            continue;
        }
        for m in mask.iter_mut().take((hi as usize + 1).min(samples)).skip(lo) {
            *m = true;
        }
    }
    mask
}
