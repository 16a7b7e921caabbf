//! Toy differentiable ECG generator.
//!
//! A latent vector is squashed into beat parameters and rendered with the
//! Gaussian-bump morphology. The rhythm is fixed at construction except for
//! the jitter amplitude: beat `k` sits at `r0 + k RR + jitter RR xi_k` with
//! fixed, seeded `xi_k`, so beat placement is a smooth function of `z`.
//!
//! Latent coordinates (unused ones beyond `latent_dim` are held at zero):
//!
//! | z | parameter   | map                           |
//! |---|-------------|-------------------------------|
//! | 0 | P amplitude | `0.3 sigmoid(3 z)`            |
//! | 1 | RR jitter   | `0.3 sigmoid(3 z - 2.5)`      |
//! | 2 | R amplitude | `2.2 sigmoid(2 z)`            |
//! | 3 | T amplitude | `0.56 sigmoid(2 z)`           |
//! | 4 | S amplitude | `-0.4 sigmoid(2 z)`           |
//! | 5 | Q amplitude | `-0.16 sigmoid(2 z)`          |
//! | 6 | P width     | `0.015 (1 + 0.3 tanh z)`      |
//! | 7 | T width     | `0.04 (1 + 0.25 tanh z)`      |
//!
//! Every amplitude tends to zero as its coordinate tends to minus infinity.

use ndarray::{Array2, ArrayView2};
use rand_distr::{Distribution, Normal};

use super::ecg::{lead_gain, BeatParams, Wave, SUPPORT_WIDTHS};
use crate::config::{derive_seed, rng_from_seed};
use crate::counterfactual::EcgGenerator;
use crate::record::default_lead_names;

const USED_DIMS: usize = 8;
const XI_SEED: u64 = 0x7e57_ec90;

#[derive(Debug, Clone, PartialEq)]
pub struct ToyGenerator {
    latent_dim: usize,
    leads: usize,
    samples: usize,
    rate: u32,
    heart_rate: f64,
    first_r_s: f64,
    xi: Vec<f64>,
}

/// The default toy generator: 12 leads, 10 s at 500 Hz, 75 bpm.
pub fn toy_generator(latent_dim: usize) -> ToyGenerator {
    ToyGenerator::new(latent_dim, 12, 5000, 500)
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Squashed value and its derivative for each latent coordinate.
fn squash(index: usize, z: f64) -> (f64, f64) {
    let th = z.tanh();
    let dth = 1.0 - th * th;
    match index {
        0 => {
            let s = sigmoid(3.0 * z);
            (0.3 * s, 0.9 * s * (1.0 - s))
        }
        1 => {
            let s = sigmoid(3.0 * z - 2.5);
            (0.3 * s, 0.9 * s * (1.0 - s))
        }
        2..=5 => {
            let scale = [2.2, 0.56, -0.4, -0.16][index - 2];
            let s = sigmoid(2.0 * z);
            (scale * s, 2.0 * scale * s * (1.0 - s))
        }
        6 => (0.015 * (1.0 + 0.3 * th), 0.0045 * dth),
        7 => (0.04 * (1.0 + 0.25 * th), 0.01 * dth),
        _ => unreachable!("only {USED_DIMS} latent coordinates are mapped"),
    }
}

impl ToyGenerator {
    /// # Panics
    /// If `latent_dim < 2` or the output geometry is degenerate.
    pub fn new(latent_dim: usize, leads: usize, samples: usize, rate: u32) -> Self {
        assert!(latent_dim >= 2, "latent_dim must be at least 2");
        assert!(leads >= 1 && samples >= 2 && rate > 0, "degenerate generator geometry");
        let mut g = Self { latent_dim, leads, samples, rate, heart_rate: 75.0, first_r_s: 0.35, xi: Vec::new() };
        g.draw_xi();
        g
    }

    /// Replaces the fixed rhythm (heart rate in bpm, first R peak in s).
    pub fn with_rhythm(mut self, heart_rate: f64, first_r_s: f64) -> Self {
        assert!(heart_rate > 0.0, "heart rate must be positive");
        self.heart_rate = heart_rate;
        self.first_r_s = first_r_s;
        self.draw_xi();
        self
    }

    fn draw_xi(&mut self) {
        let rr = 60.0 / self.heart_rate;
        let duration = self.samples as f64 / self.rate as f64;
        let beats = ((duration - self.first_r_s) / rr).ceil().max(0.0) as usize + 3;
        let mut rng = rng_from_seed(derive_seed(XI_SEED, "xi", beats as u64));
        let unit = Normal::new(0.0, 1.0).expect("unit normal");
        self.xi = (0..beats).map(|_| f64::clamp(unit.sample(&mut rng), -2.0, 2.0)).collect();
    }

    fn rr(&self) -> f64 {
        60.0 / self.heart_rate
    }

    /// Beat parameters at `z` (missing coordinates read as zero).
    pub fn params(&self, z: &[f64]) -> BeatParams {
        let v = |i: usize| squash(i, if i < self.latent_dim { z.get(i).copied().unwrap_or(0.0) } else { 0.0 }).0;
        let base = BeatParams::normal_sinus();
        BeatParams {
            heart_rate: self.heart_rate,
            p: Wave { amplitude_mv: v(0), width_s: v(6), ..base.p },
            q: Wave { amplitude_mv: v(5), ..base.q },
            r: Wave { amplitude_mv: v(2), ..base.r },
            s: Wave { amplitude_mv: v(4), ..base.s },
            t: Wave { amplitude_mv: v(3), width_s: v(7), ..base.t },
            rr_jitter: v(1),
            p_wave_present: true,
            noise_mv: 0.0,
        }
    }

    /// R-peak times (s) for the given jitter, starting one beat before the record.
    pub fn r_peaks(&self, jitter: f64) -> Vec<f64> {
        let rr = self.rr();
        self.xi
            .iter()
            .enumerate()
            .map(|(k, xi)| self.first_r_s + (k as f64 - 1.0) * rr + jitter * rr * xi)
            .collect()
    }

    /// Single-source waveform before lead projection.
    fn base(&self, z: &[f64]) -> Vec<f64> {
        let params = self.params(z);
        let mut out = vec![0.0; self.samples];
        super::ecg::render_waves(&mut out, self.rate as f64, &self.r_peaks(params.rr_jitter), &params.waves());
        out
    }

    /// Visits every rendered sample of every bump: `(beat, wave, sample, u, e)`
    /// with `u = t - centre` and `e` the unit-amplitude Gaussian value.
    fn for_each_sample(&self, params: &BeatParams, mut f: impl FnMut(usize, usize, usize, f64, f64)) {
        let rate = self.rate as f64;
        let n = self.samples as isize;
        for (k, r) in self.r_peaks(params.rr_jitter).into_iter().enumerate() {
            for (w, wave) in params.waves().iter().enumerate() {
                let centre = r + wave.offset_s;
                let reach = SUPPORT_WIDTHS * wave.width_s;
                let lo = (((centre - reach) * rate).ceil() as isize).max(0);
                let hi = (((centre + reach) * rate).floor() as isize).min(n - 1);
                let inv = 1.0 / (2.0 * wave.width_s * wave.width_s);
                for i in lo..=hi {
                    let u = i as f64 / rate - centre;
                    f(k, w, i as usize, u, (-u * u * inv).exp());
                }
            }
        }
    }
}

impl EcgGenerator for ToyGenerator {
    fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    fn sampling_rate(&self) -> u32 {
        self.rate
    }

    fn output_shape(&self) -> (usize, usize) {
        (self.leads, self.samples)
    }

    fn lead_names(&self) -> Vec<String> {
        default_lead_names(self.leads)
    }

    fn generate(&self, z: &[f64]) -> Array2<f64> {
        let base = self.base(z);
        Array2::from_shape_fn((self.leads, self.samples), |(l, i)| lead_gain(l) * base[i])
    }

    fn pullback(&self, z: &[f64], grad: ArrayView2<'_, f64>) -> Vec<f64> {
        // collapse the lead projection
        let mut g = vec![0.0; self.samples];
        for (l, row) in grad.outer_iter().enumerate() {
            let gain = lead_gain(l);
            for (gi, v) in g.iter_mut().zip(row) {
                *gi += gain * v;
            }
        }
        let params = self.params(z);
        let waves = params.waves();
        let rr = self.rr();
        // d/d amplitude, d/d width per wave (P, Q, R, S, T), d/d jitter
        let mut d_amp = [0.0; 5];
        let mut d_width = [0.0; 5];
        let mut d_jitter = 0.0;
        self.for_each_sample(&params, |k, w, i, u, e| {
            let a = waves[w].amplitude_mv;
            let s = waves[w].width_s;
            let gi = g[i];
            d_amp[w] += gi * e;
            d_width[w] += gi * a * e * u * u / (s * s * s);
            // the centre moves with jitter; d out / d centre = a e u / s^2
            d_jitter += gi * a * e * u / (s * s) * rr * self.xi[k];
        });
        let param_grad = |i: usize| match i {
            0 => d_amp[0],
            1 => d_jitter,
            2 => d_amp[2],
            3 => d_amp[4],
            4 => d_amp[3],
            5 => d_amp[1],
            6 => d_width[0],
            7 => d_width[4],
            _ => 0.0,
        };
        (0..self.latent_dim)
            .map(|i| {
                if i < USED_DIMS {
                    param_grad(i) * squash(i, z.get(i).copied().unwrap_or(0.0)).1
                } else {
                    0.0
                }
            })
            .collect()
    }
}
