//! SVG rendering of ECG charts and explanation overlays.
//!
//! All geometry is in millimetres of chart paper: time maps to x at
//! `paper_speed` mm/s and amplitude to y at `gain` mm/mV, so a 1 mV
//! deflection and the calibration pulse have identical rendered heights.

mod chart;
mod plots;
pub mod svg;

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use chart::{plot_ecg_chart, render_ecg_chart, EcgChart};
pub use plots::{
    plot_attribution, plot_counterfactual_overlay, plot_tcav, render_attribution, render_counterfactual_overlay,
    render_tcav_ci, render_tcav_heatmap,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChartStyle {
    /// mm per second.
    pub paper_speed: f64,
    /// mm per millivolt.
    pub gain: f64,
    /// Small grid box as (seconds, millivolts).
    pub small_box: (f64, f64),
    pub large_box: (f64, f64),
    pub columns: usize,
    /// Height of one chart row, mm.
    pub row_height: f64,
    /// Colour per role: `trace`, `grid_minor`, `grid_major`, `text`,
    /// `calibration`, `original`, `counterfactual`.
    pub colors: BTreeMap<String, String>,
    pub attribution_cmap: String,
    pub cf_color: String,
    pub cf_alpha: f64,
}

impl Default for ChartStyle {
    fn default() -> Self {
        let colors = [
            ("trace", "blue"),
            ("grid_minor", "#f7d4d4"),
            ("grid_major", "#e79a9a"),
            ("text", "black"),
            ("calibration", "black"),
            ("original", "blue"),
            ("counterfactual", "red"),
        ];
        Self {
            paper_speed: 25.0,
            gain: 10.0,
            small_box: (0.04, 0.1),
            large_box: (0.2, 0.5),
            columns: 4,
            row_height: 40.0,
            colors: colors.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect(),
            attribution_cmap: "viridis".into(),
            cf_color: "green".into(),
            cf_alpha: 0.6,
        }
    }
}

impl ChartStyle {
    pub fn validate(&self) -> Result<()> {
        let positive = [self.paper_speed, self.gain, self.small_box.0, self.small_box.1, self.large_box.0, self.large_box.1, self.row_height];
        if positive.iter().any(|v| !(*v > 0.0 && v.is_finite())) || self.columns == 0 {
            return Err(Error::InvalidParameter("chart scales, boxes, row height and columns must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.cf_alpha) {
            return Err(Error::InvalidParameter(format!("cf_alpha {} not in [0, 1]", self.cf_alpha)));
        }
        colormap(&self.attribution_cmap)?;
        Ok(())
    }

    pub fn color(&self, role: &str) -> &str {
        self.colors.get(role).map(String::as_str).unwrap_or("black")
    }

    /// x offset (mm) of time `t` seconds.
    pub fn x_of(&self, t: f64) -> f64 {
        t * self.paper_speed
    }

    /// y offset (mm, downwards) of `mv` millivolts above the baseline.
    pub fn dy_of(&self, mv: f64) -> f64 {
        -mv * self.gain
    }
}

/// Looks up a perceptual colour map by name.
pub fn colormap(name: &str) -> Result<colorous::Gradient> {
    Ok(match name.to_ascii_lowercase().as_str() {
        "viridis" => colorous::VIRIDIS,
        "magma" => colorous::MAGMA,
        "inferno" => colorous::INFERNO,
        "plasma" => colorous::PLASMA,
        "cividis" => colorous::CIVIDIS,
        "turbo" => colorous::TURBO,
        "greys" => colorous::GREYS,
        "reds" => colorous::REDS,
        "blues" => colorous::BLUES,
        other => {
            return Err(Error::InvalidParameter(format!(
                "unknown colour map `{other}` (known: viridis, magma, inferno, plasma, cividis, turbo, greys, reds, blues)"
            )))
        }
    })
}

/// `#rrggbb` of the map at `t` in `[0, 1]`.
pub fn cmap_hex(map: colorous::Gradient, t: f64) -> String {
    let c = map.eval_continuous(t.clamp(0.0, 1.0));
    format!("#{:02x}{:02x}{:02x}", c.r, c.g, c.b)
}

/// Min-max scaling to `[0, 1]`; a constant input maps to all zeros.
pub fn minmax_normalize(values: &[f64]) -> Vec<f64> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let range = hi - lo;
    if !(range > 0.0) {
        return vec![0.0; values.len()];
    }
    values.iter().map(|v| (v - lo) / range).collect()
}

pub(crate) fn write_svg(path: &Path, svg: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, svg).map_err(|e| Error::io(path, e))
}
