//! Clinical multi-lead chart with optional overlays.

use std::fmt::Write as _;
use std::path::Path;

use super::svg::{num, Svg};
use super::{cmap_hex, colormap, minmax_normalize, write_svg, ChartStyle};
use crate::attribution::{bin_attribution, AttributionResult};
use crate::error::{Error, Result};
use crate::record::EcgRecord;
use crate::tcav::TcavResult;

const TOP: f64 = 12.0;
const FONT: f64 = 3.5;

/// Everything drawn on a chart besides the record itself.
#[derive(Debug, Clone)]
pub struct EcgChart<'a> {
    pub style: ChartStyle,
    /// Draw a 1 mV x 0.2 s pulse at the start of every row.
    pub show_calibration: bool,
    pub cf_ecg: Option<&'a EcgRecord>,
    pub attribution: Option<&'a AttributionResult>,
    pub attribution_bin_size: usize,
    pub title: String,
    /// Footer lines `concept (layer): score [ci_low, ci_high]`.
    pub concepts: Option<&'a TcavResult>,
}

impl Default for EcgChart<'_> {
    fn default() -> Self {
        Self {
            style: ChartStyle::default(),
            show_calibration: true,
            cf_ecg: None,
            attribution: None,
            attribution_bin_size: 25,
            title: String::new(),
            concepts: None,
        }
    }
}

/// Sample range shown in column `c` of `cols`.
fn segment(c: usize, cols: usize, t: usize) -> (usize, usize) {
    (c * t / cols, (c + 1) * t / cols)
}

fn grid(svg: &mut Svg, style: &ChartStyle, x0: f64, y0: f64, w: f64, h: f64) {
    for (dx, dy, class, width) in [
        (style.x_of(style.small_box.0), -style.dy_of(style.small_box.1), "grid_minor", 0.1),
        (style.x_of(style.large_box.0), -style.dy_of(style.large_box.1), "grid_major", 0.25),
    ] {
        let color = style.color(class).to_string();
        let nx = (w / dx + 1e-9).floor() as usize;
        for k in 0..=nx {
            let x = x0 + k as f64 * dx;
            svg.line(class, x, y0, x, y0 + h, &color, width);
        }
        let ny = (h / dy + 1e-9).floor() as usize;
        for k in 0..=ny {
            let y = y0 + k as f64 * dy;
            svg.line(class, x0, y, x0 + w, y, &color, width);
        }
    }
}

/// Renders `record` as a `columns`-wide grid of lead panels (column-major
/// lead order, each column showing its own consecutive time segment).
pub fn render_ecg_chart(record: &EcgRecord, chart: &EcgChart<'_>) -> Result<String> {
    let style = &chart.style;
    style.validate()?;
    let (l, t) = (record.n_leads(), record.n_samples());
    let cols = style.columns;
    if l % cols != 0 {
        return Err(Error::GridMismatch { leads: l, columns: cols });
    }
    if let Some(cf) = chart.cf_ecg {
        if cf.signal().dim() != record.signal().dim() || cf.sampling_rate() != record.sampling_rate() {
            return Err(Error::ShapeMismatch("counterfactual overlay differs from the record in shape or rate".into()));
        }
    }
    let shading = match chart.attribution {
        Some(a) => {
            if a.time_len() != t {
                return Err(Error::ShapeMismatch(format!("attribution covers {} samples, record has {t}", a.time_len())));
            }
            let m = a.as_matrix();
            if m.nrows() != 1 && m.nrows() != l {
                return Err(Error::ShapeMismatch(format!("attribution has {} leads, record has {l}", m.nrows())));
            }
            let binned = bin_attribution(m.into_dyn(), chart.attribution_bin_size)?
                .into_dimensionality::<ndarray::Ix2>()
                .expect("matrix input");
            let norm = minmax_normalize(&binned.iter().copied().collect::<Vec<_>>());
            Some((ndarray::Array2::from_shape_vec(binned.dim(), norm).expect("same size"), colormap(&style.attribution_cmap)?))
        }
        None => None,
    };

    let rows = l / cols;
    let rate = record.sampling_rate() as f64;
    let pulse_w = style.x_of(0.2);
    let x0 = pulse_w + 6.0;
    let panel_w: Vec<f64> = (0..cols)
        .map(|c| {
            let (lo, hi) = segment(c, cols, t);
            style.x_of((hi - lo) as f64 / rate)
        })
        .collect();
    let grid_w = x0 + panel_w.iter().sum::<f64>() + 2.0;
    let grid_h = rows as f64 * style.row_height;
    let footer: Vec<String> = chart
        .concepts
        .map(|res| {
            res.entries
                .iter()
                .map(|e| {
                    let (lo, hi) = e.ci();
                    let mut s = String::new();
                    let _ = write!(s, "{} ({}): {:.2} [{:.2}, {:.2}]", e.concept, e.layer, e.score, lo, hi);
                    s
                })
                .collect()
        })
        .unwrap_or_default();
    let mut svg = Svg::new(grid_w, TOP + grid_h + 4.0 + 5.0 * footer.len() as f64);
    svg.text("title", 0.0, 7.0, FONT * 1.3, "start", &chart.title);
    grid(&mut svg, style, 0.0, TOP, grid_w, grid_h);

    for c in 0..cols {
        let (lo, hi) = segment(c, cols, t);
        let px = x0 + panel_w[..c].iter().sum::<f64>();
        for r in 0..rows {
            let lead = c * rows + r;
            let baseline = TOP + (r as f64 + 0.5) * style.row_height;
            svg.open_group("panel", px, baseline);
            if let Some((norm, cmap)) = &shading {
                let row = if norm.nrows() == 1 { 0 } else { lead };
                let bs = chart.attribution_bin_size;
                for b in lo / bs..hi.div_ceil(bs) {
                    let (s0, s1) = ((b * bs).max(lo), ((b + 1) * bs).min(hi));
                    let x = style.x_of((s0 - lo) as f64 / rate);
                    let w = style.x_of((s1 - lo) as f64 / rate) - x;
                    svg.rect(
                        "shade",
                        x,
                        -style.row_height / 2.0,
                        w,
                        style.row_height,
                        &cmap_hex(*cmap, norm[[row, b]]),
                        r#" fill-opacity="0.5""#,
                    );
                }
            }
            let points = |rec: &EcgRecord| -> Vec<(f64, f64)> {
                rec.signal()
                    .row(lead)
                    .slice(ndarray::s![lo..hi])
                    .iter()
                    .enumerate()
                    .map(|(k, v)| (style.x_of(k as f64 / rate), style.dy_of(*v)))
                    .collect()
            };
            svg.polyline("trace", points(record), style.color("trace"), 0.3, "");
            if let Some(cf) = chart.cf_ecg {
                let extra = format!(r#" stroke-opacity="{}""#, num(style.cf_alpha));
                svg.polyline("cf", points(cf), &style.cf_color, 0.3, &extra);
            }
            svg.text("lead-label", 1.0, -style.row_height / 2.0 + 5.0, FONT, "start", &record.lead_names()[lead]);
            svg.close_group();
        }
    }
    if chart.show_calibration {
        for r in 0..rows {
            let baseline = TOP + (r as f64 + 0.5) * style.row_height;
            svg.open_group("calibration-row", 0.0, baseline);
            let (a, top) = (2.0, style.dy_of(1.0));
            svg.path(
                "calibration",
                &[('M', &[a - 1.0, 0.0]), ('H', &[a]), ('V', &[top]), ('H', &[a + pulse_w]), ('V', &[0.0]), ('H', &[a + pulse_w + 1.0])],
                style.color("calibration"),
                0.35,
            );
            svg.close_group();
        }
    }
    for (i, line) in footer.iter().enumerate() {
        svg.text("concept-note", 2.0, TOP + grid_h + 5.0 + 5.0 * i as f64, FONT, "start", line);
    }
    Ok(svg.finish())
}

pub fn plot_ecg_chart(record: &EcgRecord, chart: &EcgChart<'_>, out_path: &Path) -> Result<()> {
    write_svg(out_path, &render_ecg_chart(record, chart)?)
}
