//! Attribution heatmaps, counterfactual overlays and TCAV summaries.

use std::path::Path;

use super::svg::{num, Svg};
use super::{cmap_hex, colormap, minmax_normalize, write_svg, ChartStyle};
use crate::attribution::{bin_attribution, AttributionResult};
use crate::error::{Error, Result};
use crate::record::EcgRecord;
use crate::tcav::TcavResult;

const LABEL_MARGIN: f64 = 20.0;
const STRIP_HEIGHT: f64 = 6.0;
const COLORBAR_WIDTH: f64 = 25.0;
const FONT: f64 = 3.5;

/// Trace vertices of `values` relative to a baseline at y = 0.
fn trace_points(values: ndarray::ArrayView1<'_, f64>, rate: f64, style: &ChartStyle) -> Vec<(f64, f64)> {
    values
        .iter()
        .enumerate()
        .map(|(t, v)| (style.x_of(t as f64 / rate), style.dy_of(*v)))
        .collect()
}

fn colorbar(svg: &mut Svg, x: f64, y: f64, height: f64, cmap: colorous::Gradient, lo: f64, hi: f64) {
    const CELLS: usize = 20;
    let h = height / CELLS as f64;
    svg.open_group("colorbar", x, y);
    for i in 0..CELLS {
        let t = 1.0 - (i as f64 + 0.5) / CELLS as f64;
        svg.rect("colorbar-cell", 0.0, i as f64 * h, 5.0, h, &cmap_hex(cmap, t), "");
    }
    svg.text("colorbar-label", 7.0, FONT, FONT * 0.8, "start", &num(hi));
    svg.text("colorbar-label", 7.0, height, FONT * 0.8, "start", &num(lo));
    svg.close_group();
}

/// Waveform panels with a binned-attribution strip under each, sharing one
/// time axis. `leads` selects panels (all leads when `None`).
pub fn render_attribution(
    record: &EcgRecord,
    result: &AttributionResult,
    bin_size: usize,
    leads: Option<&[usize]>,
    style: &ChartStyle,
) -> Result<String> {
    style.validate()?;
    let t_len = record.n_samples();
    if result.time_len() != t_len {
        return Err(Error::ShapeMismatch(format!(
            "scores cover {} samples, record has {t_len}",
            result.time_len()
        )));
    }
    let m = result.as_matrix();
    if m.nrows() != 1 && m.nrows() != record.n_leads() {
        return Err(Error::ShapeMismatch(format!(
            "scores have {} leads, record has {}",
            m.nrows(),
            record.n_leads()
        )));
    }
    let all: Vec<usize> = (0..record.n_leads()).collect();
    let leads = leads.unwrap_or(&all);
    if let Some(&bad) = leads.iter().find(|&&l| l >= record.n_leads()) {
        return Err(Error::LeadOutOfRange { index: bad, leads: record.n_leads() });
    }
    let binned = bin_attribution(m.into_dyn(), bin_size)?;
    let binned = binned.into_dimensionality::<ndarray::Ix2>().expect("matrix input");
    let strip_row = |l: usize| if binned.nrows() == 1 { 0 } else { l };
    let shown: Vec<f64> = leads.iter().flat_map(|&l| binned.row(strip_row(l)).to_vec()).collect();
    let lo = shown.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = shown.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let norm = minmax_normalize(&shown);
    let cmap = colormap(&style.attribution_cmap)?;

    let rate = record.sampling_rate() as f64;
    let width = style.x_of(t_len as f64 / rate);
    let signal = record.signal();
    let heights: Vec<(f64, f64)> = leads
        .iter()
        .map(|&l| {
            let row = signal.row(l);
            let top = row.iter().copied().fold(0.0, f64::max);
            let bottom = row.iter().copied().fold(0.0, f64::min);
            (top * style.gain + 3.0, (top - bottom) * style.gain + 6.0)
        })
        .collect();
    let total: f64 = heights.iter().map(|(_, h)| h + STRIP_HEIGHT + 4.0).sum::<f64>() + 10.0;
    let mut svg = Svg::new(LABEL_MARGIN + width + COLORBAR_WIDTH, total);
    svg.text("title", LABEL_MARGIN, 6.0, FONT * 1.2, "start", &format!("{} (target {})", result.method, result.target));

    let n_bins = binned.ncols();
    let mut y = 10.0;
    for (k, &l) in leads.iter().enumerate() {
        let (baseline, height) = heights[k];
        svg.open_group("panel", LABEL_MARGIN, y);
        svg.text("lead-label", -3.0, baseline, FONT, "end", &record.lead_names()[l]);
        svg.open_group("trace-area", 0.0, baseline);
        svg.polyline("trace", trace_points(signal.row(l), rate, style), style.color("trace"), 0.3, "");
        svg.close_group();
        svg.open_group("strip", 0.0, height);
        for b in 0..n_bins {
            let lo_t = b * bin_size;
            let hi_t = (lo_t + bin_size).min(t_len);
            let x = style.x_of(lo_t as f64 / rate);
            let w = style.x_of(hi_t as f64 / rate) - x;
            svg.rect("heat", x, 0.0, w, STRIP_HEIGHT, &cmap_hex(cmap, norm[k * n_bins + b]), "");
        }
        svg.close_group();
        svg.close_group();
        y += height + STRIP_HEIGHT + 4.0;
    }
    colorbar(&mut svg, LABEL_MARGIN + width + 5.0, 10.0, (total - 20.0).min(60.0), cmap, lo, hi);
    Ok(svg.finish())
}

pub fn plot_attribution(record: &EcgRecord, result: &AttributionResult, bin_size: usize, out_path: &Path) -> Result<()> {
    write_svg(out_path, &render_attribution(record, result, bin_size, None, &ChartStyle::default())?)
}

/// One lead of `original` (blue) and `cf` (red) on a shared axis with the
/// target probabilities in the legend.
pub fn render_counterfactual_overlay(
    original: &EcgRecord,
    cf: &EcgRecord,
    lead_idx: usize,
    original_prob: f64,
    cf_prob: f64,
    style: &ChartStyle,
) -> Result<String> {
    style.validate()?;
    if original.signal().dim() != cf.signal().dim() || original.sampling_rate() != cf.sampling_rate() {
        return Err(Error::ShapeMismatch("counterfactual differs from the original in shape or rate".into()));
    }
    if lead_idx >= original.n_leads() {
        return Err(Error::LeadOutOfRange { index: lead_idx, leads: original.n_leads() });
    }
    let (a, b) = (original.signal(), cf.signal());
    let (a, b) = (a.row(lead_idx), b.row(lead_idx));
    let top = a.iter().chain(b.iter()).copied().fold(0.0, f64::max);
    let bottom = a.iter().chain(b.iter()).copied().fold(0.0, f64::min);
    let rate = original.sampling_rate() as f64;
    let width = style.x_of(original.n_samples() as f64 / rate);
    let plot_h = (top - bottom) * style.gain + 6.0;
    let mut svg = Svg::new(LABEL_MARGIN + width + 5.0, plot_h + 30.0);
    let lead = &original.lead_names()[lead_idx];
    svg.text("title", LABEL_MARGIN, 6.0, FONT * 1.2, "start", &format!("lead {lead}"));
    svg.open_group("axis", LABEL_MARGIN, 10.0 + top * style.gain + 3.0);
    svg.line("baseline", 0.0, 0.0, width, 0.0, "#bbbbbb", 0.2);
    svg.polyline("original", trace_points(a, rate, style), style.color("original"), 0.35, "");
    svg.polyline("counterfactual", trace_points(b, rate, style), style.color("counterfactual"), 0.35, "");
    svg.close_group();
    let ly = 10.0 + plot_h + 8.0;
    for (i, (class, label, p)) in [("original", "original", original_prob), ("counterfactual", "counterfactual", cf_prob)]
        .into_iter()
        .enumerate()
    {
        let x = LABEL_MARGIN + i as f64 * 70.0;
        svg.line(&format!("legend-{class}"), x, ly, x + 8.0, ly, style.color(class), 0.6);
        svg.text("legend", x + 10.0, ly + 1.2, FONT, "start", &format!("{label} (p = {p:.4})"));
    }
    Ok(svg.finish())
}

pub fn plot_counterfactual_overlay(
    original: &EcgRecord,
    cf: &EcgRecord,
    lead_idx: usize,
    original_prob: f64,
    cf_prob: f64,
    out_path: &Path,
) -> Result<()> {
    let svg = render_counterfactual_overlay(original, cf, lead_idx, original_prob, cf_prob, &ChartStyle::default())?;
    write_svg(out_path, &svg)
}

fn tcav_layers<'a>(results: &'a TcavResult, layers: &[&'a str]) -> Result<Vec<&'a str>> {
    if results.entries.is_empty() {
        return Err(Error::EmptyResults("TCAV result has no entries"));
    }
    Ok(if layers.is_empty() { results.layers() } else { layers.to_vec() })
}

const CELL_W: f64 = 24.0;
const CELL_H: f64 = 10.0;

/// Concept x layer grid of mean scores.
pub fn render_tcav_heatmap(results: &TcavResult, layers: &[&str]) -> Result<String> {
    let layers = tcav_layers(results, layers)?;
    let concepts = results.concepts();
    let cmap = colorous::VIRIDIS;
    let left = 30.0;
    let mut svg = Svg::new(left + CELL_W * layers.len() as f64 + COLORBAR_WIDTH, 20.0 + CELL_H * concepts.len() as f64 + 10.0);
    svg.text("title", left, 6.0, FONT * 1.2, "start", "TCAV scores");
    for (j, layer) in layers.iter().enumerate() {
        svg.text("layer-label", left + (j as f64 + 0.5) * CELL_W, 16.0, FONT, "middle", layer);
    }
    for (i, concept) in concepts.iter().enumerate() {
        let y = 20.0 + i as f64 * CELL_H;
        svg.text("concept-label", left - 2.0, y + CELL_H / 2.0 + 1.2, FONT, "end", concept);
        for (j, layer) in layers.iter().enumerate() {
            let x = left + j as f64 * CELL_W;
            match results.get(layer, concept) {
                Some(e) => {
                    svg.rect("cell", x, y, CELL_W, CELL_H, &cmap_hex(cmap, e.score), "");
                    svg.text("cell-value", x + CELL_W / 2.0, y + CELL_H / 2.0 + 1.2, FONT, "middle", &format!("{:.2}", e.score));
                }
                None => {
                    svg.rect("cell-missing", x, y, CELL_W, CELL_H, "#dddddd", "");
                    svg.text("cell-value", x + CELL_W / 2.0, y + CELL_H / 2.0 + 1.2, FONT, "middle", "n/a");
                }
            }
        }
    }
    colorbar(&mut svg, left + CELL_W * layers.len() as f64 + 5.0, 20.0, CELL_H * concepts.len() as f64, cmap, 0.0, 1.0);
    Ok(svg.finish())
}

const CI_PLOT_H: f64 = 60.0;

/// y of score `s` in the interval chart's plotting group.
fn ci_y(s: f64) -> f64 {
    CI_PLOT_H * (1.0 - s)
}

/// Per-layer score markers with clipped confidence intervals and a
/// reference line at chance level (0.5).
pub fn render_tcav_ci(results: &TcavResult, layers: &[&str]) -> Result<String> {
    let layers = tcav_layers(results, layers)?;
    let concepts = results.concepts();
    let slot = 8.0;
    let group_w = slot * concepts.len() as f64 + 8.0;
    let left = 15.0;
    let width = group_w * layers.len() as f64;
    let mut svg = Svg::new(left + width + 45.0, CI_PLOT_H + 35.0);
    svg.text("title", left, 6.0, FONT * 1.2, "start", &format!("TCAV scores, {}% CI", num(100.0 * (1.0 - results.alpha))));
    svg.open_group("plot", left, 12.0);
    svg.line("axis", 0.0, 0.0, 0.0, CI_PLOT_H, "black", 0.3);
    for tick in [0.0, 0.25, 0.5, 0.75, 1.0] {
        svg.line("tick", -1.5, ci_y(tick), 0.0, ci_y(tick), "black", 0.3);
        svg.text("tick-label", -2.5, ci_y(tick) + 1.2, FONT * 0.8, "end", &num(tick));
    }
    svg.line("reference", 0.0, ci_y(0.5), width, ci_y(0.5), "#888888", 0.3);
    for (j, layer) in layers.iter().enumerate() {
        let gx = j as f64 * group_w + 4.0;
        svg.text("layer-label", gx + slot * concepts.len() as f64 / 2.0, CI_PLOT_H + 6.0, FONT, "middle", layer);
        for (i, concept) in concepts.iter().enumerate() {
            let Some(e) = results.get(layer, concept) else { continue };
            let color = colorous::CATEGORY10[i % colorous::CATEGORY10.len()];
            let color = format!("#{:02x}{:02x}{:02x}", color.r, color.g, color.b);
            let x = gx + (i as f64 + 0.5) * slot;
            let (lo, hi) = e.ci();
            svg.line("ci", x, ci_y(lo), x, ci_y(hi), &color, 0.5);
            svg.circle("score", x, ci_y(e.score), 1.2, &color);
        }
    }
    svg.close_group();
    for (i, concept) in concepts.iter().enumerate() {
        let color = colorous::CATEGORY10[i % colorous::CATEGORY10.len()];
        let y = 16.0 + i as f64 * 6.0;
        svg.circle("legend-marker", left + width + 6.0, y, 1.2, &format!("#{:02x}{:02x}{:02x}", color.r, color.g, color.b));
        svg.text("legend", left + width + 9.0, y + 1.2, FONT, "start", concept);
    }
    Ok(svg.finish())
}

/// Writes the heatmap and the interval chart.
pub fn plot_tcav(results: &TcavResult, layers: &[&str], heatmap_path: &Path, ci_path: &Path) -> Result<()> {
    write_svg(heatmap_path, &render_tcav_heatmap(results, layers)?)?;
    write_svg(ci_path, &render_tcav_ci(results, layers)?)
}
