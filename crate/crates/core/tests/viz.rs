mod common;

use common::{calibration_height, elements, group_offsets, with_class};
use ecgxai::attribution::{AttributionResult, Method};
use ecgxai::config::{Params, RunConfig};
use ecgxai::record::EcgRecord;
use ecgxai::tcav::{TcavEntry, TcavResult};
use ecgxai::viz::*;
use ecgxai::Error;
use ndarray::{Array1, Array2, ArrayD};

fn record(leads: usize, t: usize) -> EcgRecord {
    EcgRecord::from_signal(Array2::from_shape_fn((leads, t), |(l, i)| ((i + 7 * l) as f64 * 0.05).sin() * 0.8), 250).unwrap()
}

fn attribution(scores: ArrayD<f64>) -> AttributionResult {
    AttributionResult { scores, method: Method::Saliency, target: 0, params: Params::new(), run_config: RunConfig::new(0, "saliency") }
}

fn entry(layer: &str, concept: &str, score: f64, lo: f64, hi: f64) -> TcavEntry {
    TcavEntry {
        layer: layer.into(),
        concept: concept.into(),
        score,
        per_run_scores: vec![score; 10],
        ci_low_raw: lo,
        ci_high_raw: hi,
        p_value: 1.0,
        n_runs: 10,
        mean_holdout_accuracy: 1.0,
    }
}

#[test]
fn attribution_strip_has_one_cell_per_bin() {
    let rec = record(12, 2500);
    let attr = attribution(Array2::from_shape_fn((12, 2500), |(l, t)| (l * t) as f64).into_dyn());
    let svg = render_attribution(&rec, &attr, 25, None, &ChartStyle::default()).unwrap();
    let elems = elements(&svg);
    assert_eq!(with_class(&elems, "heat").len(), 12 * 100);
    assert_eq!(with_class(&elems, "trace").len(), 12);
}

#[test]
fn zero_scores_give_uniform_strip() {
    let rec = record(2, 100);
    let attr = attribution(ArrayD::zeros(ndarray::IxDyn(&[2, 100])));
    let svg = render_attribution(&rec, &attr, 10, None, &ChartStyle::default()).unwrap();
    let elems = elements(&svg);
    let fills: std::collections::BTreeSet<&str> = with_class(&elems, "heat").iter().map(|e| e.attrs["fill"].as_str()).collect();
    assert_eq!(fills.len(), 1);
}

#[test]
fn spike_and_hot_cell_share_the_time_axis() {
    let mut sig = Array2::zeros((1, 500));
    sig[[0, 237]] = 1.0;
    let rec = EcgRecord::from_signal(sig, 250).unwrap();
    let mut scores = Array1::zeros(500);
    scores[237] = 5.0;
    let svg = render_attribution(&rec, &attribution(scores.into_dyn()), 10, None, &ChartStyle::default()).unwrap();
    let elems = elements(&svg);
    let trace = &with_class(&elems, "trace")[0];
    let peak = trace.points().into_iter().fold((0.0, f64::INFINITY), |a, p| if p.1 < a.1 { p } else { a });
    let cells = with_class(&elems, "heat");
    let hot = cells.iter().find(|c| c.attrs["fill"] == "#fde725").expect("hottest cell");
    let x = hot.num("x") + hot.offset.0;
    assert!(peak.0 >= x && peak.0 < x + hot.num("width"), "{peak:?} vs [{x}, +{}]", hot.num("width"));
    // the same affine map: x = 20 mm margin + t / 250 s * 25 mm/s
    assert!((peak.0 - (20.0 + 237.0 / 10.0)).abs() < 1e-9);
}

#[test]
fn attribution_shape_checked() {
    let rec = record(2, 100);
    let attr = attribution(ArrayD::zeros(ndarray::IxDyn(&[99])));
    assert!(matches!(render_attribution(&rec, &attr, 10, None, &ChartStyle::default()), Err(Error::ShapeMismatch(_))));
}

#[test]
fn overlay_legend_has_four_decimals() {
    let rec = record(12, 500);
    let svg = render_counterfactual_overlay(&rec, &rec, 1, 0.0005, 0.7712, &ChartStyle::default()).unwrap();
    assert!(svg.contains("0.0005") && svg.contains("0.7712"));
    let elems = elements(&svg);
    assert_eq!(with_class(&elems, "original")[0].attrs["stroke"], "blue");
    assert_eq!(with_class(&elems, "counterfactual")[0].attrs["stroke"], "red");
    assert_eq!(with_class(&elems, "original")[0].points(), with_class(&elems, "counterfactual")[0].points());
    assert!(matches!(
        render_counterfactual_overlay(&rec, &rec, 12, 0.0, 1.0, &ChartStyle::default()),
        Err(Error::LeadOutOfRange { index: 12, leads: 12 })
    ));
}

#[test]
fn tcav_heatmap_grid() {
    let mut entries = Vec::new();
    for c in ["a", "b", "c", "d"] {
        for l in ["conv1", "conv2", "conv3"] {
            entries.push(entry(l, c, 0.7, 0.6, 0.8));
        }
    }
    let res = TcavResult { entries, alpha: 0.05, t_critical: 2.262 };
    let elems = elements(&render_tcav_heatmap(&res, &[]).unwrap());
    assert_eq!(with_class(&elems, "cell").len(), 12);
}

#[test]
fn chance_score_sits_on_reference_line() {
    let res = TcavResult { entries: vec![entry("conv3", "af", 0.5, 0.5, 0.5)], alpha: 0.05, t_critical: 2.262 };
    let elems = elements(&render_tcav_ci(&res, &[]).unwrap());
    let reference = with_class(&elems, "reference")[0];
    let marker = with_class(&elems, "score")[0];
    assert_eq!(marker.num("cy") + marker.offset.1, reference.num("y1") + reference.offset.1);
}

#[test]
fn empty_tcav_rejected() {
    let res = TcavResult { entries: vec![], alpha: 0.05, t_critical: 2.262 };
    assert!(matches!(render_tcav_heatmap(&res, &[]), Err(Error::EmptyResults(_))));
}

#[test]
fn chart_is_four_by_three() {
    let rec = record(12, 2500);
    let svg = render_ecg_chart(&rec, &EcgChart::default()).unwrap();
    let elems = elements(&svg);
    let panels = group_offsets(&elems, "panel");
    assert_eq!(panels.len(), 12);
    let xs: std::collections::BTreeSet<String> = panels.iter().map(|p| format!("{:.6}", p.0)).collect();
    let ys: std::collections::BTreeSet<String> = panels.iter().map(|p| format!("{:.6}", p.1)).collect();
    assert_eq!((xs.len(), ys.len()), (4, 3));
    assert_eq!(with_class(&elems, "calibration").len(), 3);
    // column-major: second panel in document order is lead II, in column 0
    assert_eq!(with_class(&elems, "lead-label").len(), 12);
    assert!(svg.find(">II<").unwrap() < svg.find(">aVR<").unwrap());
}

#[test]
fn calibration_matches_one_millivolt() {
    let mut sig = Array2::zeros((12, 1000));
    sig.column_mut(100).fill(1.0);
    let rec = EcgRecord::from_signal(sig, 250).unwrap();
    let style = ChartStyle::default();
    let svg = render_ecg_chart(&rec, &EcgChart { style: style.clone(), ..EcgChart::default() }).unwrap();
    let elems = elements(&svg);
    let pulse = calibration_height(with_class(&elems, "calibration")[0]);
    let trace = with_class(&elems, "trace")[0].points();
    let top = trace.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
    let base = trace.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
    assert!((pulse - (base - top)).abs() <= 1e-6 * style.row_height, "{pulse} vs {}", base - top);
    assert_eq!(pulse, 10.0);
}

#[test]
fn flat_chart_with_overlays_renders() {
    let rec = EcgRecord::from_signal(Array2::zeros((12, 2500)), 250).unwrap();
    let attr = attribution(ArrayD::zeros(ndarray::IxDyn(&[2500])));
    let chart = EcgChart { cf_ecg: Some(&rec), attribution: Some(&attr), title: "flat".into(), ..EcgChart::default() };
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("chart.svg");
    plot_ecg_chart(&rec, &chart, &path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    let elems = elements(&text);
    assert_eq!(with_class(&elems, "cf").len(), 12);
    assert_eq!(with_class(&elems, "cf")[0].attrs["stroke"], "green");
    assert_eq!(with_class(&elems, "cf")[0].attrs["stroke-opacity"], "0.6");
    assert_eq!(with_class(&elems, "shade").len(), 12 * 25);
    assert!(with_class(&elems, "grid_minor").len() > 100);
}

#[test]
fn chart_errors() {
    let rec = record(5, 100);
    assert!(matches!(render_ecg_chart(&rec, &EcgChart::default()), Err(Error::GridMismatch { leads: 5, columns: 4 })));
    let rec = record(12, 100);
    let other = record(12, 99);
    let chart = EcgChart { cf_ecg: Some(&other), ..EcgChart::default() };
    assert!(matches!(render_ecg_chart(&rec, &chart), Err(Error::ShapeMismatch(_))));
}

#[test]
fn rendering_is_byte_identical() {
    let rec = record(12, 1000);
    let attr = attribution(Array2::from_shape_fn((12, 1000), |(l, t)| ((l + t) % 17) as f64).into_dyn());
    let chart = EcgChart { attribution: Some(&attr), ..EcgChart::default() };
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.svg"), dir.path().join("b.svg"));
    plot_ecg_chart(&rec, &chart, &a).unwrap();
    plot_ecg_chart(&rec, &chart, &b).unwrap();
    assert_eq!(std::fs::read(a).unwrap(), std::fs::read(b).unwrap());
    assert_eq!(
        render_attribution(&rec, &attr, 25, None, &ChartStyle::default()).unwrap(),
        render_attribution(&rec, &attr, 25, None, &ChartStyle::default()).unwrap()
    );
}
