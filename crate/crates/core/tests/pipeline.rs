//! End-to-end use of the wrapper and explainers on small networks.

use ecgxai::attribution::{AttributionResult, GradCam, CamVariant, IntegratedGradients, Method};
use ecgxai::config::{rng_from_seed, TaskType};
use ecgxai::nn::{Dense, Layer, NamedLayer, Network, ReluRule};
use ecgxai::record::EcgRecord;
use ecgxai::synth::{af_records, make_af_record};
use ecgxai::tcav::{run_tcav, ConceptSet, Pooling, TcavParams};
use ecgxai::wrapper::{GradSpace, WrappedModel};
use ecgxai::{Error, Explainer};
use ndarray::{array, Array2, Array3};

fn saturated_model() -> WrappedModel {
    let net = Network::new(vec![
        NamedLayer { name: "pool".into(), layer: Layer::GlobalAvgPool },
        NamedLayer { name: "fc".into(), layer: Layer::Dense(Dense::new(array![[40.0], [-40.0]], array![0.0, 0.0])) },
    ])
    .unwrap();
    WrappedModel::new(net, TaskType::BinaryClassification)
}

#[test]
fn saturated_softmax_keeps_a_nonzero_gradient() {
    let model = saturated_model();
    let x = Array3::from_elem((1, 1, 10), 1.0);
    let p = model.predict(x.view(), None, false).unwrap().output;
    assert_eq!(p[[0, 0]], 1.0, "probability rounds to one");
    for (target, sign) in [(0, 1.0), (1, -1.0)] {
        let g = model.input_gradient(x.view(), target, GradSpace::Output, ReluRule::Standard).unwrap().input_grad;
        assert!(g.iter().all(|v| v.is_finite() && v * sign > 0.0), "target {target}: {g:?}");
    }
}

#[test]
fn standardized_shapes_for_every_task() {
    let tasks = [
        TaskType::BinaryClassification,
        TaskType::MulticlassClassification { num_classes: 5 },
        TaskType::MultilabelClassification { num_labels: 3 },
        TaskType::Regression,
    ];
    for task in tasks {
        let model = WrappedModel::new(Network::reference(2, task.num_outputs(), &mut rng_from_seed(1)), task);
        for b in [1, 2, 7] {
            let x = Array3::from_shape_fn((b, 2, 96), |(i, l, t)| ((i + l + t) as f64 * 0.17).sin());
            let out = model.predict(x.view(), None, false).unwrap().output;
            assert_eq!(out.dim(), (b, task.num_outputs()), "{task}");
            let one = model.predict(x.view(), Some(0), true).unwrap();
            assert_eq!(one.output.dim(), (b, 1));
            assert_eq!(one.input_grad.unwrap().dim(), (b, 2, 96));
        }
    }
}

#[test]
fn wrong_lead_count_is_a_forward_error() {
    let model = WrappedModel::new(Network::reference(12, 2, &mut rng_from_seed(1)), TaskType::BinaryClassification);
    let x = Array3::zeros((1, 3, 500));
    assert!(matches!(model.predict(x.view(), None, false), Err(Error::ModelForward(_))));
}

#[test]
fn attribution_methods_agree_on_shapes_and_persist() {
    let model = WrappedModel::new(Network::reference(12, 2, &mut rng_from_seed(3)), TaskType::BinaryClassification);
    let (rec, _) = make_af_record(1, 9).unwrap();
    let dir = tempfile::tempdir().unwrap();
    for method in Method::ALL {
        let explainer: Box<dyn Explainer<Output = AttributionResult>> = match method {
            Method::Saliency => Box::new(ecgxai::attribution::Saliency::default()),
            Method::Smoothgrad => Box::new(ecgxai::attribution::SmoothGrad { n_samples: 4, ..Default::default() }),
            Method::IntegratedGradients => Box::new(IntegratedGradients { steps: 8, ..Default::default() }),
            Method::Gradcam => Box::new(GradCam::new("conv2", CamVariant::Gradcam)),
            Method::Gradcampp => Box::new(GradCam::new("conv2", CamVariant::Gradcampp)),
            Method::GuidedGradcam => Box::new(ecgxai::attribution::GuidedGradCam::new("conv2")),
        };
        let result = explainer.explain(&model, &rec, 1).unwrap();
        assert_eq!(result.method, method);
        assert_eq!(result.time_len(), 2500);
        assert!(result.scores.iter().all(|v| v.is_finite()));
        let [bin, _] = result.save(dir.path(), method.name(), 250).unwrap();
        let loaded = AttributionResult::load(&dir.path().join(bin)).unwrap();
        // stored as f32
        assert_eq!(loaded.scores, result.scores.mapv(|v| v as f32 as f64));
    }
}

#[test]
fn tcav_runs_are_reproducible_and_bounded() {
    let model = WrappedModel::new(Network::reference(12, 2, &mut rng_from_seed(4)), TaskType::BinaryClassification);
    let concept = ConceptSet::new("af", af_records(Some(1), 10, 1).unwrap()).unwrap();
    let pool = af_records(None, 12, 2).unwrap();
    let inputs: Vec<EcgRecord> = af_records(Some(1), 4, 3).unwrap();
    let mut params = TcavParams { n_runs: 3, ..Default::default() };
    params.cav.pooling = Pooling::MeanOverTime;
    params.cav.iterations = 50;
    let a = run_tcav(&model, &["conv2", "conv3"], &[concept.clone()], &pool, &inputs, 1, &params, 5).unwrap();
    let b = run_tcav(&model, &["conv2", "conv3"], &[concept], &pool, &inputs, 1, &params, 5).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.entries.len(), 2);
    for e in &a.entries {
        assert_eq!(e.per_run_scores.len(), 3);
        assert!((0.0..=1.0).contains(&e.score));
        let (lo, hi) = e.ci();
        assert!(0.0 <= lo && lo <= e.score && e.score <= hi && hi <= 1.0);
    }
}

#[test]
fn cropping_to_input_duration_is_applied() {
    let model = WrappedModel::new(Network::reference(12, 2, &mut rng_from_seed(4)), TaskType::BinaryClassification);
    let concept = ConceptSet::new("af", af_records(Some(1), 10, 1).unwrap()).unwrap();
    let pool = af_records(None, 10, 2).unwrap();
    let long = EcgRecord::from_signal(Array2::from_elem((12, 3000), 0.1), 250).unwrap();
    let params = TcavParams { n_runs: 2, input_duration_s: Some(10.0), ..Default::default() };
    run_tcav(&model, &["conv3"], &[concept], &pool, &[long], 1, &params, 0).unwrap();
}
