use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use ecgxai::config::{rng_from_seed, ExplanationManifest, TaskType};
use ecgxai::nn::Network;
use ecgxai::record::{save_ecg, EcgFormat, EcgRecord};
use ecgxai::synth::make_af_record;
use ecgxai::wrapper::WrappedModel;
use ndarray::Array2;
use tempfile::TempDir;

struct Fixture {
    dir: TempDir,
}

impl Fixture {
    /// An untrained reference network plus two AF-proxy records.
    fn new() -> Self {
        let dir = TempDir::new().unwrap();
        let net = Network::reference(12, 2, &mut rng_from_seed(5));
        WrappedModel::new(net, TaskType::BinaryClassification).save(&dir.path().join("model.ckpt")).unwrap();
        for (i, label) in [0usize, 1].into_iter().enumerate() {
            let (rec, _) = make_af_record(label, 100 + i as u64).unwrap();
            save_ecg(&rec, dir.path().join(format!("rec{i}.bin")), EcgFormat::BinaryFloat32).unwrap();
        }
        Self { dir }
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.dir.path().join(rel)
    }

    fn config(&self, name: &str, text: &str) -> PathBuf {
        let p = self.path(name);
        fs::write(&p, text).unwrap();
        p
    }

    fn out(&self) -> PathBuf {
        self.path("runs")
    }

    fn run(&self, command: &str, config: &Path) -> Output {
        ecgxai().arg(command).arg("--config").arg(config).arg("--out-dir").arg(self.out()).output().unwrap()
    }
}

fn ecgxai() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_ecgxai"));
    c.env_remove("EXECG_OUT_DIR");
    c
}

fn run_dir(out: &Output) -> PathBuf {
    assert!(out.status.success(), "exit {:?}: {}", out.status.code(), String::from_utf8_lossy(&out.stderr));
    PathBuf::from(String::from_utf8(out.stdout.clone()).unwrap().trim())
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn manifest(dir: &Path) -> ExplanationManifest {
    ExplanationManifest::read(&dir.join("manifest.toml")).unwrap()
}

fn hashes(m: &ExplanationManifest) -> Vec<(PathBuf, String)> {
    m.outputs.iter().map(|o| (o.path.clone(), o.sha256.clone())).collect()
}

const GRADCAM: &str = r#"
seed = 11
[explain]
model = "model.ckpt"
inputs = ["rec0.bin", "rec1.bin"]
method = "gradcam"
layer = "conv3"
target = 0
"#;

#[test]
fn gradcam_run_writes_attributions_plots_and_manifest() {
    let fx = Fixture::new();
    let dir = run_dir(&fx.run("explain", &fx.config("c.toml", GRADCAM)));
    assert!(dir.file_name().unwrap().to_str().unwrap().starts_with("explain-"));
    for f in ["attribution_000.bin", "attribution_000.toml", "attribution_000.svg", "attribution_001.svg"] {
        assert!(dir.join(f).is_file(), "{f}");
    }
    let m = manifest(&dir);
    assert_eq!(m.run_config.method_name, "gradcam");
    assert_eq!(m.run_config.seed, 11);
    assert_eq!(m.outputs.len(), 6);
    assert!(m.stale_outputs(&dir).is_empty());
    let loaded = ecgxai::attribution::AttributionResult::load(&dir.join("attribution_000.bin")).unwrap();
    assert_eq!(loaded.scores.shape(), &[2500]);
}

#[test]
fn identical_configs_give_identical_hashes() {
    let fx = Fixture::new();
    let cfg = fx.config("c.toml", GRADCAM);
    let a = manifest(&run_dir(&fx.run("explain", &cfg)));
    fs::remove_dir_all(fx.out()).unwrap();
    let b = manifest(&run_dir(&fx.run("explain", &cfg)));
    assert_eq!(hashes(&a), hashes(&b));
    assert_eq!(a.run_config, b.run_config);
}

#[test]
fn rerun_from_manifest_reproduces_every_hash() {
    let fx = Fixture::new();
    let text = GRADCAM.replace("\"gradcam\"", "\"smoothgrad\"").replace("layer = \"conv3\"\n", "n_samples = 4\n");
    let first = run_dir(&fx.run("explain", &fx.config("c.toml", &text)));
    let original = manifest(&first);
    // the manifest must be self-contained: rerun into a fresh root
    let copy = fx.path("saved_manifest.toml");
    fs::copy(first.join("manifest.toml"), &copy).unwrap();
    fs::remove_dir_all(fx.out()).unwrap();
    let second = run_dir(&fx.run("explain", &copy));
    assert_eq!(second, first);
    let again = manifest(&second);
    assert_eq!(hashes(&again), hashes(&original));
    assert_eq!(again.config, original.config);
}

#[test]
fn seed_flag_overrides_config_seed() {
    let fx = Fixture::new();
    let text = GRADCAM.replace("\"gradcam\"", "\"smoothgrad\"").replace("layer = \"conv3\"\n", "n_samples = 4\n");
    let cfg = fx.config("c.toml", &text);
    let a = run_dir(&fx.run("explain", &cfg));
    let out = ecgxai().args(["explain", "--seed", "12", "--config"]).arg(&cfg).arg("--out-dir").arg(fx.out()).output().unwrap();
    let b = run_dir(&out);
    assert_ne!(a, b);
    assert_eq!(manifest(&b).run_config.seed, 12);
    assert_ne!(hashes(&manifest(&a)), hashes(&manifest(&b)));
}

#[test]
fn unknown_method_exits_2_and_lists_methods() {
    let fx = Fixture::new();
    let out = fx.run("explain", &fx.config("c.toml", &GRADCAM.replace("\"gradcam\"", "\"lime\"")));
    assert_eq!(out.status.code(), Some(2));
    let msg = stderr(&out);
    for m in ["saliency", "smoothgrad", "integrated_gradients", "gradcam", "gradcampp", "guided_gradcam", "counterfactual"] {
        assert!(msg.contains(m), "{msg}");
    }
    assert!(!fx.out().exists());
}

#[test]
fn config_errors_exit_2() {
    let fx = Fixture::new();
    for text in [
        GRADCAM.replace("layer = \"conv3\"", "layer = \"conv9\""),
        GRADCAM.replace("rec1.bin", "missing.bin"),
        GRADCAM.replace("target = 0", "target = 5"),
        GRADCAM.replace("seed = 11", "seed = 11\ncolour = 2"),
        "[explain\n".to_string(),
    ] {
        let out = fx.run("explain", &fx.config("c.toml", &text));
        assert_eq!(out.status.code(), Some(2), "{text}: {}", stderr(&out));
    }
    let out = ecgxai().arg("explain").arg("--config").arg(fx.path("absent.toml")).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn model_load_failure_exits_3() {
    let fx = Fixture::new();
    let out = fx.run("explain", &fx.config("c.toml", &GRADCAM.replace("model.ckpt", "nope.ckpt")));
    assert_eq!(out.status.code(), Some(3), "{}", stderr(&out));
    fs::write(fx.path("bad.ckpt"), "{not json").unwrap();
    let out = fx.run("explain", &fx.config("c.toml", &GRADCAM.replace("model.ckpt", "bad.ckpt")));
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn explainer_failure_exits_4_naming_the_stage() {
    let fx = Fixture::new();
    let short = EcgRecord::from_signal(Array2::zeros((12, 100)), 250).unwrap();
    save_ecg(&short, fx.path("short.bin"), EcgFormat::BinaryFloat32).unwrap();
    let text = "[explain]\nmodel = \"model.ckpt\"\ninputs = [\"rec0.bin\"]\nmethod = \"ig\"\nbaseline = \"short.bin\"\n";
    let out = fx.run("explain", &fx.config("c.toml", text));
    assert_eq!(out.status.code(), Some(4));
    assert!(stderr(&out).contains("explain input 0"), "{}", stderr(&out));
}

#[test]
fn out_dir_comes_from_flag_then_environment() {
    let fx = Fixture::new();
    let cfg = fx.config("c.toml", GRADCAM);
    let env_root = fx.path("from_env");
    let out = ecgxai().arg("explain").arg("--config").arg(&cfg).env("EXECG_OUT_DIR", &env_root).output().unwrap();
    assert!(run_dir(&out).starts_with(&env_root));
    let flag_root = fx.path("from_flag");
    let out = ecgxai()
        .arg("explain")
        .arg("--config")
        .arg(&cfg)
        .arg("--out-dir")
        .arg(&flag_root)
        .env("EXECG_OUT_DIR", &env_root)
        .output()
        .unwrap();
    assert!(run_dir(&out).starts_with(&flag_root));
}

#[test]
fn outputs_stay_inside_the_run_directory() {
    let fx = Fixture::new();
    let before: Vec<_> = fs::read_dir(fx.dir.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
    let dir = run_dir(&fx.run("explain", &fx.config("c.toml", GRADCAM)));
    let after: Vec<_> = fs::read_dir(fx.dir.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert_eq!(after.len(), before.len() + 2, "config and runs/ only");
    let roots: Vec<_> = fs::read_dir(fx.out()).unwrap().map(|e| e.unwrap().path()).collect();
    assert_eq!(roots, vec![dir.clone()]);
    let listed: Vec<_> = manifest(&dir).outputs.into_iter().map(|o| o.path).collect();
    let mut on_disk: Vec<_> = fs::read_dir(&dir).unwrap().map(|e| PathBuf::from(e.unwrap().file_name())).collect();
    on_disk.retain(|p| p != Path::new("manifest.toml"));
    on_disk.sort();
    let mut listed_sorted = listed.clone();
    listed_sorted.sort();
    assert_eq!(on_disk, listed_sorted);
}

#[test]
fn counterfactual_run_writes_signals_trace_and_overlay() {
    let fx = Fixture::new();
    let text = "[explain]\nmodel = \"model.ckpt\"\ninputs = [\"rec0.bin\"]\nmethod = \"counterfactual\"\ntarget = 1\n\
                max_steps = 5\nstarts = 1\ninversion_restarts = 1\ninversion_steps = 10\n";
    let dir = run_dir(&fx.run("explain", &fx.config("c.toml", text)));
    for f in ["cf_000.bin", "cf_000_reconstruction.bin", "cf_000_trace.csv", "cf_000.toml", "cf_000_overlay.svg"] {
        assert!(dir.join(f).is_file(), "{f}");
    }
    let trace = fs::read_to_string(dir.join("cf_000_trace.csv")).unwrap();
    assert!(trace.starts_with("step,total,pred_term,proximity_term\n"));
    assert_eq!(manifest(&dir).run_config.method_name, "counterfactual");
}

#[test]
fn chart_renders_grid_calibration_and_flat_records() {
    let fx = Fixture::new();
    let attr = run_dir(&fx.run("explain", &fx.config("e.toml", GRADCAM)));
    let text = format!(
        "[chart]\nrecord = \"rec0.bin\"\ncounterfactual = \"rec1.bin\"\nattribution = \"{}\"\ntitle = \"case\"\n",
        attr.join("attribution_000.bin").display()
    );
    let dir = run_dir(&fx.run("chart", &fx.config("c.toml", &text)));
    let svg = fs::read_to_string(dir.join("chart.svg")).unwrap();
    assert_eq!(svg.matches("class=\"panel\"").count(), 12);
    assert_eq!(svg.matches("class=\"calibration\"").count(), 3);
    assert_eq!(svg.matches("class=\"cf\"").count(), 12);

    let flat = EcgRecord::from_signal(Array2::zeros((12, 2500)), 250).unwrap();
    save_ecg(&flat, fx.path("flat.csv"), EcgFormat::Csv).unwrap();
    let dir = run_dir(&fx.run("chart", &fx.config("f.toml", "[chart]\nrecord = \"flat.csv\"\nshow_calibration = false\n")));
    let svg = fs::read_to_string(dir.join("chart.svg")).unwrap();
    assert_eq!(svg.matches("class=\"calibration\"").count(), 0);
    assert_eq!(svg.matches("class=\"trace\"").count(), 12);
}

#[test]
fn chart_rejects_bad_style_and_reports_render_failures() {
    let fx = Fixture::new();
    let out = fx.run("chart", &fx.config("c.toml", "[chart]\nrecord = \"rec0.bin\"\n[chart.style]\ngain = -1.0\n"));
    assert_eq!(out.status.code(), Some(2));
    let five = EcgRecord::from_signal(Array2::zeros((5, 100)), 250).unwrap();
    save_ecg(&five, fx.path("five.bin"), EcgFormat::BinaryFloat32).unwrap();
    let out = fx.run("chart", &fx.config("c.toml", "[chart]\nrecord = \"five.bin\"\n"));
    assert_eq!(out.status.code(), Some(4));
    assert!(stderr(&out).contains("render chart"));
}

#[test]
fn synth_then_tcav_end_to_end() {
    let fx = Fixture::new();
    let cfg = "seed = 2\n[synth]\nn_per_class = 6\nepochs = 1\nn_per_concept = 10\npool_size = 12\n";
    let synth = run_dir(&fx.run("synth", &fx.config("s.toml", cfg)));
    for f in ["model.ckpt", "training.toml", "dataset/labels.csv", "concepts/random/ex_0011.bin", "concepts/af/ex_0009.bin"] {
        assert!(synth.join(f).is_file(), "{f}");
    }
    let m = manifest(&synth);
    assert!(m.stale_outputs(&synth).is_empty());
    assert_eq!(m.outputs.iter().filter(|o| o.kind == "dataset").count(), 13);

    let tcav = format!(
        "[tcav]\nmodel = \"{0}/model.ckpt\"\nconcepts_dir = \"{0}/concepts\"\ninputs = [\"{0}/concepts/af\"]\n\
         layers = [\"conv2\", \"conv3\"]\ntarget = 1\nn_runs = 3\ninput_duration_s = 10.0\n",
        synth.display()
    );
    let dir = run_dir(&fx.run("tcav", &fx.config("t.toml", &tcav)));
    let csv = fs::read_to_string(dir.join("tcav.csv")).unwrap();
    assert!(csv.starts_with("layer,concept,score,ci_low,ci_high,p_value,n_runs\n"));
    assert_eq!(csv.lines().count(), 1 + 2 * 3);
    assert!(dir.join("tcav_heatmap.svg").is_file() && dir.join("tcav_ci.svg").is_file());
    assert_eq!(manifest(&dir).notes.len(), 1);

    // the chart command accepts the tcav result as a footer
    let chart = format!("[chart]\nrecord = \"rec1.bin\"\ntcav = \"{}\"\n", dir.join("tcav.toml").display());
    let svg = fs::read_to_string(run_dir(&fx.run("chart", &fx.config("c.toml", &chart))).join("chart.svg")).unwrap();
    assert!(svg.contains("af (conv3)"));
}

#[test]
fn tcav_unknown_layer_exits_2() {
    let fx = Fixture::new();
    let text = "[tcav]\nmodel = \"model.ckpt\"\nconcepts_dir = \"nowhere\"\ninputs = [\"rec0.bin\"]\nlayers = [\"conv7\"]\n";
    let out = fx.run("tcav", &fx.config("t.toml", text));
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("conv7"));
}
