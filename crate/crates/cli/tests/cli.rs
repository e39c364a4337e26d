use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use lag_cli::args::InputArgs;
use lag_cli::experiments::{center, derive_y, gather_inputs, mirror_series, noise_series, sample_grid};
use lag_cli::Real;
use lag_core::imaging::{mirror_h, read_image, write_image, ImageBatch};
use lag_core::trainer::{load_checkpoint, TrainState};

const TINY: &[&str] = &[
    "x_size=16",
    "y_size=4",
    "width=4",
    "blocks=1",
    "latent_n=2",
    "latent_p=4",
    "batch=2",
    "fade_steps=20",
    "hold_steps=20",
    "toy_count=8",
    "checkpoint_every=100",
    "sample_every=100",
];

fn lag(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lag")).args(args).output().expect("spawn lag")
}

fn train(out: &Path, steps: u64, extra: &[&str]) -> Output {
    let out_set = format!("out_dir={}", out.display());
    let steps_set = format!("total_steps={steps}");
    let mut args = vec!["train"];
    for kv in TINY.iter().copied().chain([out_set.as_str(), steps_set.as_str()]) {
        args.extend(["--set", kv]);
    }
    args.extend(extra);
    lag(&args)
}

fn assert_ok(out: &Output) {
    assert!(out.status.success(), "status {:?}\nstderr: {}", out.status, String::from_utf8_lossy(&out.stderr));
}

/// One trained model shared by every test in this file.
fn model() -> &'static Path {
    static DIR: OnceLock<PathBuf> = OnceLock::new();
    DIR.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap().keep();
        assert_ok(&train(&dir, 200, &[]));
        dir
    })
}

fn checkpoint() -> String {
    model().join("final.lagc").display().to_string()
}

fn state() -> TrainState<Real> {
    load_checkpoint(model().join("final.lagc")).unwrap()
}

/// Checkpoints record their output directory; everything else must match.
fn assert_same_model(a: &Path, b: &Path) {
    let mut a: TrainState<Real> = load_checkpoint(a).unwrap();
    let b: TrainState<Real> = load_checkpoint(b).unwrap();
    a.cfg.out_dir = b.cfg.out_dir.clone();
    assert!(a == b, "checkpoints differ");
}

fn toy_inputs(state: &TrainState<Real>, n: usize) -> ImageBatch<Real> {
    gather_inputs(state, &InputArgs { inputs: vec![], toy: Some(n), toy_seed: 999_983 }).unwrap()
}

#[test]
fn training_writes_one_metrics_line_per_step_and_is_reproducible() {
    let log = fs::read_to_string(model().join("metrics.tsv")).unwrap();
    let lines: Vec<&str> = log.lines().collect();
    assert_eq!(lines.len(), 200);
    for (i, line) in lines.iter().enumerate() {
        let fields: Vec<&str> = line.split('\t').collect();
        assert_eq!(fields.len(), 7, "{line}");
        assert_eq!(fields[0].parse::<usize>().unwrap(), i);
        assert!(fields[1..5].iter().all(|f| f.parse::<f64>().unwrap().is_finite()));
    }
    assert!(model().join("step-00000100.lagc").exists());
    assert!(model().join("samples-00000200.ppm").exists());

    let again = tempfile::tempdir().unwrap();
    assert_ok(&train(again.path(), 200, &[]));
    assert_eq!(fs::read(again.path().join("metrics.tsv")).unwrap(), log.as_bytes());
    assert_same_model(&again.path().join("final.lagc"), &model().join("final.lagc"));
}

#[test]
fn resumed_training_reproduces_the_uninterrupted_run() {
    let dir = tempfile::tempdir().unwrap();
    let half = model().join("step-00000100.lagc").display().to_string();
    fs::copy(model().join("metrics.tsv"), dir.path().join("metrics.tsv")).unwrap();
    assert_ok(&train(dir.path(), 200, &["--resume", &half]));
    assert_eq!(fs::read(dir.path().join("metrics.tsv")).unwrap(), fs::read(model().join("metrics.tsv")).unwrap());
    assert_same_model(&dir.path().join("final.lagc"), &model().join("final.lagc"));
}

#[test]
fn invalid_configurations_exit_with_validation_status() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(train(dir.path(), 10, &["--set", "toy=false"]).status.code(), Some(1));
    assert_eq!(train(dir.path(), 10, &["--set", "no_such_key=3"]).status.code(), Some(1));
    assert_eq!(train(dir.path(), 10, &["--set", "dataset=/nonexistent/dir", "--set", "toy=false"]).status.code(), Some(1));
    assert_eq!(lag(&["sample", "--checkpoint", "/nonexistent.lagc", "--toy", "1", "-o", "x.ppm"]).status.code(), Some(3));
    assert_eq!(lag(&["frobnicate"]).status.code(), Some(1));
}

#[test]
fn sample_grid_has_three_fixed_columns_plus_k() {
    let dir = tempfile::tempdir().unwrap();
    for k in [0usize, 2] {
        let out = dir.path().join(format!("k{k}.ppm"));
        let o = out.display().to_string();
        assert_ok(&lag(&["sample", "--checkpoint", &checkpoint(), "--toy", "3", "-k", &k.to_string(), "-o", &o]));
        let grid = read_image::<Real>(&out).unwrap();
        assert_eq!(grid.width(), (3 + k) * 16);
        assert_eq!(grid.height(), 3 * 16);
        let again = dir.path().join("again.ppm");
        let a = again.display().to_string();
        assert_ok(&lag(&["sample", "--checkpoint", &checkpoint(), "--toy", "3", "-k", &k.to_string(), "-o", &a]));
        assert_eq!(fs::read(&out).unwrap(), fs::read(&again).unwrap());
    }
}

#[test]
fn sample_rejects_inputs_at_the_wrong_resolution() {
    let dir = tempfile::tempdir().unwrap();
    let wrong = dir.path().join("wrong.ppm");
    write_image(&wrong, &ImageBatch::<Real>::filled([1, 3, 8, 8], 0.0).unwrap()).unwrap();
    let w = wrong.display().to_string();
    let out = lag(&["sample", "--checkpoint", &checkpoint(), "--input", &w, "-o", "/dev/null"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn mirror_grid_has_one_column_per_step() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("m.ppm");
    let o = out.display().to_string();
    assert_ok(&lag(&["mirror", "--checkpoint", &checkpoint(), "--toy", "1", "--steps", "9", "-o", &o]));
    let grid = read_image::<Real>(&out).unwrap();
    assert_eq!((grid.width(), grid.height()), (9 * 16, 2 * 16));
}

#[test]
fn mirror_endpoints_match_the_center_outputs() {
    let state = state();
    let x = toy_inputs(&state, 1);
    let (_, outs) = mirror_series(&state, &x, 9).unwrap();
    let start = center(&state, &derive_y(&state, &x).unwrap()).unwrap();
    let end = center(&state, &derive_y(&state, &mirror_h(&x)).unwrap()).unwrap();
    assert_eq!(outs.sample(0), start);
    assert_eq!(outs.sample(8), end);
}

#[test]
fn symmetric_input_gives_a_constant_mirror_series() {
    let state = state();
    let x = toy_inputs(&state, 1);
    let m = mirror_h(&x);
    let sym: Vec<Real> = x.data().iter().zip(m.data()).map(|(a, b)| 0.5 * (a + b)).collect();
    let sym = ImageBatch::new(x.shape(), sym).unwrap();
    assert_eq!(mirror_h(&sym), sym);
    let (ys, outs) = mirror_series(&state, &sym, 5).unwrap();
    for i in 1..5 {
        assert_eq!(ys.sample(i), ys.sample(0));
        assert_eq!(outs.sample(i), outs.sample(0));
    }
}

#[test]
fn zero_noise_reproduces_the_center_and_outputs_stay_in_range() {
    let state = state();
    let x = toy_inputs(&state, 1);
    let (ys, outs) = noise_series(&state, &x, &[0.0, 0.5, 2.0], 4).unwrap();
    let y = derive_y(&state, &x).unwrap();
    assert_eq!(ys.sample(0), y);
    assert_eq!(outs.sample(0), center(&state, &y).unwrap());
    assert!(outs.data().iter().all(|v| (-1.0..=1.0).contains(v)));
    assert!(noise_series(&state, &x, &[0.2, 0.1], 4).is_err());

    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("n.ppm").display().to_string();
    assert_ok(&lag(&["noise", "--checkpoint", &checkpoint(), "--toy", "1", "--amplitudes", "0,0.1,0.4", "-o", &out]));
    assert_eq!(lag(&["noise", "--checkpoint", &checkpoint(), "--toy", "1", "--amplitudes", "0.4,0.1", "-o", &out]).status.code(), Some(1));
}

#[test]
fn written_grids_read_back_within_quantization() {
    let state = state();
    let x = toy_inputs(&state, 2);
    let grid = sample_grid(&state, &x, 1, 3).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("g.ppm");
    write_image(&path, &grid).unwrap();
    let back = read_image::<Real>(&path).unwrap();
    assert_eq!(back.shape(), grid.shape());
    let worst = back.data().iter().zip(grid.data()).map(|(a, b)| (a - b).abs()).fold(0.0, Real::max);
    assert!(worst <= 1.0 / 255.0 + 1e-6, "{worst}");
}

#[test]
fn diversity_prints_a_median_per_factor() {
    let dir = tempfile::tempdir().unwrap();
    let details = dir.path().join("d.tsv");
    let model = format!("4={}", checkpoint());
    let d = details.display().to_string();
    let out = lag(&["diversity", "--model", &model, "--toy", "3", "-k", "3", "--details", &d]);
    assert_ok(&out);
    let table = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines[0], "factor\tmedian_diversity");
    assert!(lines[1].starts_with("4\t"));
    assert!(lines[1].split('\t').nth(1).unwrap().parse::<f64>().unwrap() >= 0.0);
    assert_eq!(fs::read_to_string(&details).unwrap().lines().count(), 4);
}

#[test]
fn gradcheck_passes_lists_each_primitive_once_and_catches_corruption() {
    let ok = lag(&["gradcheck", "--composites", "10"]);
    assert_ok(&ok);
    let report = String::from_utf8(ok.stdout).unwrap();
    for kind in lag_core::diffcore::gradcheck::primitive_catalog() {
        let hits = report.lines().filter(|l| l.split_whitespace().next() == Some(kind.name())).count();
        assert_eq!(hits, 1, "{}", kind.name());
    }
    let bad = lag(&["gradcheck", "--composites", "0", "--corrupt", "conv2d"]);
    assert_eq!(bad.status.code(), Some(2));
    assert!(String::from_utf8(bad.stdout).unwrap().contains("FAIL"));
}
