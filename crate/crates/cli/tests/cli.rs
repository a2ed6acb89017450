use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use devscore::explain::{explain_bag, pixel_auc};
use devscore::io::{load_checkpoint, read_bags, save_checkpoint, write_bags, Checkpoint, CheckpointMeta};
use devscore::network::score_rows;
use devscore::trainer::inference_reference;
use devscore::{init_params, score_to_probability, Bag, LossKind, PriorConfig, TrainConfig};
use tempfile::TempDir;

fn devscore(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_devscore"))
        .args(args)
        .env_remove("DEVSCORE_OUT")
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = devscore(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn code(args: &[&str]) -> i32 {
    devscore(args).status.code().unwrap()
}

fn s(p: &Path) -> String {
    p.display().to_string()
}

fn synth_tabular(dir: &Path, extra: &[&str]) -> PathBuf {
    let data = dir.join("data");
    let mut args = vec!["synth", "--kind", "tabular", "--seed", "4"];
    let out = s(&data);
    args.extend_from_slice(extra);
    args.extend(["--out", &out]);
    ok(&args);
    data
}

fn quick_train(data: &Path, out: &Path, extra: &[&str]) -> PathBuf {
    let (d, o) = (s(data), s(out));
    let mut args = vec!["train", "--data", &d, "--out", &o, "--epochs", "3", "--iters-per-epoch", "5"];
    args.extend_from_slice(extra);
    ok(&args);
    out.join("model.ckpt")
}

#[test]
fn synth_is_deterministic() {
    let dir = TempDir::new().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let first = ok(&["synth", "--kind", "tabular", "--seed", "9", "--out", &s(&a)]);
    let second = ok(&["synth", "--kind", "tabular", "--seed", "9", "--out", &s(&b)]);
    assert_eq!(first, second);
    for f in ["train_normal.jsonl", "train_anomaly.jsonl", "test.jsonl"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    assert!(a.join("synth.manifest.json").exists());
}

#[test]
fn texture_split_sizes_and_masks() {
    let dir = TempDir::new().unwrap();
    let data = dir.path().join("tx");
    let stdout = ok(&["synth", "--kind", "texture", "--seed", "3", "--out", &s(&data)]);
    assert!(stdout.contains("train_normal: 210"), "{stdout}");
    let normal = read_bags(&data.join("train_normal.jsonl")).unwrap();
    let labeled = read_bags(&data.join("train_anomaly.jsonl")).unwrap();
    let test = read_bags(&data.join("test.jsonl")).unwrap();
    assert_eq!((normal.len(), labeled.len(), test.len()), (210, 10, 200));
    assert!(test.iter().all(|b| b.len() == 49 && b.dim() == 64));
    assert!(test.iter().filter(|b| b.is_anomaly()).all(|b| b.mask.as_ref().is_some_and(|m| m.count() > 0)));
}

#[test]
fn open_set_manifest_and_test_classes() {
    let dir = TempDir::new().unwrap();
    let data = synth_tabular(dir.path(), &["--open-set-class", "2"]);
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(data.join("synth.manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["config"]["split"]["mode"]["seen_class"], 2, "{manifest}");
    let test = read_bags(&data.join("test.jsonl")).unwrap();
    assert!(test.iter().all(|b| b.class_id != Some(2)));
    assert!(read_bags(&data.join("train_anomaly.jsonl")).unwrap().iter().all(|b| b.class_id == Some(2)));
}

#[test]
fn default_training_logs_every_iteration() {
    let dir = TempDir::new().unwrap();
    let data = synth_tabular(dir.path(), &[]);
    let model = dir.path().join("model");
    let stdout = ok(&["train", "--data", &s(&data), "--out", &s(&model)]);
    assert!(stdout.contains("iterations: 1000"), "{stdout}");
    let history = fs::read_to_string(model.join("history.csv")).unwrap();
    assert_eq!(history.lines().count(), 1001);
    assert!(history.starts_with("iteration,loss\n"));
    assert!(model.join("train.manifest.json").exists());
}

#[test]
fn focal_loss_is_recorded_in_the_checkpoint() {
    let dir = TempDir::new().unwrap();
    let data = synth_tabular(dir.path(), &[]);
    let ckpt = quick_train(&data, &dir.path().join("m"), &["--loss", "focal", "--focal-gamma", "1.5"]);
    let loaded = load_checkpoint(&ckpt).unwrap();
    assert_eq!(loaded.meta.loss, LossKind::Focal { gamma: 1.5, alpha: 0.5 });
    assert_eq!(code(&["train", "--data", &s(&data), "--out", &s(&dir.path().join("x")), "--focal-alpha", "0.3"]), 1);
}

#[test]
fn zero_epochs_keeps_the_initialization() {
    let dir = TempDir::new().unwrap();
    let data = synth_tabular(dir.path(), &[]);
    let ckpt = quick_train(&data, &dir.path().join("m"), &["--epochs", "0", "--seed", "21"]);
    let loaded = load_checkpoint(&ckpt).unwrap();
    let cfg = TrainConfig { seed: 21, ..Default::default() };
    assert_eq!(loaded.params, init_params(&cfg.arch(8), 21).unwrap());
    assert_eq!(loaded.meta.reference, inference_reference(&cfg).unwrap());
}

#[test]
fn score_columns_are_consistent() {
    let dir = TempDir::new().unwrap();
    let data = synth_tabular(dir.path(), &[]);
    let ckpt = quick_train(&data, &dir.path().join("m"), &[]);
    let out = dir.path().join("scores");
    ok(&["score", "--checkpoint", &s(&ckpt), "--data", &s(&data.join("test.jsonl")), "--out", &s(&out)]);
    let csv = fs::read_to_string(out.join("scores.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("id,y,phi_k,dev,probability"));
    let model = load_checkpoint(&ckpt).unwrap();
    let standard = PriorConfig { mu: 0.0, sigma: 1.0, ..Default::default() };
    let mut rows = 0;
    for line in lines {
        let f: Vec<f64> = line.split(',').map(|v| v.parse().unwrap()).collect();
        let dev = (f[2] - model.meta.reference.mu_r) / model.meta.reference.sigma_r;
        assert!((f[3] - dev).abs() <= 1e-12 * dev.abs().max(1.0), "{line}");
        assert_eq!(f[4], score_to_probability(f[3], &standard));
        assert!((0.0..=1.0).contains(&f[4]));
        rows += 1;
    }
    assert_eq!(rows, read_bags(&data.join("test.jsonl")).unwrap().len());
}

#[test]
fn eval_on_a_separable_fixture() {
    let dir = TempDir::new().unwrap();
    let params = init_params(&[1, 1], 0).unwrap();
    let s0 = score_rows(&[vec![0.0], vec![1.0]], &params).unwrap();
    let step = if s0[1] > s0[0] { 1.0 } else { -1.0 };
    let bags: Vec<Bag> = (0..40)
        .map(|i| {
            let y = u8::from(i >= 30);
            let x = f64::from(y) * 10.0 * step + (i % 5) as f64 * 0.1;
            Bag::new(i, y, (y == 1).then_some(0), vec![vec![x]]).unwrap()
        })
        .collect();
    let data = dir.path().join("fixture.jsonl");
    write_bags(&data, &bags).unwrap();
    let cfg = TrainConfig::default();
    let ckpt = dir.path().join("fixture.ckpt");
    let meta = CheckpointMeta {
        seed: 0,
        mil: cfg.mil,
        prior: cfg.prior,
        loss: cfg.loss,
        reference: inference_reference(&cfg).unwrap(),
    };
    save_checkpoint(&ckpt, &Checkpoint { params, meta }).unwrap();
    let out = dir.path().join("eval");
    let stdout = ok(&["eval", "--checkpoint", &s(&ckpt), "--data", &s(&data), "--out", &s(&out)]);
    assert!(stdout.contains("auc_roc: 1.000000"), "{stdout}");
    let report = fs::read_to_string(out.join("report.txt")).unwrap();
    assert_eq!(report, stdout);
    assert_eq!(fs::read_to_string(out.join("report.csv")).unwrap().lines().count(), 202);
}

#[test]
fn explain_matches_recomputation() {
    let dir = TempDir::new().unwrap();
    let data = dir.path().join("tx");
    ok(&["synth", "--kind", "texture", "--seed", "1", "--n-normal", "40", "--n-per-defect", "6", "--out", &s(&data)]);
    let ckpt = quick_train(&data, &dir.path().join("m"), &[]);
    let test = read_bags(&data.join("test.jsonl")).unwrap();
    let bag = test.iter().find(|b| b.is_anomaly()).unwrap();
    let out = dir.path().join("ex");
    let id = bag.id.to_string();
    let stdout = ok(&["explain", "--checkpoint", &s(&ckpt), "--data", &s(&data.join("test.jsonl")), "--image-id", &id, "--out", &s(&out)]);

    let model = load_checkpoint(&ckpt).unwrap();
    let map = explain_bag(bag, &model.params, model.meta.mil.k_fraction).unwrap();
    let auc = pixel_auc(&map, bag.mask.as_ref().unwrap()).unwrap();
    let printed: f64 = stdout
        .lines()
        .find_map(|l| l.strip_prefix("pixel_auc: "))
        .unwrap()
        .parse()
        .unwrap();
    assert_eq!(printed, auc);
    assert!(out.join(format!("saliency_{id}.pgm")).exists());
    let csv = fs::read_to_string(out.join(format!("saliency_{id}.csv"))).unwrap();
    assert_eq!(csv.lines().count(), 1 + 32 * 32);
}

#[test]
fn explain_rejects_tabular_bags() {
    let dir = TempDir::new().unwrap();
    let data = synth_tabular(dir.path(), &[]);
    let ckpt = quick_train(&data, &dir.path().join("m"), &[]);
    let test = read_bags(&data.join("test.jsonl")).unwrap();
    let out = devscore(&[
        "explain", "--checkpoint", &s(&ckpt), "--data", &s(&data.join("test.jsonl")),
        "--image-id", &test[0].id.to_string(), "--out", &s(&dir.path().join("ex")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("score alone"));
}

#[test]
fn exit_codes() {
    let dir = TempDir::new().unwrap();
    assert_eq!(code(&[]), 1);
    assert_eq!(code(&["synth"]), 1);
    assert_eq!(code(&["synth", "--kind", "tabular", "--stride", "2", "--out", &s(&dir.path().join("u"))]), 1);
    assert_eq!(code(&["synth", "--kind", "tabular", "--contamination", "0.5", "--out", &s(&dir.path().join("u"))]), 2);
    assert_eq!(code(&["--help"]), 0);
    assert_eq!(code(&["train", "--data", &s(&dir.path().join("missing")), "--out", &s(&dir.path().join("m"))]), 2);

    let bad = dir.path().join("bad.jsonl");
    fs::write(&bad, "{\"id\": 1, \"y\": 0, \"instances\": [[1.0]]}\n{\"id\": 2,\n").unwrap();
    let out = devscore(&["score", "--checkpoint", &s(&bad), "--data", &s(&bad), "--out", &s(&dir.path().join("s"))]);
    assert_eq!(out.status.code(), Some(2));

    let data = synth_tabular(dir.path(), &[]);
    let model = dir.path().join("blown");
    let out = devscore(&["train", "--data", &s(&data), "--out", &s(&model), "--learning-rate", "1e300"]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    let saved = load_checkpoint(&model.join("model.ckpt")).unwrap();
    assert!(saved.params.layers().iter().all(|l| l.weight.data().iter().all(|w| w.is_finite())));
}

#[test]
fn manifest_replay_reproduces_outputs() {
    let dir = TempDir::new().unwrap();
    let data = synth_tabular(dir.path(), &[]);
    let model = dir.path().join("m");
    quick_train(&data, &model, &["--seed", "5"]);
    let first = fs::read(model.join("model.ckpt")).unwrap();
    fs::remove_file(model.join("model.ckpt")).unwrap();
    ok(&["--manifest", &s(&model.join("train.manifest.json"))]);
    assert_eq!(fs::read(model.join("model.ckpt")).unwrap(), first);
}

#[test]
fn output_directory_from_environment() {
    let dir = TempDir::new().unwrap();
    let target = dir.path().join("from_env");
    let out = Command::new(env!("CARGO_BIN_EXE_devscore"))
        .args(["synth", "--kind", "tabular"])
        .env("DEVSCORE_OUT", &target)
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(target.join("test.jsonl").exists());
    let m: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(target.join("synth.manifest.json")).unwrap()).unwrap();
    assert_eq!(m["argv"].as_array().unwrap().last().unwrap(), &serde_json::json!(s(&target)));
}
