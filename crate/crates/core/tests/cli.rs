use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = r#"
[generator]
windows_per_count = 24

[model]
channels = 12
snn_input = 16
snn_hidden = 8

[training]
batch_size = 16
max_epochs = 2
seed = 4
"#;

fn lse(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lse"))
        .args(args)
        .env("RUST_LOG", "warn")
        .env("LSE_THREADS", "1")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = lse(args);
    assert!(
        out.status.success(),
        "lse {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn small_config(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("small.toml");
    fs::write(&path, SMALL).unwrap();
    path
}

#[test]
fn generate_train_eval_round() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path());
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    for run in [&a, &b] {
        ok(&["--config", s(&cfg), "--run-dir", s(run), "generate"]);
        ok(&["--config", s(&cfg), "--run-dir", s(run), "train"]);
    }
    assert_eq!(fs::read(a.join("dataset.bin")).unwrap(), fs::read(b.join("dataset.bin")).unwrap());
    let log_a = fs::read(a.join("train_log.csv")).unwrap();
    assert_eq!(log_a, fs::read(b.join("train_log.csv")).unwrap());
    let text = String::from_utf8(log_a).unwrap();
    assert!(text.starts_with("epoch,split,L1,L2,L3,omega,total"));
    assert_eq!(text.lines().count(), 5);

    // Rerunning from the resolved config reproduces the log.
    let c = tmp.path().join("c");
    fs::create_dir_all(&c).unwrap();
    for f in ["dataset.json", "dataset.bin"] {
        fs::copy(a.join(f), c.join(f)).unwrap();
    }
    ok(&["--config", s(&a.join("config.toml")), "--run-dir", s(&c), "train"]);
    assert_eq!(fs::read(a.join("train_log.csv")).unwrap(), fs::read(c.join("train_log.csv")).unwrap());

    ok(&["--config", s(&cfg), "--run-dir", s(&a), "eval", "--checkpoint", "best.ckpt"]);
    let metrics = fs::read_to_string(a.join("metrics.csv")).unwrap();
    let mut lines = metrics.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    for col in ["method", "n_windows", "rec_rmse_mean", "dft_rmse_mean", "sparsity_mean"] {
        assert!(header.contains(&col), "missing column {col} in {header:?}");
    }
    let methods: Vec<&str> = lines.map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(methods, ["LSE", "TBR", "SF", "MW"]);
    assert!(a.join("metrics_lse.json").exists());
    assert!(a.join("config.toml").exists());
}

#[test]
fn gridsearch_writes_table_and_optimum() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path());
    let run = tmp.path().join("g");
    ok(&["--config", s(&cfg), "--run-dir", s(&run), "generate"]);
    ok(&["--config", s(&cfg), "--run-dir", s(&run), "gridsearch"]);
    let table = fs::read_to_string(run.join("gridsearch.csv")).unwrap();
    assert_eq!(table.lines().count(), 1 + 10 + 6 + 36);
    assert_eq!(table.lines().filter(|l| l.ends_with(",1")).count(), 3);
    let best: serde_json::Value = serde_json::from_str(&fs::read_to_string(run.join("gridsearch_optimum.json")).unwrap()).unwrap();
    assert_eq!(best.as_array().unwrap().len(), 3);
}

#[test]
fn unknown_config_key_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.toml");
    fs::write(&cfg, "[training]\nlearning_rat = 0.1\n").unwrap();
    let out = lse(&["--config", s(&cfg), "--run-dir", s(tmp.path()), "generate"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("learning_rat"));
}

#[test]
fn missing_dataset_points_at_generate() {
    let tmp = tempfile::tempdir().unwrap();
    let out = lse(&["--run-dir", s(tmp.path()), "train"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("lse generate"));
}

#[test]
fn checkpoint_version_mismatch_fails() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path());
    let run = tmp.path().join("v");
    ok(&["--config", s(&cfg), "--run-dir", s(&run), "generate"]);
    ok(&["--config", s(&cfg), "--run-dir", s(&run), "train", "--epochs", "1"]);
    let manifest = run.join("best.ckpt.json");
    let text = fs::read_to_string(&manifest).unwrap().replacen("\"version\": 1", "\"version\": 7", 1);
    fs::write(&manifest, text).unwrap();
    let out = lse(&["--config", s(&cfg), "--run-dir", s(&run), "eval", "--checkpoint", "best.ckpt"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("version 7"));
}

#[test]
fn bad_precision_flag_is_a_usage_error() {
    let out = lse(&["train", "--precision", "f16"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn shipped_presets_load() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let reference = lse::config::RunConfig::load(&root.join("reference.toml")).unwrap();
    assert_eq!(reference, lse::config::RunConfig::default());
    let ci = lse::config::RunConfig::load(&root.join("ci.toml")).unwrap();
    assert_eq!(ci.generator.total_windows(), 3000);
    assert_eq!(ci.training.max_epochs, 30);
}
