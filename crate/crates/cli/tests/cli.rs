use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use hadanet::analysis::{memory_saving, LayerParams, CORRELATION_CSV_HEADER, ANGLE_CSV_HEADER};
use hadanet::bench::BENCH_CSV_HEADER;
use hadanet::network::{load_model, save_model_with, ModelStorage, METRICS_CSV_HEADER};
use serde_json::Value;
use tempfile::TempDir;

fn hadanet(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hadanet"))
        .args(args)
        .current_dir(dir)
        .env_remove("HADANET_DATA_DIR")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const SMALL: &str = "\
synthetic = true
synthetic_train = 300
synthetic_test = 120
epochs = 2
batch_size = 32
conv1 = 4
conv2 = 8
hidden = 32
beta_w = 4
beta_a = 4
";

/// A temp dir holding `small.cfg` and a model trained from it.
fn trained(extra: &[&str]) -> (TempDir, PathBuf) {
    let dir = TempDir::new().unwrap();
    fs::write(dir.path().join("small.cfg"), SMALL).unwrap();
    let mut args = vec!["train", "--config", "small.cfg"];
    args.extend_from_slice(extra);
    let o = hadanet(dir.path(), &args);
    assert!(o.status.success(), "{}", stderr(&o));
    let model = dir.path().join("model.hdnt");
    (dir, model)
}

fn acc_line(o: &Output) -> String {
    stdout(o).lines().find(|l| l.starts_with("test_acc=")).expect("accuracy line").to_string()
}

#[test]
fn train_writes_model_and_metrics_and_eval_agrees() {
    let (dir, model) = trained(&[]);
    assert!(model.exists());
    let metrics = fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    let lines: Vec<&str> = metrics.lines().collect();
    assert_eq!(lines[0], METRICS_CSV_HEADER);
    assert_eq!(lines.len(), 3);
    let last_test: f64 = lines[2].split(',').nth(4).unwrap().parse().unwrap();

    let eval = hadanet(dir.path(), &["eval", "--model", "model.hdnt", "--config", "small.cfg"]);
    assert!(eval.status.success(), "{}", stderr(&eval));
    let line = acc_line(&eval);
    assert_eq!(line, format!("test_acc={last_test:.4}"));

    let train_out = hadanet(dir.path(), &["train", "--config", "small.cfg", "--model", "again.hdnt"]);
    assert_eq!(acc_line(&train_out), line);
    assert_eq!(fs::read(&model).unwrap(), fs::read(dir.path().join("again.hdnt")).unwrap());
}

#[test]
fn eval_is_batch_invariant() {
    let (dir, _) = trained(&[]);
    let run = |b: &str| acc_line(&hadanet(dir.path(), &["eval", "--model", "model.hdnt", "--config", "small.cfg", "--batch", b]));
    assert_eq!(run("1"), run("256"));
    let packed = hadanet(dir.path(), &["eval", "--model", "model.hdnt", "--config", "small.cfg", "--packed"]);
    assert!(packed.status.success(), "{}", stderr(&packed));
}

#[test]
fn beta_flags_override_the_config() {
    let (dir, _) = trained(&["--beta-w", "4", "--beta-a", "1", "--epochs", "1"]);
    let o = hadanet(dir.path(), &["inspect", "--model", "model.hdnt", "--json"]);
    assert!(o.status.success());
    let v: Value = serde_json::from_str(&stdout(&o)).unwrap();
    let hada: Vec<(u64, u64)> = v["layers"]
        .as_array()
        .unwrap()
        .iter()
        .filter(|l| !l["beta_w"].is_null())
        .map(|l| (l["beta_w"].as_u64().unwrap(), l["beta_a"].as_u64().unwrap()))
        .collect();
    assert_eq!(hada, vec![(1, 1), (4, 1), (4, 1), (1, 1)]);
}

#[test]
fn inspect_lists_every_layer_and_totals_match_the_files() {
    let (dir, model) = trained(&["--epochs", "1"]);
    let net = load_model(&model).unwrap();
    let text = hadanet(dir.path(), &["inspect", "--model", "model.hdnt"]);
    assert!(text.status.success());
    let out = stdout(&text);
    // Input line, column header, one line per layer, total.
    assert_eq!(out.lines().count(), 2 + net.layers().len() + 1);
    assert!(out.lines().last().unwrap().starts_with("total "));

    let json: Value = serde_json::from_str(&stdout(&hadanet(dir.path(), &["inspect", "--model", "model.hdnt", "--json"])))
        .unwrap();
    let dense_path = dir.path().join("dense.hdnt");
    save_model_with(&net, &dense_path, ModelStorage::Dense).unwrap();
    assert_eq!(json["packed_file_bytes"].as_u64().unwrap(), fs::metadata(&model).unwrap().len());
    assert_eq!(json["dense_file_bytes"].as_u64().unwrap(), fs::metadata(&dense_path).unwrap().len());
}

#[test]
fn inspect_savings_match_the_memory_accounting() {
    // Fan-ins of 1600 and 64 are whole words and whole blocks, so packed
    // storage has no padding and should equal the accounting formula.
    let dir = TempDir::new().unwrap();
    let cfg = "synthetic = true\nsynthetic_train = 64\nsynthetic_test = 32\nepochs = 1\n\
               conv1 = 64\nconv2 = 4\nhidden = 8\nbeta_w = 16\n";
    fs::write(dir.path().join("m.cfg"), cfg).unwrap();
    assert!(hadanet(dir.path(), &["train", "--config", "m.cfg"]).status.success());
    let json: Value =
        serde_json::from_str(&stdout(&hadanet(dir.path(), &["inspect", "--model", "model.hdnt", "--json"]))).unwrap();
    let mut checked = 0;
    for l in json["layers"].as_array().unwrap() {
        if l["beta_w"].as_u64() != Some(16) {
            continue;
        }
        let shape: Vec<u64> = l["weight_shape"].as_array().unwrap().iter().map(|d| d.as_u64().unwrap()).collect();
        let params: u64 = shape.iter().product();
        let oracle = memory_saving(&[LayerParams::new("w", params, 16, true)], 32).unwrap();
        let saved = l["dense_bytes"].as_u64().unwrap() - l["stored_bytes"].as_u64().unwrap();
        // Dense weights carry a u32 length, packed ones a 12-byte header.
        let expected = oracle.dense_bytes - oracle.packed_bytes + 4.0 - 12.0;
        assert_eq!(saved as f64, expected, "{l}");
        checked += 1;
    }
    assert_eq!(checked, 2);
}

#[test]
fn missing_dataset_exits_3_with_the_path() {
    let dir = TempDir::new().unwrap();
    let o = hadanet(dir.path(), &["train", "--data-dir", "/no/such/mnist", "--epochs", "1"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("/no/such/mnist"));
    let o = hadanet(dir.path(), &["train", "--epochs", "1"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("HADANET_DATA_DIR"));
}

#[test]
fn bad_config_exits_2() {
    let dir = TempDir::new().unwrap();
    fs::write(dir.path().join("bad.cfg"), "epochs = 0\n").unwrap();
    assert_eq!(hadanet(dir.path(), &["train", "--config", "bad.cfg"]).status.code(), Some(2));
    fs::write(dir.path().join("typo.cfg"), "epoch = 3\n").unwrap();
    let o = hadanet(dir.path(), &["train", "--config", "typo.cfg"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line 1"));
    assert_eq!(hadanet(dir.path(), &["train", "--config", "absent.cfg"]).status.code(), Some(2));
    assert_eq!(hadanet(dir.path(), &["train", "--synthetic", "--beta-w", "zero"]).status.code(), Some(2));
}

#[test]
fn divergence_exits_4() {
    let dir = TempDir::new().unwrap();
    fs::write(dir.path().join("hot.cfg"), format!("{SMALL}lr = 1e30\n")).unwrap();
    let o = hadanet(dir.path(), &["train", "--config", "hot.cfg"]);
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));
    assert!(stderr(&o).contains("diverged"));
}

#[test]
fn corrupt_models_exit_5() {
    let (dir, model) = trained(&["--epochs", "1"]);
    let bytes = fs::read(&model).unwrap();
    fs::write(dir.path().join("short.hdnt"), &bytes[..bytes.len() / 2]).unwrap();
    for cmd in [
        vec!["eval", "--model", "short.hdnt", "--config", "small.cfg"],
        vec!["inspect", "--model", "short.hdnt"],
        vec!["correlate", "--model", "short.hdnt", "--config", "small.cfg"],
        vec!["eval", "--model", "absent.hdnt", "--config", "small.cfg"],
    ] {
        assert_eq!(hadanet(dir.path(), &cmd).status.code(), Some(5), "{cmd:?}");
    }
}

#[test]
fn bench_emits_two_rows_per_size() {
    let dir = TempDir::new().unwrap();
    let o = hadanet(dir.path(), &["bench", "--sizes", "256,512,1024", "--beta", "16", "--repeats", "3", "--out", "b.csv"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = fs::read_to_string(dir.path().join("b.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], BENCH_CSV_HEADER);
    assert_eq!(lines.len(), 1 + 6);
    let at_1024 = lines.iter().find(|l| l.starts_with("1024,16,xHBNN")).unwrap();
    let speedup: f64 = at_1024.split(',').nth(4).unwrap().parse().unwrap();
    assert!(speedup > 1.0, "{at_1024}");
}

#[test]
fn single_repeat_is_accepted_with_a_warning() {
    let dir = TempDir::new().unwrap();
    let o = hadanet(dir.path(), &["bench", "--sizes", "128", "--repeats", "1"]);
    assert!(o.status.success());
    assert!(stderr(&o).contains("warning"));
    let meta = fs::read_to_string(dir.path().join("bench.csv.meta")).unwrap();
    assert!(meta.lines().any(|l| l.starts_with("warning=")));
}

#[test]
fn angle_writes_its_csv() {
    let dir = TempDir::new().unwrap();
    let o = hadanet(dir.path(), &["angle", "--betas", "1,4,16", "--n", "512", "--trials", "10"]);
    assert!(o.status.success());
    let csv = fs::read_to_string(dir.path().join("angle.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], ANGLE_CSV_HEADER);
    assert_eq!(lines.len(), 4);
    assert!(lines[1].starts_with("1,512,10,0.000000,"));
    assert_eq!(hadanet(dir.path(), &["angle", "--trials", "0"]).status.code(), Some(6));
}

#[test]
fn memsize_reports_the_resnet18_ratio() {
    let dir = TempDir::new().unwrap();
    let o = hadanet(dir.path(), &["memsize", "--arch", "resnet18", "--beta-w", "16", "--out", "mem.csv"]);
    assert!(o.status.success());
    let ratio: f64 = stdout(&o)
        .lines()
        .find_map(|l| l.strip_prefix("ratio="))
        .unwrap()
        .parse()
        .unwrap();
    assert!((ratio - 7.43).abs() <= 0.1 * 7.43, "{ratio}");
    assert!(fs::read_to_string(dir.path().join("mem.csv")).unwrap().lines().last().unwrap().starts_with("total,"));
    assert_eq!(hadanet(dir.path(), &["memsize", "--arch", "vgg"]).status.code(), Some(6));
}

#[test]
fn correlate_covers_the_grid() {
    let (dir, _) = trained(&["--epochs", "1"]);
    let o = hadanet(
        dir.path(),
        &["correlate", "--model", "model.hdnt", "--config", "small.cfg", "--grid", "1..8", "--samples", "32"],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = fs::read_to_string(dir.path().join("correlation.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], CORRELATION_CSV_HEADER);
    // 8 × 8 cells, two inner layers each.
    assert_eq!(lines.len(), 1 + 128);
    assert_eq!(stdout(&o).lines().count(), 2);
    let bad = hadanet(dir.path(), &["correlate", "--model", "model.hdnt", "--config", "small.cfg", "--grid", "x"]);
    assert_eq!(bad.status.code(), Some(2));
}
