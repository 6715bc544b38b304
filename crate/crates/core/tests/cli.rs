mod common;

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn aen(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_aen"))
        .args(args)
        .env("RUST_LOG", "error")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn tiny_config(dir: &Path) -> String {
    let path = dir.join("tiny.conf");
    fs::write(&path, "# small model\nd_emb = 8\nd_hid = 8\nn_head = 2\nmax_epochs = 2\nbatch_size = 8\nseed = 3\n").unwrap();
    path.to_string_lossy().into_owned()
}

#[test]
fn params_prints_default_total() {
    let o = aen(&["params"]);
    assert_eq!(o.status.code(), Some(0));
    let out = stdout(&o);
    assert!(out.lines().any(|l| l.split_whitespace().collect::<Vec<_>>() == ["total", "1175703"]), "{out}");
    assert_eq!(out.lines().count(), 7);
}

#[test]
fn stats_counts_fixture_labels() {
    let data = common::sanity_path();
    let o = aen(&["stats", "--data", data.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(stdout(&o).trim(), "positive 11, neutral 10, negative 11");
}

#[test]
fn train_eval_predict_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let conf = tiny_config(dir.path());
    let data = common::sanity_path();
    let data = data.to_str().unwrap();
    let ckpt = dir.path().join("m.aenc");
    let results = dir.path().join("results.tsv");
    let o = aen(&[
        "train", "--config", &conf, "--train", data, "--eval", data,
        "--out", ckpt.to_str().unwrap(), "--results", results.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let table = fs::read_to_string(&results).unwrap();
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines.len(), 3);
    assert!(lines[0].starts_with("1\t") && lines[1].starts_with("2\t") && lines[2].starts_with("best\t"));
    assert_eq!(lines[0].split('\t').count(), 5);

    let o = aen(&["eval", "--ckpt", ckpt.to_str().unwrap(), "--data", data]);
    assert_eq!(o.status.code(), Some(0));
    let out = stdout(&o);
    assert!(out.starts_with("accuracy ") && out.contains("\nmacro_f1 "), "{out}");

    for (context, target) in [("the pasta was absolutely delicious .", "pasta"), ("the $T$ was cold", "soup")] {
        let o = aen(&["predict", "--ckpt", ckpt.to_str().unwrap(), "--context", context, "--target", target]);
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
        let out = stdout(&o);
        let probs: Vec<f64> = out.lines().take(3).map(|l| l.split_whitespace().nth(1).unwrap().parse().unwrap()).collect();
        assert!((probs.iter().sum::<f64>() - 1.0).abs() < 2e-4);
        assert!(out.lines().nth(3).unwrap().starts_with("label "));
    }
}

#[test]
fn seed_flag_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    let conf = tiny_config(dir.path());
    let data = common::sanity_path();
    let data = data.to_str().unwrap();
    let run = |seed: &str, name: &str| {
        let out = dir.path().join(name);
        let o = aen(&["--seed", seed, "train", "--config", &conf, "--train", data, "--eval", data, "--out", out.to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(0));
        fs::read(out).unwrap()
    };
    assert_eq!(run("5", "a"), run("5", "b"));
    assert_ne!(run("5", "c"), run("6", "d"));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(aen(&["--help"]).status.code(), Some(0));
    assert_eq!(aen(&[]).status.code(), Some(1));
    assert_eq!(aen(&["stats"]).status.code(), Some(1));

    let bad_conf = dir.path().join("bad.conf");
    fs::write(&bad_conf, "learning_rate = 1\n").unwrap();
    assert_eq!(aen(&["params", "--config", bad_conf.to_str().unwrap()]).status.code(), Some(1));

    let bad_data = dir.path().join("bad.txt");
    fs::write(&bad_data, "no placeholder here\nx\n1\n").unwrap();
    let o = aen(&["stats", "--data", bad_data.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains(":1:"));

    let missing = dir.path().join("missing.txt");
    assert_eq!(aen(&["stats", "--data", missing.to_str().unwrap()]).status.code(), Some(2));

    let junk = dir.path().join("junk.aenc");
    fs::write(&junk, b"not a checkpoint").unwrap();
    let data = common::sanity_path();
    assert_eq!(
        aen(&["eval", "--ckpt", junk.to_str().unwrap(), "--data", data.to_str().unwrap()]).status.code(),
        Some(2)
    );
}
