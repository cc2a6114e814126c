use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use bootsc::data::Dataset;

const SMALL: &str = "batch_size = 32\nhidden = 16\nembed_dim = 4\nepochs = 4\nrestart_period = 4\n";

fn bootsc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bootsc"))
        .args(args)
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = bootsc(args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn keys(report: &str) -> Vec<String> {
    report
        .split_whitespace()
        .filter_map(|t| t.split_once('=').map(|(k, _)| k.to_string()))
        .collect()
}

fn moons(dir: &Path, n: usize) -> std::path::PathBuf {
    let csv = dir.join("moons.csv");
    ok(&[
        "gen-dataset",
        "--kind",
        "moons",
        "--n",
        &n.to_string(),
        "--seed",
        "3",
        "--out",
        p(&csv),
    ]);
    csv
}

#[test]
fn gen_dataset_is_reproducible_and_balanced() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b, c) = (
        dir.path().join("a.csv"),
        dir.path().join("b.csv"),
        dir.path().join("c.csv"),
    );
    for (out, seed) in [(&a, "1"), (&b, "1"), (&c, "2")] {
        ok(&[
            "gen-dataset",
            "--kind",
            "moons",
            "--n",
            "1000",
            "--seed",
            seed,
            "--out",
            p(out),
        ]);
    }
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    assert_ne!(fs::read(&a).unwrap(), fs::read(&c).unwrap());

    let ds = Dataset::load(&a).unwrap();
    assert_eq!(ds.len(), 1000);
    assert_eq!(ds.dim(), 2);
    let labels = ds.labels.as_ref().unwrap();
    assert_eq!(labels.iter().filter(|&&l| l == 0).count(), 500);
    assert_eq!(labels.iter().filter(|&&l| l == 1).count(), 500);

    // save after load reproduces the file byte for byte
    let again = dir.path().join("again.csv");
    ds.save(&again, &[]).unwrap();
    assert_eq!(fs::read(&a).unwrap(), fs::read(&again).unwrap());
    assert_eq!(Dataset::load(&again).unwrap(), ds);
}

#[test]
fn usage_errors_exit_with_one() {
    let out = bootsc(&["train", "--no-such-flag"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));

    let out = bootsc(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(1));

    assert_eq!(bootsc(&["--help"]).status.code(), Some(0));

    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.csv");
    let out = bootsc(&["train", "--dataset", p(&missing), "--out", p(dir.path())]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing.csv"));

    let csv = moons(dir.path(), 64);
    let out = bootsc(&[
        "eval",
        "--checkpoint",
        p(&missing),
        "--dataset",
        p(&csv),
        "--out",
        p(dir.path()),
    ]);
    assert_eq!(out.status.code(), Some(1));

    let bad = dir.path().join("bad.conf");
    fs::write(&bad, "learning_rate = 3\n").unwrap();
    let out = bootsc(&[
        "train",
        "--config",
        p(&bad),
        "--dataset",
        p(&csv),
        "--out",
        p(dir.path()),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("learning_rate"));
}

#[test]
fn diverging_training_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let csv = moons(dir.path(), 128);
    let conf = dir.path().join("hot.conf");
    fs::write(&conf, format!("{SMALL}base_lr = 1e100\n")).unwrap();
    let out = bootsc(&[
        "train",
        "--config",
        p(&conf),
        "--dataset",
        p(&csv),
        "--out",
        p(&dir.path().join("run")),
    ]);
    assert_eq!(
        out.status.code(),
        Some(2),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn train_eval_and_baselines_share_the_report_format() {
    let dir = tempfile::tempdir().unwrap();
    let csv = moons(dir.path(), 128);
    let conf = dir.path().join("small.conf");
    fs::write(&conf, SMALL).unwrap();
    let run = dir.path().join("run");
    ok(&[
        "train",
        "--config",
        p(&conf),
        "--dataset",
        p(&csv),
        "--out",
        p(&run),
    ]);
    for f in [
        "checkpoint.bin",
        "history.txt",
        "predictions.txt",
        "report.txt",
        "manifest.txt",
    ] {
        assert!(run.join(f).exists(), "{f}");
    }
    let history = fs::read_to_string(run.join("history.txt")).unwrap();
    assert_eq!(history.lines().count(), 4);
    let manifest = fs::read_to_string(run.join("manifest.txt")).unwrap();
    assert!(manifest
        .lines()
        .any(|l| l.starts_with("dataset_sha256=") && l.len() == 15 + 64));
    assert!(manifest.contains("config.epochs=4"));

    let ev = dir.path().join("eval");
    ok(&[
        "eval",
        "--checkpoint",
        p(&run.join("checkpoint.bin")),
        "--dataset",
        p(&csv),
        "--out",
        p(&ev),
    ]);
    assert_eq!(
        fs::read(run.join("report.txt")).unwrap(),
        fs::read(ev.join("report.txt")).unwrap()
    );
    assert_eq!(
        fs::read(run.join("predictions.txt")).unwrap(),
        fs::read(ev.join("predictions.txt")).unwrap()
    );

    let train_report = fs::read_to_string(run.join("report.txt")).unwrap();
    let train_keys = keys(train_report.lines().next().unwrap());
    assert_eq!(train_keys, ["nmi", "acc", "ari", "n", "k_true", "k_pred"]);
    for method in ["kmeans", "spectral"] {
        let out = dir.path().join(method);
        ok(&[
            "baseline",
            method,
            "--dataset",
            p(&csv),
            "--out",
            p(&out),
            "--restarts",
            "3",
        ]);
        let text = fs::read_to_string(out.join("report.txt")).unwrap();
        assert_eq!(keys(text.lines().next().unwrap()), train_keys, "{method}");
        assert_eq!(
            fs::read_to_string(out.join("predictions.txt"))
                .unwrap()
                .lines()
                .count(),
            128
        );
    }
}

#[test]
fn resumed_training_matches_an_uninterrupted_run() {
    let dir = tempfile::tempdir().unwrap();
    let csv = moons(dir.path(), 128);
    let conf = dir.path().join("small.conf");
    fs::write(&conf, SMALL).unwrap();
    let (full, half, rest) = (
        dir.path().join("full"),
        dir.path().join("half"),
        dir.path().join("rest"),
    );
    ok(&[
        "train",
        "--config",
        p(&conf),
        "--dataset",
        p(&csv),
        "--out",
        p(&full),
    ]);
    ok(&[
        "train",
        "--config",
        p(&conf),
        "--dataset",
        p(&csv),
        "--out",
        p(&half),
        "--epochs",
        "2",
    ]);
    ok(&[
        "train",
        "--config",
        p(&conf),
        "--dataset",
        p(&csv),
        "--out",
        p(&rest),
        "--checkpoint",
        p(&half.join("checkpoint.bin")),
    ]);
    for f in [
        "checkpoint.bin",
        "history.txt",
        "predictions.txt",
        "report.txt",
    ] {
        assert_eq!(
            fs::read(full.join(f)).unwrap(),
            fs::read(rest.join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn ot_debug_prints_a_plan() {
    let dir = tempfile::tempdir().unwrap();
    let cost = dir.path().join("cost.csv");
    fs::write(&cost, "c0,c1\n0,1\n1,0\n").unwrap();
    let text = ok(&["ot-debug", "--cost", p(&cost), "--mode", "exact"]);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[3], "objective=0e0");
    let plan: Vec<Vec<f64>> = lines[4..]
        .iter()
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect();
    assert_eq!(plan, [[1.0, 0.0], [0.0, 1.0]]);

    let text = ok(&[
        "ot-debug",
        "--cost",
        p(&cost),
        "--mode",
        "marginal",
        "--eta",
        "0.5",
    ]);
    let row_res: f64 = text
        .lines()
        .next()
        .unwrap()
        .strip_prefix("row_residual=")
        .unwrap()
        .parse()
        .unwrap();
    assert!(row_res <= 1e-9);

    let text = ok(&[
        "ot-debug",
        "--cost",
        p(&cost),
        "--mode",
        "algorithm1",
        "--eta",
        "0.5",
        "--sinkhorn-iters",
        "3",
    ]);
    for l in text.lines().skip(4) {
        let s: f64 = l.split(',').map(|v| v.parse::<f64>().unwrap()).sum();
        assert!((s - 1.0).abs() < 1e-12);
    }

    fs::write(&cost, "0,1\nx,0\n").unwrap();
    assert_eq!(
        bootsc(&["ot-debug", "--cost", p(&cost)]).status.code(),
        Some(1)
    );
}

#[test]
fn ablate_writes_one_line_per_grid_point() {
    let dir = tempfile::tempdir().unwrap();
    let csv = moons(dir.path(), 64);
    let conf = dir.path().join("tiny.conf");
    fs::write(
        &conf,
        "batch_size = 32\nhidden = 8\nembed_dim = 4\nepochs = 1\nrestart_period = 1\n",
    )
    .unwrap();
    let out = dir.path().join("abl");
    ok(&[
        "ablate",
        "--sweep",
        "lambda",
        "--config",
        p(&conf),
        "--dataset",
        p(&csv),
        "--out",
        p(&out),
    ]);
    let text = fs::read_to_string(out.join("ablate_lambda.txt")).unwrap();
    let labels: Vec<&str> = text
        .lines()
        .map(|l| l.split_whitespace().next().unwrap())
        .collect();
    let expected: Vec<String> = bootsc::cli::LAMBDA_GRID
        .iter()
        .map(|v| format!("lambda={v}"))
        .collect();
    assert_eq!(labels, expected);
    assert!(text.lines().all(|l| l.contains(" intensity=")));
}
