use std::path::Path;
use std::process::{Command, Output};

fn ttyrl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ttyrl"))
        .args(args)
        .env_remove("KATAKOMBA_DATA_DIR")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = ttyrl(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn catalog_lists_38_tasks() {
    let json: serde_json::Value = serde_json::from_str(&ok(&["catalog", "--format", "json"])).unwrap();
    assert_eq!(json.as_array().unwrap().len(), 38);
    assert_eq!(ok(&["catalog", "--format", "csv"]).lines().count(), 39);
}

#[test]
fn exit_codes() {
    assert_eq!(ttyrl(&[]).status.code(), Some(1));
    assert_eq!(ttyrl(&["nonsense"]).status.code(), Some(1));
    assert_eq!(ttyrl(&["train", "--iters", "abc"]).status.code(), Some(1));
    assert_eq!(ttyrl(&["catalog", "--format", "xml"]).status.code(), Some(2));
    assert_eq!(ttyrl(&["store", "inspect", "/nonexistent/file.ktb"]).status.code(), Some(2));
    // No --store and no data dir.
    assert_eq!(ttyrl(&["bench-loader"]).status.code(), Some(2));
}

#[test]
fn help_on_every_subcommand() {
    for sub in [
        vec!["repack"],
        vec!["store", "inspect"],
        vec!["bench-loader"],
        vec!["render"],
        vec!["train"],
        vec!["eval"],
        vec!["report"],
        vec!["catalog"],
        vec!["synth"],
    ] {
        let mut args = sub.clone();
        args.push("--help");
        let out = ok(&args);
        assert!(out.contains("Usage"), "{sub:?}");
    }
    let train_help = ok(&["train", "--help"]);
    for flag in ["--config", "--iters", "--seed", "--store", "--set", "--desk"] {
        assert!(train_help.contains(flag), "{flag}");
    }
}

#[test]
fn pipeline_synth_train_eval_report() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let raw = d.join("raw");
    let store = d.join("synth.ktb");
    ok(&["synth", "--format", "raw", "--episodes", "12", "--horizon", "40", "--out", p(&raw)]);
    let summary: serde_json::Value = serde_json::from_str(&ok(&[
        "repack", "--input", p(&raw), "--task", "mon-hum-neu", "--out", p(&store), "--episodes", "8", "--strata", "2",
    ]))
    .unwrap();
    assert_eq!(summary["selected"], 8);

    let inspect: serde_json::Value = serde_json::from_str(&ok(&["store", "inspect", p(&store)])).unwrap();
    assert_eq!(inspect["index"].as_array().unwrap().len(), 8);

    let png = d.join("obs.png");
    ok(&["render", "--store", p(&store), "--step", "3", "--png", p(&png), "--crop", "9x9"]);
    assert!(std::fs::metadata(&png).unwrap().len() > 0);

    let csv = ok(&["bench-loader", "--store", p(&store), "--shapes", "4x8", "--iters", "3"]);
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 2);
    assert_eq!(lines[0], "variant,in_memory_ms,memmap_ms,compressed_ms");

    let config = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/bc.conf");
    let run = d.join("run");
    let train_args = [
        "train", "--config", p(&config), "--desk", "--hidden", "8", "--iters", "4", "--batch-size", "2", "--seq-len", "4",
        "--store", p(&store), "--seed", "3", "--set", "log_every=1", "--out", p(&run),
    ];
    let t: serde_json::Value = serde_json::from_str(&ok(&train_args)).unwrap();
    assert_eq!(t["iterations"], 4);
    let metrics = std::fs::read_to_string(run.join("metrics.jsonl")).unwrap();
    assert!(metrics.lines().count() >= 4);
    let first = std::fs::read(run.join("final.ktck")).unwrap();
    // Same seed, same checkpoint.
    ok(&train_args);
    assert_eq!(first, std::fs::read(run.join("final.ktck")).unwrap());

    let ck = run.join("final.ktck");
    let a = d.join("bc.jsonl");
    let b = d.join("other.jsonl");
    ok(&["eval", "--checkpoint", p(&ck), "--episodes", "3", "--horizon", "20", "--out", p(&a)]);
    ok(&["eval", "--checkpoint", p(&ck), "--episodes", "3", "--horizon", "20", "--seed", "1", "--name", "other", "--out", p(&b)]);
    assert_eq!(std::fs::read_to_string(&a).unwrap().lines().count(), 3);

    let out = d.join("report");
    let rep: serde_json::Value = serde_json::from_str(&ok(&[
        "report", "--input", p(&a), "--input", p(&b), "--metric", "normalized_score", "--replicates", "100", "--out", p(&out),
    ]))
    .unwrap();
    assert_eq!(rep["normalizer"], "minmax");
    for key in ["aggregates", "profiles", "improvement"] {
        assert!(!rep[key].as_array().unwrap().is_empty(), "{key}");
    }
    assert!(out.join("profiles.csv").exists());
}

#[test]
fn data_dir_env_locates_store() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["synth", "--kind", "random", "--episodes", "3", "--min-len", "5", "--max-len", "9", "--out", p(&dir.path().join("mon-hum-neu.ktb"))]);
    let out = Command::new(env!("CARGO_BIN_EXE_ttyrl"))
        .args(["bench-loader", "--modes", "in_memory", "--shapes", "2x4", "--iters", "2"])
        .env("KATAKOMBA_DATA_DIR", dir.path())
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}
