use serde_json::Value;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn medsyn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_medsyn")).args(args).env_remove("SYNERMED_SEED").output().expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let o = medsyn(args);
    assert!(o.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&o.stderr));
    o
}

fn error_line(o: &Output) -> Value {
    let text = String::from_utf8_lossy(&o.stderr);
    let line = text.lines().last().expect("stderr has a line");
    serde_json::from_str(line).unwrap_or_else(|e| panic!("stderr is not one JSON line ({e}): {text}"))
}

fn small_config(dir: &Path) -> PathBuf {
    let p = dir.join("small.json");
    std::fs::write(
        &p,
        r#"{
  "toy": {"n_volumes": 8, "slices_per_volume": 16},
  "forge": {"k_window": 3, "instances_per_pair": {"cts": 4, "mi": 2, "tia": 2}},
  "train": {
    "holdout_every": 2,
    "stage1": {"epochs": 1, "eval_instances_per_pair": {"cts": 2, "mi": 2, "tia": 2}},
    "stage2": {"epochs": 1, "samples_per_route": 4},
    "sampler": {"steps": 4},
    "eval": {"slice_stride": 8}
  }
}"#,
    )
    .unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn read(p: impl AsRef<Path>) -> Vec<u8> {
    std::fs::read(p.as_ref()).unwrap_or_else(|e| panic!("{}: {e}", p.as_ref().display()))
}

#[test]
fn help_and_version_exit_zero() {
    ok(&["--help"]);
    ok(&["--version"]);
}

#[test]
fn usage_errors_exit_one_with_json() {
    let o = medsyn(&["frobnicate"]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(error_line(&o)["error"]["kind"], "usage");

    let d = tempfile::tempdir().unwrap();
    let cfg = d.path().join("bad.json");
    std::fs::write(&cfg, r#"{"forge": {"k_windw": 3}}"#).unwrap();
    let o = medsyn(&["toygen", "--config", s(&cfg), "--out", s(&d.path().join("x"))]);
    assert_eq!(o.status.code(), Some(1));
    let e = error_line(&o);
    assert!(e["error"]["message"].as_str().unwrap().contains("k_windw"), "{e}");
    assert!(!d.path().join("x").exists());

    let o = medsyn(&["toygen", "--set", "toy.width=20", "--out", s(&d.path().join("x"))]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn data_errors_exit_two() {
    let d = tempfile::tempdir().unwrap();
    let o = medsyn(&["forge", "--manifest", s(&d.path().join("missing.json")), "--out", s(&d.path().join("f"))]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(error_line(&o)["error"]["kind"], "data");
}

#[test]
fn forge_is_deterministic_across_runs_and_jobs() {
    let d = tempfile::tempdir().unwrap();
    let cfg = small_config(d.path());
    let corpus = d.path().join("corpus");
    ok(&["toygen", "--config", s(&cfg), "--out", s(&corpus)]);
    let manifest = corpus.join("manifest.json");
    let outs: Vec<PathBuf> = ["a", "b", "c"].iter().map(|n| d.path().join(n)).collect();
    ok(&["forge", "--config", s(&cfg), "--manifest", s(&manifest), "--out", s(&outs[0])]);
    ok(&["forge", "--config", s(&cfg), "--manifest", s(&manifest), "--out", s(&outs[1]), "--jobs", "1"]);
    ok(&["forge", "--config", s(&cfg), "--manifest", s(&manifest), "--out", s(&outs[2]), "--jobs", "8"]);
    for f in ["cts.jsonl", "mi.jsonl", "tia.jsonl", "forge_summary.json", "provenance.json"] {
        let a = read(outs[0].join(f));
        assert!(!a.is_empty(), "{f} empty");
        assert_eq!(a, read(outs[1].join(f)), "{f}");
        assert_eq!(a, read(outs[2].join(f)), "{f}");
    }
    let summary: Value = serde_json::from_slice(&read(outs[0].join("forge_summary.json"))).unwrap();
    let prov = &summary["provenance"];
    assert_eq!(prov["config"]["forge"]["k_window"], 3);
    assert_eq!(prov["config_sha256"].as_str().unwrap().len(), 64);
    assert!(prov["inputs"]["manifest"].is_string());

    // Scoring the answers themselves gives full marks.
    let preds = d.path().join("preds.jsonl");
    let mut lines = String::new();
    for f in ["cts.jsonl", "mi.jsonl", "tia.jsonl"] {
        for line in String::from_utf8(read(outs[0].join(f))).unwrap().lines() {
            let v: Value = serde_json::from_str(line).unwrap();
            lines += &format!("{}\n", serde_json::json!({"instance_id": v["instance_id"], "answer": v["answer_letter"]}));
        }
    }
    std::fs::write(&preds, lines).unwrap();
    let inst: Vec<String> = ["cts.jsonl", "mi.jsonl", "tia.jsonl"].iter().map(|f| outs[0].join(f).to_string_lossy().into_owned()).collect();
    let score_out = d.path().join("score");
    let mut args = vec!["score", "--instances"];
    args.extend(inst.iter().map(String::as_str));
    args.extend(["--predictions", s(&preds), "--out", s(&score_out)]);
    ok(&args);
    let report: Value = serde_json::from_slice(&read(score_out.join("score.json"))).unwrap();
    assert_eq!(report["average_accuracy"], 1.0);
}

#[test]
fn eval_identical_dirs_is_perfect() {
    let d = tempfile::tempdir().unwrap();
    let cfg = small_config(d.path());
    let corpus = d.path().join("corpus");
    ok(&["toygen", "--config", s(&cfg), "--out", s(&corpus)]);
    let vols = corpus.join("volumes");
    let out = d.path().join("eval");
    ok(&["eval", "--pred", s(&vols), "--gt", s(&vols), "--out", s(&out)]);
    let r: Value = serde_json::from_slice(&read(out.join("eval.json"))).unwrap();
    assert_eq!(r["overall"]["ssim"]["mean"], 100.0);
    assert_eq!(r["overall"]["mae"]["mean"], 0.0);
    assert!(r["provenance"]["inputs"]["gt"].is_string());
    let csv = String::from_utf8(read(out.join("eval.csv"))).unwrap();
    assert!(csv.starts_with("# {"));
    assert!(csv.contains("\nssim,100.00\n"), "{csv}");
}

#[test]
fn eval_rejects_missing_predictions() {
    let d = tempfile::tempdir().unwrap();
    let cfg = small_config(d.path());
    let corpus = d.path().join("corpus");
    ok(&["toygen", "--config", s(&cfg), "--out", s(&corpus)]);
    let pred = d.path().join("pred");
    std::fs::create_dir(&pred).unwrap();
    let o = medsyn(&["eval", "--pred", s(&pred), "--gt", s(&corpus.join("volumes")), "--out", s(&d.path().join("e"))]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn sample_rejects_unknown_route() {
    let d = tempfile::tempdir().unwrap();
    let o = medsyn(&["sample", "--ckpt", s(d.path()), "--src", "x.pgm", "--route", "nope", "--out", s(&d.path().join("o.pgm"))]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn env_seed_reaches_provenance() {
    let d = tempfile::tempdir().unwrap();
    let cfg = small_config(d.path());
    let out = d.path().join("corpus");
    let o = Command::new(env!("CARGO_BIN_EXE_medsyn"))
        .args(["toygen", "--config", s(&cfg), "--out", s(&out)])
        .env("SYNERMED_SEED", "17")
        .output()
        .unwrap();
    assert!(o.status.success());
    let p: Value = serde_json::from_slice(&read(out.join("provenance.json"))).unwrap();
    assert_eq!(p["provenance"]["config"]["toy"]["seed"], 17);
    assert!(p["outputs"]["manifest.json"].is_string());
    assert!(p["outputs"]["volumes"].is_string());
}
