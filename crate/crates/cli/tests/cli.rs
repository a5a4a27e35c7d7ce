use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn jetforge(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_jetforge"))
        .args(args)
        .env_remove("JETFORGE_LOG")
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = jetforge(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn json(path: &Path) -> Value {
    serde_json::from_slice(&fs::read(path).unwrap()).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const SMALL: &str = r#"{
  "data": {"num_jets": 600},
  "training": {"epochs": 4, "batch_size": 64},
  "compression": {"prune": {"steps": 2, "score_batches": 2, "score_batch_size": 64,
                            "fine_tune": {"epochs": 1, "batch_size": 64}},
                  "qat": {"epochs": 2, "batch_size": 64}}
}"#;

fn small_config(dir: &Path) -> String {
    let p = dir.join("small.json");
    fs::write(&p, SMALL).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn flops_prints_totals_and_layers() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(&["flops", "--out", s(dir.path())]);
    assert!(out.lines().last().unwrap().contains("53929"), "{out}");
    assert!(out.contains("blocks.0.query"));
    let j = json(&dir.path().join("flops.json"));
    assert_eq!(j["flops"], 53929);
    assert_eq!(j["params"], 2501);
    assert!(dir.path().join("config.json").exists());
}

#[test]
fn train_then_eval_reproduces_history() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let data = dir.path().join("data");
    let run = dir.path().join("run");
    ok(&["datagen", "--config", &cfg, "--seed", "3", "--out", s(&data)]);
    assert!(data.join("jets.csv").exists() && data.join("manifest.json").exists());
    ok(&["train", "--config", &cfg, "--seed", "3", "--data", s(&data), "--out", s(&run)]);
    let history: Vec<Value> = fs::read_to_string(run.join("history.jsonl"))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(history.len(), 4);
    let metrics = json(&run.join("metrics.json"));
    let best = metrics["best_epoch"].as_u64().unwrap() as usize;

    let ev = dir.path().join("eval");
    let model = run.join("model.ckpt");
    ok(&["eval", "--config", &cfg, "--seed", "3", "--data", s(&data), "--model", s(&model), "--out", s(&ev)]);
    let acc = json(&ev.join("eval.json"))["accuracy"].as_f64().unwrap();
    assert_eq!(acc, history[best]["val_accuracy"].as_f64().unwrap());
    assert_eq!(acc, metrics["val"]["accuracy"].as_f64().unwrap());
}

#[test]
fn same_seed_gives_identical_json() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let mut outputs = Vec::new();
    for k in 0..2 {
        let data = dir.path().join(format!("data{k}"));
        let run = dir.path().join(format!("run{k}"));
        ok(&["datagen", "--config", &cfg, "--seed", "9", "--out", s(&data)]);
        ok(&["train", "--config", &cfg, "--seed", "9", "--data", s(&data), "--out", s(&run)]);
        outputs.push(
            ["metrics.json", "history.jsonl", "config.json", "norm.json"]
                .map(|f| fs::read(run.join(f)).unwrap()),
        );
        outputs.push([fs::read(data.join("jets.csv")).unwrap(), vec![], vec![], vec![]]);
    }
    assert_eq!(outputs[0], outputs[2]);
    assert_eq!(outputs[1], outputs[3]);
}

#[test]
fn hpo_then_report_gives_sorted_front() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("hpo");
    let store = out.join("study.jsonl");
    ok(&["hpo", "--synthetic", "--trials", "40", "--seed", "1", "--out", s(&out)]);
    assert_eq!(fs::read_to_string(&store).unwrap().lines().count(), 40);

    let rep = dir.path().join("rep");
    let table = ok(&["hpo", "report", "--store", s(&store), "--out", s(&rep)]);
    let rows: Vec<Vec<&str>> = table
        .lines()
        .skip(1)
        .take_while(|l| !l.starts_with("HV@"))
        .map(|l| l.split_whitespace().collect())
        .collect();
    assert!(!rows.is_empty());
    let flops: Vec<u64> = rows.iter().map(|r| r[1].parse().unwrap()).collect();
    let acc: Vec<f64> = rows.iter().map(|r| r[2].parse().unwrap()).collect();
    assert!(flops.windows(2).all(|w| w[0] <= w[1]));
    assert!(acc.windows(2).all(|w| w[0] <= w[1]));
    assert!(acc.iter().all(|&a| a >= 0.65));
    for f in ["study.json", "front.txt", "hv_curve.csv", "pareto.svg", "hv.svg"] {
        assert!(rep.join(f).exists(), "{f}");
    }
    assert!(fs::read_to_string(rep.join("pareto.svg")).unwrap().starts_with("<svg"));
    let study = json(&rep.join("study.json"));
    assert_eq!(study["trials"], 40);
    assert_eq!(study["hv_at"][0][0], 40);

    // the top-level report command renders the same summary
    let rep2 = dir.path().join("rep2");
    ok(&["report", "--store", s(&store), "--out", s(&rep2)]);
    assert_eq!(fs::read(rep.join("study.json")).unwrap(), fs::read(rep2.join("study.json")).unwrap());

    // resuming to 50 trials appends 10
    ok(&["hpo", "--synthetic", "--trials", "50", "--seed", "1", "--store", s(&store), "--out", s(&out)]);
    assert_eq!(fs::read_to_string(&store).unwrap().lines().count(), 50);
}

#[test]
fn prune_and_quantize_write_reports() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let data = dir.path().join("data");
    let run = dir.path().join("run");
    ok(&["datagen", "--config", &cfg, "--out", s(&data)]);
    ok(&["train", "--config", &cfg, "--data", s(&data), "--out", s(&run)]);

    let pr = dir.path().join("prune");
    let model = run.join("model.ckpt");
    let table = ok(&["prune", "--config", &cfg, "--data", s(&data), "--model", s(&model), "--out", s(&pr)]);
    assert!(table.contains("FLOPs") && table.contains("Params"));
    let report = json(&pr.join("prune_report.json"));
    assert!(report["flops_reduction_pct"].as_f64().unwrap() > 0.0);
    assert_eq!(report["steps"].as_array().unwrap().len(), 2);
    let flops = ok(&["flops", "--model", s(&pr.join("pruned.ckpt")), "--out", s(&pr)]);
    assert!(flops.contains(&report["after"]["flops"].to_string()));

    let q = dir.path().join("quant");
    ok(&["quantize", "--config", &cfg, "--data", s(&data), "--out", s(&q)]);
    let summary = json(&q.join("quantize.json"));
    assert!(summary["reduction_pct"].as_f64().unwrap() > 50.0);
    assert!(summary["packed_file_bytes"].as_u64() < summary["full_precision_file_bytes"].as_u64());
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = s(dir.path());
    assert_eq!(jetforge(&["bogus"]).status.code(), Some(2));
    assert_eq!(jetforge(&["train"]).status.code(), Some(2));
    assert_eq!(jetforge(&["hpo", "--out", d]).status.code(), Some(2));
    assert_eq!(jetforge(&["hpo", "--synthetic", "--sampler", "tpe", "--out", d]).status.code(), Some(2));

    let bad = dir.path().join("bad.json");
    fs::write(&bad, r#"{"training": {"epochs": 2, "warmup": 1}}"#).unwrap();
    let out = jetforge(&["flops", "--config", s(&bad), "--out", d]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("warmup"));

    let ckpt = dir.path().join("junk.ckpt");
    fs::write(&ckpt, b"not a checkpoint").unwrap();
    let out = jetforge(&["flops", "--model", s(&ckpt), "--out", d]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert_eq!(err.lines().count(), 1, "{err}");
    assert!(err.starts_with("error:"));
}

#[test]
fn log_level_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_jetforge"))
        .args(["hpo", "--synthetic", "--trials", "3", "--out", s(dir.path())])
        .env("JETFORGE_LOG", "info")
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("trial 0"));
}
