use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn chase_with(env: &[(&str, &str)], args: &[&str]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_chase"));
    cmd.env_remove("CHASE_THREADS").args(args);
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

fn chase(args: &[&str]) -> Output {
    chase_with(&[], args)
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[track_caller]
fn success(o: Output) -> String {
    assert!(o.status.success(), "exit {:?}: {}", o.status.code(), stderr(&o));
    stdout(&o)
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn json(path: PathBuf) -> Value {
    serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap()
}

fn small_data(dir: &Path) -> (String, String) {
    let out = dir.join("data");
    success(chase(&["synth", "--out", p(&out), "--samples-per-class", "30", "--test-samples-per-class", "10"]));
    (p(&out.join("train.chsk")).to_string(), p(&out.join("test.chsk")).to_string())
}

fn value_of(out: &str, key: &str) -> f64 {
    out.lines()
        .find_map(|l| l.strip_prefix(&format!("{key}=")))
        .unwrap_or_else(|| panic!("no {key} in {out}"))
        .parse()
        .unwrap()
}

#[test]
fn synth_defaults_determinism_and_nested_output() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("x/y/z");
    let out = success(chase(&["synth", "--out", p(&a)]));
    assert!(out.contains("samples=2000") && out.contains("samples=500"), "{out}");
    let sidecar = json(a.join("train.chsk.json"));
    assert_eq!(sidecar["classes"].as_array().unwrap().len(), 4);

    let b = dir.path().join("b");
    success(chase(&["synth", "--out", p(&b)]));
    for f in ["train.chsk", "test.chsk", "train.chsk.json", "test.chsk.json"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let c = dir.path().join("c");
    success(chase(&["synth", "--out", p(&c), "--seed", "9"]));
    assert_ne!(fs::read(a.join("train.chsk")).unwrap(), fs::read(c.join("train.chsk")).unwrap());

    let m = json(a.join("synth.manifest.json"));
    assert_eq!(m["command"], "synth");
    assert_eq!(m["seed"], 0);
    for art in m["artifacts"].as_array().unwrap() {
        assert!(a.join(art.as_str().unwrap()).exists());
    }
    assert!(m["tool_version"].is_string() && m["config"]["num_classes"] == 4);
}

#[test]
fn synth_config_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    fs::write(&bad, r#"{"frames": 0}"#).unwrap();
    let o = chase(&["synth", "--config", p(&bad), "--out", p(&dir.path().join("o"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("frames"), "{}", stderr(&o));

    fs::write(&bad, r#"{"num_clases": 3}"#).unwrap();
    let o = chase(&["synth", "--config", p(&bad), "--out", p(&dir.path().join("o"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("num_clases"));

    let o = chase(&["synth"]);
    assert_eq!(o.status.code(), Some(2), "missing --out");
}

#[test]
fn train_logs_metrics_per_normalizer() {
    let dir = tempfile::tempdir().unwrap();
    let (tr, te) = small_data(dir.path());
    let run = dir.path().join("chase");
    let out = success(chase(&[
        "train",
        "--train",
        &tr,
        "--test",
        &te,
        "--normalizer",
        "chase",
        "--lambda",
        "0.1",
        "--epochs",
        "2",
        "--out",
        p(&run),
        "-q",
    ]));
    let acc = value_of(&out, "final_acc");
    assert!((0.0..=1.0).contains(&acc));
    let log = fs::read_to_string(run.join("train.metrics.jsonl")).unwrap();
    let lines: Vec<Value> = log.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 2);
    assert!(lines.iter().all(|l| l["mpmmd"].is_f64() && l["eval_acc"].is_f64()));
    assert_eq!(lines[1]["eval_acc"].as_f64(), Some(acc));
    assert_eq!(json(run.join("train.manifest.json"))["config"]["lambda"], 0.1);

    let run = dir.path().join("vanilla");
    success(chase(&["train", "--train", &tr, "--normalizer", "vanilla", "--epochs", "1", "--out", p(&run), "-q"]));
    let log = fs::read_to_string(run.join("train.metrics.jsonl")).unwrap();
    assert!(!log.contains("mpmmd") && !log.contains("eval_acc"), "{log}");
}

#[test]
fn train_config_file_with_flag_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let (tr, _) = small_data(dir.path());
    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, format!(r#"{{"train_path": {tr:?}, "epochs": 5, "normalizer": "s2com", "m": 2}}"#)).unwrap();
    let run = dir.path().join("r");
    success(chase(&["train", "--config", p(&cfg), "--epochs", "1", "--out", p(&run), "-q"]));
    let m = json(run.join("train.manifest.json"));
    assert_eq!(m["config"]["epochs"], 1);
    assert_eq!(m["config"]["normalizer"], "s2com");
    assert_eq!(m["config"]["pairs_per_batch"], 2);
}

#[test]
fn train_failures_map_to_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let (tr, _) = small_data(dir.path());
    let o = dir.path().join("o");

    let missing = chase(&["train", "--train", p(&dir.path().join("nope.chsk")), "--out", p(&o)]);
    assert_eq!(missing.status.code(), Some(2));

    let garbage = dir.path().join("garbage.chsk");
    fs::write(&garbage, b"not a dataset").unwrap();
    assert_eq!(chase(&["train", "--train", p(&garbage), "--out", p(&o)]).status.code(), Some(2));

    let bad = chase(&["train", "--train", &tr, "--batch-size", "0", "--out", p(&o)]);
    assert_eq!(bad.status.code(), Some(2));
    assert!(stderr(&bad).contains("batch_size"), "{}", stderr(&bad));

    let nan = chase(&["train", "--train", &tr, "--lr", "1e300", "--epochs", "3", "--out", p(&o), "-q"]);
    assert_eq!(nan.status.code(), Some(3));
    assert!(stderr(&nan).contains("epoch 0"), "{}", stderr(&nan));
    // the partial run still leaves a manifest behind
    let m = json(o.join("train.manifest.json"));
    assert_eq!(m["artifacts"].as_array().unwrap().len(), 1);
}

#[test]
fn resume_continues_the_same_trajectory() {
    let dir = tempfile::tempdir().unwrap();
    let (tr, te) = small_data(dir.path());
    let (full, half, rest) = (dir.path().join("full"), dir.path().join("half"), dir.path().join("rest"));
    let common = ["--train", &tr, "--test", &te, "--normalizer", "batchnorm", "-q"];
    let go = |out: &Path, epochs: &str| {
        let mut args = vec!["train", "--epochs", epochs, "--out", p(out)];
        args.extend(common);
        success(chase(&args))
    };
    let a = go(&full, "3");
    go(&half, "1");
    let ck = half.join("train.chck");
    let b = success(chase(&["train", "--resume", p(&ck), "--epochs", "3", "--out", p(&rest), "-q"]));
    assert_eq!(value_of(&a, "final_acc"), value_of(&b, "final_acc"));
    let mut joined = fs::read(half.join("train.metrics.jsonl")).unwrap();
    joined.extend(fs::read(rest.join("train.metrics.jsonl")).unwrap());
    assert_eq!(joined, fs::read(full.join("train.metrics.jsonl")).unwrap());
    assert_eq!(fs::read(full.join("train.chck")).unwrap(), fs::read(rest.join("train.chck")).unwrap());

    let changed =
        chase(&["train", "--resume", p(&ck), "--epochs", "3", "--lr", "0.5", "--out", p(&dir.path().join("x"))]);
    assert_eq!(changed.status.code(), Some(2));
    assert!(stderr(&changed).contains("`lr`"));
    let shorter =
        chase(&["train", "--resume", p(&full.join("train.chck")), "--epochs", "2", "--out", p(&dir.path().join("y"))]);
    assert_eq!(shorter.status.code(), Some(2));
}

#[test]
fn rerunning_into_the_same_directory_is_refused_identically() {
    let dir = tempfile::tempdir().unwrap();
    let (tr, _) = small_data(dir.path());
    let o = dir.path().join("o");
    let args = ["train", "--train", &tr, "--epochs", "1", "--out", p(&o), "-q"];
    success(chase(&args));
    let first = chase(&args);
    let second = chase(&args);
    assert_eq!(first.status.code(), Some(2));
    assert_eq!(stderr(&first), stderr(&second));
    // a different run id in the same directory is fine
    let mut other = args.to_vec();
    other.extend(["--run-id", "again"]);
    success(chase(&other));
    assert!(o.join("again.manifest.json").exists());
}

#[test]
fn discrepancy_reports() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    success(chase(&["synth", "--out", p(&data)]));
    let test = data.join("test.chsk");

    let v = dir.path().join("v");
    let out = success(chase(&["discrepancy", "--data", p(&test), "--repetitions", "5", "--out", p(&v)]));
    let report = json(v.join("discrepancy.discrepancy.json"));
    assert_eq!(report["repetitions"], 5);
    assert_eq!(report["normalizer"], "vanilla");
    let csv = fs::read_to_string(v.join("discrepancy.discrepancy.csv")).unwrap();
    let mut rows = csv.lines();
    assert_eq!(rows.next(), Some("pair,metric,mean,std"));
    let rows: Vec<Vec<&str>> = rows.map(|r| r.split(',').collect()).collect();
    assert_eq!(rows.len(), 5);
    for r in &rows {
        assert_eq!(r.len(), 4);
        assert!(r[2].parse::<f64>().unwrap() > 0.0, "vanilla metric is zero: {r:?}");
        assert!(r[3].parse::<f64>().unwrap().is_finite());
    }
    assert!(json(v.join("discrepancy.manifest.json"))["config"]["report"]["repetitions"] == 5);

    let refused =
        chase(&["discrepancy", "--data", p(&test), "--normalizer", "chase", "--out", p(&dir.path().join("c0"))]);
    assert_eq!(refused.status.code(), Some(2));

    let run = dir.path().join("run");
    success(chase(&[
        "train",
        "--train",
        p(&data.join("train.chsk")),
        "--normalizer",
        "chase",
        "--epochs",
        "8",
        "--out",
        p(&run),
        "-q",
    ]));
    let c = dir.path().join("c");
    let chased = success(chase(&[
        "discrepancy",
        "--data",
        p(&test),
        "--checkpoint",
        p(&run.join("train.chck")),
        "--repetitions",
        "5",
        "--out",
        p(&c),
    ]));
    for m in ["avg_kld", "jsd", "bd", "hd", "mmd"] {
        assert!(value_of(&chased, m) < value_of(&out, m), "{m}: chase {chased} vanilla {out}");
    }
    let mismatch = chase(&[
        "discrepancy",
        "--data",
        p(&test),
        "--checkpoint",
        p(&run.join("train.chck")),
        "--normalizer",
        "s2com",
        "--out",
        p(&dir.path().join("m")),
    ]);
    assert_eq!(mismatch.status.code(), Some(2));
}

#[test]
fn eval_table_and_single_corruption() {
    let dir = tempfile::tempdir().unwrap();
    let (tr, te) = small_data(dir.path());
    let run = dir.path().join("run");
    success(chase(&["train", "--train", &tr, "--test", &te, "--epochs", "2", "--out", p(&run), "-q"]));
    let ck = run.join("train.chck");
    let e = dir.path().join("e");
    let table = success(chase(&["eval", "--checkpoint", p(&ck), "--out", p(&e), "--seed", "4"]));
    let saved = json(e.join("eval.eval.json"));
    assert_eq!(saved["clean"].as_f64(), Some(value_of(&table, "clean_acc")));
    assert_eq!(saved["noise"].as_array().unwrap().len(), 2);
    assert_eq!(json(e.join("eval.manifest.json"))["seed"], 4);

    let single = success(chase(&["eval", "--checkpoint", p(&ck), "--noise", "0.01", "--seed", "4"]));
    let noisy = table.lines().find(|l| l.starts_with("noise_sigma=0.01 ")).unwrap();
    assert_eq!(format!("noise_sigma=0.01 {}", single.trim()), noisy);
    let bad = chase(&["eval", "--checkpoint", p(&ck), "--mask", "1.5"]);
    assert_eq!(bad.status.code(), Some(2));
    let missing = chase(&["eval", "--checkpoint", p(&dir.path().join("none.chck"))]);
    assert_eq!(missing.status.code(), Some(2));
}

#[test]
fn gradcheck_gate() {
    let out = success(chase(&["gradcheck"]));
    assert!(out.lines().any(|l| l.starts_with("end_to_end") && l.ends_with("ok")));
    assert!(out.contains("all 25 checks passed"));

    let broken = chase(&["gradcheck", "--sabotage", "segment_mean_pool"]);
    assert_eq!(broken.status.code(), Some(1));
    assert!(stderr(&broken).contains("segment_mean_pool (max_rel_error="));

    assert!(success(chase(&["gradcheck", "--eps", "1e-6"])).contains("eps=0.000001"));
    assert_eq!(chase(&["gradcheck", "--sabotage", "conv2d"]).status.code(), Some(2));

    let dir = tempfile::tempdir().unwrap();
    success(chase(&["gradcheck", "--out", p(dir.path())]));
    let saved = json(dir.path().join("gradcheck.gradcheck.json"));
    assert_eq!(saved.as_array().unwrap().len(), 25);
}

#[test]
fn params_accounting() {
    let out = success(chase(&["params", "--c", "3", "--t", "64", "--j", "25", "--e", "2", "--c1", "64", "--c2", "8"]));
    assert_eq!(out.lines().next(), Some("params=26368"));
    let flops = out.lines().nth(1).unwrap();
    assert!(flops.starts_with("flops=") && flops.ends_with("convention=MAC2"));

    let out = success(chase(&["params", "--c", "1", "--t", "1", "--j", "1", "--e", "1", "--c1", "1", "--c2", "1"]));
    assert_eq!(out.lines().next(), Some("params=4"));

    for bad in [
        vec!["params", "--c", "0", "--t", "1", "--j", "1", "--e", "1", "--c1", "1", "--c2", "1"],
        vec!["params", "--c", "3", "--t", "64", "--j", "25", "--e", "2", "--c1", "64", "--c2", "8", "--seg", "3,1,1"],
        vec!["params", "--c", "3", "--t", "64", "--j", "25", "--e", "2", "--c1", "64", "--c2", "8", "--seg", "2,2"],
        vec!["params", "--c", "3"],
    ] {
        assert_eq!(chase(&bad).status.code(), Some(2), "{bad:?}");
    }
}

#[test]
fn thread_cap_from_environment() {
    let args = ["params", "--c", "3", "--t", "4", "--j", "2", "--e", "2", "--c1", "4", "--c2", "2"];
    assert!(chase_with(&[("CHASE_THREADS", "1")], &args).status.success());
    for bad in ["0", "many"] {
        let o = chase_with(&[("CHASE_THREADS", bad)], &args);
        assert_eq!(o.status.code(), Some(2));
        assert!(stderr(&o).contains("CHASE_THREADS"));
    }
}
