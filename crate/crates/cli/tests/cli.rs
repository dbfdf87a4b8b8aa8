//! End-to-end runs of the `prunebench` binary on tiny models.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_prunebench"));
    c.env_remove("PRUNEBENCH_SEED");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(args: &[&str]) -> i32 {
    run(args).status.code().unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn assert_run_manifest(dir: &Path, command: &str) {
    let m = read_json(&dir.join("run_manifest.json"));
    assert_eq!(m["command"], command);
    assert!(m["args"].as_array().unwrap().len() > 1);
    assert!(m["tool_version"].is_string());
    for a in m["artifacts"].as_array().unwrap() {
        assert!(dir.join(a.as_str().unwrap()).exists(), "{a} missing in {dir:?}");
    }
}

#[test]
fn derive_config_prints_channel_vector() {
    assert_eq!(ok(&["derive-config", "--fraction", "0.5"]).trim(), "32,64,128,128");
    assert_eq!(ok(&["derive-config", "--fraction", "0.75"]).trim(), "32,64,64,64");
    let v: Value = serde_json::from_str(&ok(&["derive-config", "--fraction", "0.875", "--json"])).unwrap();
    assert_eq!(v["network_param"], serde_json::json!([32, 32, 32, 32]));
    let all = ok(&["derive-config", "--all"]);
    assert!(all.lines().any(|l| l == "base\t32,64,128,256"));
    assert!(all.lines().any(|l| l == "P.875\t32,32,32,32"));
}

#[test]
fn invalid_input_is_a_usage_error() {
    assert_eq!(code(&["derive-config", "--fraction", "1.0"]), 2);
    assert_eq!(code(&["derive-config", "--fraction", "-0.1"]), 2);
    assert_eq!(code(&["derive-config"]), 2);
    assert_eq!(code(&["init", "--config", "4,2,8,8", "--out", "/nonexistent/x"]), 2);
    assert_eq!(code(&["no-such-command"]), 2);
    assert_eq!(code(&["--help"]), 0);
}

#[test]
fn missing_model_is_a_runtime_error() {
    let t = tempfile::tempdir().unwrap();
    let gone = t.path().join("gone");
    assert_eq!(code(&["eval", "--model", p(&gone)]), 1);
}

#[test]
fn train_prune_finetune_eval_pipeline() {
    let t = tempfile::tempdir().unwrap();
    let d = |n: &str| t.path().join(n);
    ok(&["init", "--config", "2,4,8,8", "--out", p(&d("init"))]);
    assert_run_manifest(&d("init"), "init");

    let small = ["--epochs", "2", "--sequences", "8", "--frames", "4"];
    let (init, trained) = (d("init"), d("trained"));
    let mut args = vec!["train", "--model", p(&init), "--out", p(&trained)];
    args.extend(small);
    ok(&args);
    assert_run_manifest(&d("trained"), "train");
    let hist = fs::read_to_string(d("trained").join("history.csv")).unwrap();
    assert_eq!(hist.lines().next(), Some("epoch,arm,loss"));
    assert_eq!(hist.lines().count(), 3);

    ok(&["prune", "--model", p(&d("trained")), "--target", "2,4,4,4", "--out", p(&d("pruned"))]);
    assert_run_manifest(&d("pruned"), "prune");
    let m = read_json(&d("pruned").join("manifest.json"));
    assert!(m.to_string().contains("[2,4,4,4]"), "{m}");

    let (pruned, ft) = (d("pruned"), d("ft"));
    let mut args = vec!["finetune", "--model", p(&pruned), "--out", p(&ft)];
    args.extend(small);
    ok(&args);
    assert_run_manifest(&d("ft"), "finetune");

    let v: Value = serde_json::from_str(&ok(&[
        "eval", "--model", p(&d("ft")), "--eval-sequences", "4", "--out", p(&d("eval")),
    ]))
    .unwrap();
    assert!(v["eval_loss"].as_f64().unwrap().is_finite());
    assert_run_manifest(&d("eval"), "eval");
}

#[test]
fn prune_target_checks() {
    let t = tempfile::tempdir().unwrap();
    let base = t.path().join("base");
    let out = t.path().join("out");
    ok(&["init", "--config", "2,4,8,8", "--out", p(&base)]);
    let prune = |extra: &[&str]| {
        let mut a = vec!["prune", "--model", p(&base), "--out", p(&out)];
        a.extend(extra);
        code(&a)
    };
    assert_eq!(prune(&["--target", "2,4,8,16"]), 2);
    assert_eq!(prune(&["--target", "4,4,8,8"]), 2);
    assert_eq!(prune(&[]), 2);
    assert_eq!(prune(&["--target", "2,4,4,4", "--unstructured", "0.5"]), 2);
    assert_eq!(prune(&["--unstructured", "1.5"]), 2);
}

#[test]
fn unstructured_prune_keeps_shapes() {
    let t = tempfile::tempdir().unwrap();
    let base = t.path().join("base");
    let sparse = t.path().join("sparse");
    ok(&["init", "--config", "2,4,8,8", "--out", p(&base)]);
    ok(&["prune", "--model", p(&base), "--unstructured", "0.75", "--out", p(&sparse)]);
    assert_run_manifest(&sparse, "prune");
    assert_eq!(
        read_json(&base.join("manifest.json")),
        read_json(&sparse.join("manifest.json"))
    );
    assert_eq!(
        fs::metadata(base.join("weights.bin")).unwrap().len(),
        fs::metadata(sparse.join("weights.bin")).unwrap().len()
    );
}

#[test]
fn benchmark_and_speedup_report() {
    let t = tempfile::tempdir().unwrap();
    let b = t.path().join("bench");
    let r = t.path().join("report");
    let tiny = ["--samples", "3", "--warmup", "1", "--frames-per-sample", "4"];
    let mut args = vec!["benchmark", "--config", "P.875", "--config", "P.750", "--out", p(&b)];
    args.extend(tiny);
    ok(&args);
    assert_run_manifest(&b, "benchmark");
    let reports = read_json(&b.join("reports.json"));
    let reports = reports.as_array().unwrap();
    assert_eq!(reports.len(), 2);
    for rep in reports {
        assert_eq!(rep["samples"], 3);
        assert_eq!(rep["samples_ms"].as_array().unwrap().len(), 3);
        assert!(rep["ci95_half_width_ms"].as_f64().unwrap() >= 0.0);
    }

    let csv = ok(&["report", "speedup", "--reports", p(&b.join("reports.json")), "--baseline", "P.750", "--out", p(&r)]);
    assert_run_manifest(&r, "report speedup");
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "config,mean_ms,ci95_ms,memory_mb,speedup");
    let base_row = lines.iter().find(|l| l.starts_with("P.750,")).unwrap();
    assert!(base_row.ends_with(",1.0000"), "{base_row}");
    assert_eq!(
        code(&["report", "speedup", "--reports", p(&b.join("reports.json")), "--baseline", "CRUSE32", "--out", p(&r)]),
        2
    );
}

#[test]
fn compare_sparse_writes_one_row_per_fraction() {
    let t = tempfile::tempdir().unwrap();
    let c = t.path().join("cmp");
    ok(&[
        "compare", "--sparse", "--config", "P.875", "--fracs", "0,0.5", "--samples", "3",
        "--warmup", "0", "--frames-per-sample", "4", "--out", p(&c),
    ]);
    assert_run_manifest(&c, "compare");
    let reports = read_json(&c.join("reports.json"));
    let names: Vec<&str> = reports
        .as_array()
        .unwrap()
        .iter()
        .map(|r| r["config_name"].as_str().unwrap())
        .collect();
    assert_eq!(names, ["frac_gru=0.00", "frac_gru=0.50"]);
    assert!(read_json(&c.join("compare.json"))["all_pairwise_cis_overlap"].is_boolean());
}

#[test]
fn profile_fractions_sum_to_one() {
    let out = ok(&["profile", "--config", "2,4,8,8", "--frames", "5", "--repeats", "1"]);
    let rows: Value = serde_json::from_str(out.lines().last().unwrap()).unwrap();
    let f = &rows[0]["fractions"];
    let sum: f64 = ["recurrent", "conv_deconv", "other"]
        .iter()
        .map(|k| f[k].as_f64().unwrap())
        .sum();
    assert!((sum - 1.0).abs() < 1e-9, "{sum}");
}

#[test]
fn lr_sweep_has_one_row_per_rate() {
    let t = tempfile::tempdir().unwrap();
    let m = t.path().join("m");
    let l = t.path().join("lr");
    ok(&["init", "--config", "2,2,4,8", "--out", p(&m)]);
    ok(&[
        "ablate", "lr-sweep", "--model", p(&m), "--target", "2,2,4,4", "--epochs", "1",
        "--sequences", "4", "--frames", "4", "--eval-sequences", "2", "--out", p(&l),
    ]);
    assert_run_manifest(&l, "ablate lr-sweep");
    let csv = fs::read_to_string(l.join("lr_sweep.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "lr,final_train_loss,eval_loss");
    assert_eq!(lines.len(), 5);
}

#[test]
fn prune_vs_direct_writes_both_arms() {
    let t = tempfile::tempdir().unwrap();
    let m = t.path().join("m");
    let o = t.path().join("pvd");
    ok(&["init", "--config", "2,2,4,8", "--out", p(&m)]);
    ok(&[
        "ablate", "prune-vs-direct", "--model", p(&m), "--target", "2,2,4,4", "--epochs", "1",
        "--base-epochs", "1", "--sequences", "4", "--frames", "4", "--eval-sequences", "2",
        "--out", p(&o),
    ]);
    assert_run_manifest(&o, "ablate prune-vs-direct");
    for arm in ["finetuned", "direct"] {
        assert!(o.join(arm).join("weights.bin").exists());
    }
    let hist = fs::read_to_string(o.join("history.csv")).unwrap();
    assert_eq!(hist.lines().filter(|l| l.contains(",finetune,")).count(), 1);
    assert_eq!(hist.lines().filter(|l| l.contains(",direct,")).count(), 2);
}

#[test]
fn seed_env_var_sets_default_and_runs_repeat() {
    let t = tempfile::tempdir().unwrap();
    let dir = |n: &str| t.path().join(n);
    let init = |name: &str, env: Option<&str>, extra: &[&str]| {
        let mut c = bin();
        c.args(["init", "--config", "2,2,4,8", "--out", p(&dir(name))]).args(extra);
        if let Some(s) = env {
            c.env("PRUNEBENCH_SEED", s);
        }
        assert!(c.output().unwrap().status.success());
        fs::read(dir(name).join("weights.bin")).unwrap()
    };
    let env7 = init("env7", Some("7"), &[]);
    let flag7 = init("flag7", None, &["--seed", "7"]);
    let again = init("again", Some("7"), &[]);
    let default = init("default", None, &[]);
    assert_eq!(env7, flag7);
    assert_eq!(env7, again);
    assert_ne!(env7, default);
    assert_eq!(read_json(&dir("env7").join("run_manifest.json"))["seeds"]["init"], 7);
    assert_eq!(read_json(&dir("default").join("run_manifest.json"))["seeds"]["init"], 42);
}
