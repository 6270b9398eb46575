use std::fs;
use std::path::Path;
use std::process::{Command, Output};
use std::time::Instant;

use moe_lab::model::sample_dataset;
use moe_lab::ratelab::RateReport;
use moe_lab::{BaseFamily, ComponentParams, ContaminatedModel, ExpertFn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

fn moe_lab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_moe-lab")).args(args).env_remove("MOE_LAB_SEED").output().expect("spawn moe-lab")
}

fn ok(out: &Output) {
    assert!(out.status.success(), "status {:?}\nstderr: {}", out.status, String::from_utf8_lossy(&out.stderr));
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn generate_writes_csv_and_truth() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a/data.csv");
    let b = dir.path().join("b/data.csv");
    for out in [&a, &b] {
        ok(&moe_lab(&["generate", "--scenario", "T2", "--case", "fixed", "--n", "100", "--seed", "7", "--out", p(out)]));
    }
    let text = fs::read_to_string(&a).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "x1,x2,x3,x4,x5,x6,x7,x8,y");
    assert_eq!(lines.len(), 101);
    assert!(lines[1..].iter().all(|l| l.split(',').count() == 9));
    assert_eq!(text, fs::read_to_string(&b).unwrap());
    let ta = fs::read_to_string(a.with_file_name("truth.json")).unwrap();
    assert_eq!(ta, fs::read_to_string(b.with_file_name("truth.json")).unwrap());

    let m = ContaminatedModel::from_json(&ta).unwrap();
    assert_eq!(m.lambda, 0.5);
    assert_eq!(m.prompt.a, vec![1.0; 8]);
    assert_eq!(m.dim(), 8);
    assert_eq!(ContaminatedModel::from_json(&m.to_json().unwrap()).unwrap(), m);
}

#[test]
fn generate_rejects_bad_flags() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("d.csv");
    assert_eq!(moe_lab(&["generate", "--scenario", "T2", "--case", "fixed", "--n", "0", "--out", p(&out)]).status.code(), Some(2));
    assert_eq!(moe_lab(&["generate", "--scenario", "T5", "--case", "fixed", "--n", "5", "--out", p(&out)]).status.code(), Some(2));
    assert_eq!(moe_lab(&["generate", "--scenario", "T4", "--case", "fixed", "--n", "5", "--out", p(&out)]).status.code(), Some(2));
    let blocked = dir.path().join("file");
    fs::write(&blocked, "x").unwrap();
    let nested = blocked.join("d.csv");
    assert_eq!(moe_lab(&["generate", "--scenario", "T2", "--case", "fixed", "--n", "5", "--out", p(&nested)]).status.code(), Some(3));
}

#[test]
fn fit_small_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data.csv");
    let out = dir.path().join("fit.json");
    ok(&moe_lab(&["generate", "--scenario", "T2", "--case", "fixed", "--n", "50", "--seed", "3", "--out", p(&data)]));
    let t = Instant::now();
    ok(&moe_lab(&["fit", "--data", p(&data), "--truth", p(&dir.path().join("truth.json")), "--out", p(&out)]));
    assert!(t.elapsed().as_secs_f64() < 1.0, "fit took {:?}", t.elapsed());

    let v = read_json(&out);
    for key in ["lambda_hat", "g_hat", "final_loglik", "iters", "converged", "diagnostics"] {
        assert!(v["result"].get(key).is_some(), "result.{key} missing");
    }
    assert!(v["result"]["final_loglik"].as_f64().unwrap().is_finite());
    for key in ["err_lambda", "err_a", "err_b", "err_nu"] {
        assert!(v["errors"][key].as_f64().unwrap() >= 0.0);
    }
    assert_eq!(v["provenance"]["inputs"]["n"], 50);
}

#[test]
fn fit_single_component_truth() {
    let dir = tempfile::tempdir().unwrap();
    let g0 = ComponentParams::new(vec![1.0, 0.0, 0.0], 0.0, 1.0).unwrap();
    let prompt = ComponentParams::new(vec![0.5, -1.0, 0.3], 0.8, 0.05).unwrap();
    let m = ContaminatedModel::new(1.0, BaseFamily::gaussian(ExpertFn::Identity), g0, ExpertFn::Identity, prompt).unwrap();
    let data = sample_dataset(&m, 2000, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
    data.save_csv(dir.path().join("d.csv")).unwrap();
    fs::write(dir.path().join("t.json"), m.to_json().unwrap()).unwrap();
    let out = dir.path().join("f.json");
    ok(&moe_lab(&["fit", "--data", p(&dir.path().join("d.csv")), "--truth", p(&dir.path().join("t.json")), "--out", p(&out)]));
    assert!(read_json(&out)["result"]["lambda_hat"].as_f64().unwrap() >= 0.9);
}

#[test]
fn fit_missing_file_is_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.csv");
    let out = moe_lab(&["fit", "--data", p(&missing), "--truth", p(&missing), "--out", p(&dir.path().join("o.json"))]);
    assert_eq!(out.status.code(), Some(3));
    assert!(!out.stderr.is_empty());
}

fn scenario_args<'a>(outdir: &'a str, extra: &[&'a str]) -> Vec<&'a str> {
    let mut v = vec!["run-scenario", "--scenario", "T2", "--case", "fixed", "--grid", "300,600,1200", "--seed", "11", "--outdir", outdir];
    v.extend_from_slice(extra);
    v
}

#[test]
fn run_scenario_outputs_and_replay() {
    let dir = tempfile::tempdir().unwrap();
    let first = dir.path().join("first");
    ok(&moe_lab(&scenario_args(p(&first), &["--reps", "3"])));
    for f in ["report.json", "long.csv", "summary.csv", "rates.svg"] {
        assert!(first.join(f).exists(), "{f} missing");
    }
    let report = RateReport::from_json(&fs::read_to_string(first.join("report.json")).unwrap()).unwrap();
    for m in ["err_lambda", "err_a", "err_b", "err_nu"] {
        assert!(report.slope(m).unwrap().is_finite());
    }
    assert_eq!(report.provenance.seed, 11);

    let again = dir.path().join("again");
    ok(&moe_lab(&["run-scenario", "--replay", p(&first.join("report.json")), "--outdir", p(&again)]));
    let replay = RateReport::from_json(&fs::read_to_string(again.join("report.json")).unwrap()).unwrap();
    assert_eq!(replay.slopes, report.slopes);
    assert_eq!(replay, report);
}

#[test]
fn single_replicate_has_no_stderr() {
    let dir = tempfile::tempdir().unwrap();
    ok(&moe_lab(&scenario_args(p(dir.path()), &["--reps", "1"])));
    let summary = fs::read_to_string(dir.path().join("summary.csv")).unwrap();
    let rows: Vec<Vec<&str>> = summary.lines().skip(1).map(|l| l.split(',').collect()).collect();
    assert!(!rows.is_empty());
    assert!(rows.iter().all(|r| r[5].is_empty()));
    let report = RateReport::from_json(&fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    assert!(report.slope("err_a").unwrap().is_finite());
}

#[test]
fn jobs_do_not_change_results() {
    let dir = tempfile::tempdir().unwrap();
    let one = dir.path().join("one");
    let four = dir.path().join("four");
    ok(&moe_lab(&[&["--jobs", "1"][..], &scenario_args(p(&one), &["--reps", "3"])].concat()));
    ok(&moe_lab(&[&["--jobs", "4"][..], &scenario_args(p(&four), &["--reps", "3"])].concat()));
    for f in ["report.json", "long.csv", "summary.csv", "rates.svg"] {
        assert_eq!(fs::read(one.join(f)).unwrap(), fs::read(four.join(f)).unwrap(), "{f} differs");
    }
}

#[test]
fn seed_env_overrides_flag() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str, seed: &str, env: Option<&str>| {
        let out = dir.path().join(name);
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_moe-lab"));
        cmd.args(["generate", "--scenario", "T6", "--case", "vanishing", "--n", "20", "--seed", seed, "--out", p(&out)]);
        match env {
            Some(v) => cmd.env("MOE_LAB_SEED", v),
            None => cmd.env_remove("MOE_LAB_SEED"),
        };
        ok(&cmd.output().unwrap());
        fs::read_to_string(out).unwrap()
    };
    let plain = run("a.csv", "42", None);
    assert_eq!(run("b.csv", "1", Some("42")), plain);
    assert_ne!(run("c.csv", "1", None), plain);

    let bad = Command::new(env!("CARGO_BIN_EXE_moe-lab"))
        .args(["generate", "--scenario", "T2", "--case", "fixed", "--n", "5", "--out", p(&dir.path().join("d.csv"))])
        .env("MOE_LAB_SEED", "abc")
        .output()
        .unwrap();
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn hellinger_subcommand() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("h.json");
    ok(&moe_lab(&["hellinger", "--scenario", "T2", "--case", "fixed", "--grid", "300,600,1200", "--reps", "2", "--mc", "1000", "--out", p(&out)]));
    let v = read_json(&out);
    assert_eq!(v["per_n"].as_array().unwrap().len(), 3);
    assert!(v["per_n"][0]["mean"].as_f64().unwrap() > 0.0);
    assert!(v["slope"]["slope"].as_f64().unwrap().is_finite());
    assert_eq!(v["provenance"]["hellinger"]["mc_n"], 1000);
    assert_eq!(moe_lab(&["hellinger", "--scenario", "T2", "--case", "fixed", "--grid", "300,600,1200", "--mc", "10"]).status.code(), Some(2));
}

#[test]
fn check_suites() {
    for suite in ["heat", "gradients", "losses"] {
        let out = moe_lab(&["check", "--suite", suite, "--samples", "100"]);
        ok(&out);
        let v: Value = serde_json::from_slice(&out.stdout).unwrap();
        assert_eq!(v["passed"], true);
        assert!(v["failures"].as_array().unwrap().is_empty());
    }
    assert_eq!(moe_lab(&["check", "--suite", "bogus"]).status.code(), Some(2));
}

#[test]
fn rejects_unknown_config_fields() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    fs::write(&cfg, r#"{"reps": 2, "grdi": [1]}"#).unwrap();
    let out = moe_lab(&["run-scenario", "--scenario", "T2", "--case", "fixed", "--config", p(&cfg), "--outdir", p(dir.path())]);
    assert_eq!(out.status.code(), Some(3));
    fs::write(&cfg, r#"{"fit": {"mstep_lr": -1.0}}"#).unwrap();
    let out = moe_lab(&["run-scenario", "--scenario", "T2", "--case", "fixed", "--config", p(&cfg), "--outdir", p(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
}
