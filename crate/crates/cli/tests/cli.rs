use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn zvcv(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_zvcv")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> Output {
    let out = zvcv(args);
    assert!(out.status.success(), "zvcv {args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn read_json(p: impl AsRef<Path>) -> Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

fn write_model(dir: &Path, json: &str) -> PathBuf {
    let p = dir.join("model.json");
    fs::write(&p, json).unwrap();
    p
}

const GAUSSIAN: &str = r#"{"kind": "gaussian", "mean": [3.0, -1.0], "sd": [2.0, 0.5]}"#;
const CONJUGATE: &str = r#"{"kind": "conjugate_gaussian", "prior_mean": [0.0], "prior_sd": 2.0, "noise_sd": 1.0,
    "synthetic": {"truth": [0.4], "n": 10, "seed": 1}}"#;

fn s(p: &Path) -> String {
    p.display().to_string()
}

#[test]
fn prior_only_model_gives_one_step_schedule_and_no_replicates() {
    let tmp = tempfile::tempdir().unwrap();
    let model = write_model(tmp.path(), GAUSSIAN);
    let out = tmp.path().join("run");
    ok(&["smc", "--model", &s(&model), "--n", "100", "--out", &s(&out)]);
    let sched = read_json(out.join("schedule.json"));
    assert_eq!(sched["temperatures"], serde_json::json!([0.0, 1.0]));
    assert!(out.join("pilot/manifest.json").exists());
    assert!(!out.join("replicate_001").exists());
    let cfg = read_json(out.join("run_config.json"));
    assert_eq!(cfg["replicates"], 0);
    assert_eq!(cfg["smc"]["n"], 100);
}

#[test]
fn postprocess_vanilla_and_zv1_on_gaussian_archive() {
    let tmp = tempfile::tempdir().unwrap();
    let model = write_model(tmp.path(), GAUSSIAN);
    let run = tmp.path().join("run");
    ok(&["smc", "--model", &s(&model), "--n", "50", "--seed", "3", "--out", &s(&run)]);
    let est = tmp.path().join("est.json");
    ok(&["postprocess", "--archive", &s(&run.join("pilot")), "--methods", "vanilla,zv:Q=1", "--out", &s(&est)]);
    let v = read_json(&est);
    let rows = v["results"].as_array().unwrap();
    assert_eq!(rows.len(), 4);
    let get = |integrand: &str, method: &str| {
        rows.iter().find(|r| r["integrand"] == integrand && r["method"] == method).unwrap()["estimate"].as_f64().unwrap()
    };
    assert!((get("theta_1", "ZV1") - 3.0).abs() < 1e-9);
    assert!((get("theta_2", "ZV1") + 1.0).abs() < 1e-9);

    // vanilla is the plain weighted mean of the archived draws
    let pilot = zvcv::smc::read_system(run.join("pilot")).unwrap().0;
    let set = pilot.sample_set_at(1.0).unwrap();
    let mean: f64 = set.theta().column(0).iter().zip(set.weights()).map(|(t, w)| t * w).sum();
    assert!((get("theta_1", "vanilla") - mean).abs() < 1e-12);
    assert!(tmp.path().join("est.json.timing.json").exists());
}

#[test]
fn postprocess_single_csv_and_square_integrand() {
    let tmp = tempfile::tempdir().unwrap();
    let model = write_model(tmp.path(), GAUSSIAN);
    let run = tmp.path().join("run");
    ok(&["smc", "--model", &s(&model), "--n", "40", "--out", &s(&run)]);
    let manifest = read_json(run.join("pilot/manifest.json"));
    let last = manifest["files"].as_array().unwrap().last().unwrap().as_str().unwrap().to_string();
    let out = zvcv(&["postprocess", "--archive", &s(&run.join("pilot").join(last)), "--integrands", "square:2", "--methods", "zv:Q=2"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    let e = v["results"][0]["estimate"].as_f64().unwrap();
    // E θ₂² = 1 + 0.25, exact for a quadratic basis on a Gaussian
    assert!((e - 1.25).abs() < 1e-8, "{e}");
}

#[test]
fn config_errors_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let model = write_model(tmp.path(), GAUSSIAN);
    let run = tmp.path().join("run");
    ok(&["smc", "--model", &s(&model), "--n", "20", "--out", &s(&run)]);
    let pilot = s(&run.join("pilot"));
    assert_eq!(zvcv(&["postprocess", "--archive", &pilot, "--methods", "bogus"]).status.code(), Some(2));
    assert_eq!(zvcv(&["postprocess", "--archive", &pilot, "--integrands", "theta:9"]).status.code(), Some(2));
    assert_eq!(zvcv(&["evidence", "--archive", &pilot, "--estimator", "cti9"]).status.code(), Some(2));
    assert_eq!(zvcv(&["smc", "--model", &s(&model), "--rho", "1.5", "--out", &s(&run)]).status.code(), Some(2));
    let bad = tmp.path().join("bad.json");
    fs::write(&bad, r#"{"kind": "nonsense"}"#).unwrap();
    assert_eq!(zvcv(&["smc", "--model", &s(&bad), "--out", &s(&run)]).status.code(), Some(2));
}

#[test]
fn missing_files_exit_4() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = s(&tmp.path().join("nope.json"));
    assert_eq!(zvcv(&["smc", "--model", &missing, "--out", &s(tmp.path())]).status.code(), Some(4));
    assert_eq!(zvcv(&["evidence", "--archive", &missing]).status.code(), Some(4));
}

#[test]
fn evidence_missing_final_snapshot_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let model = write_model(tmp.path(), CONJUGATE);
    let run = tmp.path().join("run");
    ok(&["smc", "--model", &s(&model), "--n", "100", "--out", &s(&run)]);
    let dir = run.join("pilot");
    let path = dir.join("manifest.json");
    let mut m = read_json(&path);
    for key in ["temperatures", "files", "grad_log_like_files", "log_increments"] {
        m[key].as_array_mut().unwrap().pop();
    }
    fs::write(&path, serde_json::to_string(&m).unwrap()).unwrap();
    let out = zvcv(&["evidence", "--archive", &s(&dir)]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn evidence_vanilla_cti1_and_posthoc_schedule() {
    let tmp = tempfile::tempdir().unwrap();
    let model = write_model(tmp.path(), CONJUGATE);
    let run = tmp.path().join("run");
    ok(&["smc", "--model", &s(&model), "--n", "400", "--seed", "2", "--out", &s(&run)]);
    let dir = run.join("pilot");
    let ev = tmp.path().join("ev.json");
    ok(&["evidence", "--archive", &s(&dir), "--estimator", "cti1", "--out", &s(&ev)]);
    let v = read_json(&ev);

    // first-order CTI with no control variates is the trapezoid of raw means
    let ps = zvcv::smc::read_system(&dir).unwrap().0;
    let t = ps.temperatures();
    let means: Vec<f64> = t.iter().map(|&ti| {
        let set = ps.sample_set_at(ti).unwrap();
        set.log_like().unwrap().iter().zip(set.weights()).map(|(l, w)| l * w).sum()
    }).collect();
    let trap: f64 = (1..t.len()).map(|j| 0.5 * (t[j] - t[j - 1]) * (means[j] + means[j - 1])).sum();
    let got = v["results"][0]["estimate"].as_f64().unwrap();
    assert!((got - trap).abs() < 1e-9 * trap.abs().max(1.0), "{got} vs {trap}");

    let post = tmp.path().join("post.json");
    ok(&["evidence", "--archive", &s(&dir), "--posthoc-rho", "0.9", "--methods", "vanilla,zv:Q=2", "--out", &s(&post)]);
    let v = read_json(&post);
    assert_eq!(v["posthoc_rho"], 0.9);
    assert_eq!(v["reports"].as_array().unwrap().len(), 2);
    let temps = v["schedule"]["temperatures"].as_array().unwrap();
    assert_eq!(temps.first().unwrap().as_f64(), Some(0.0));
    assert_eq!(temps.last().unwrap().as_f64(), Some(1.0));
}

#[test]
fn replicates_are_deterministic_and_distinct() {
    let tmp = tempfile::tempdir().unwrap();
    let model = write_model(tmp.path(), CONJUGATE);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for out in [&a, &b] {
        ok(&["smc", "--model", &s(&model), "--n", "100", "--replicates", "2", "--seed", "9", "--jobs", "2", "--out", &s(out)]);
    }
    for f in ["run_config.json", "schedule.json", "pilot/manifest.json", "replicate_001/manifest.json", "replicate_002/samples_000.csv"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    assert_ne!(fs::read(a.join("replicate_001/samples_000.csv")).unwrap(), fs::read(a.join("replicate_002/samples_000.csv")).unwrap());
    let p = read_json(a.join("pilot/manifest.json"));
    let r = read_json(a.join("replicate_001/manifest.json"));
    assert_eq!(p["temperatures"], r["temperatures"]);
    assert!(a.join("timing.json").exists());
}

fn estimates_file(dir: &Path, name: &str, rows: &[(&str, f64)]) -> String {
    let results: Vec<Value> = rows
        .iter()
        .map(|(m, e)| serde_json::json!({"integrand": "theta_1", "method": m, "estimate": e}))
        .collect();
    let p = dir.join(name);
    fs::write(&p, serde_json::json!({"n": 10, "dim": 1, "seed": 0, "results": results}).to_string()).unwrap();
    s(&p)
}

#[test]
fn efficiency_from_hand_built_files() {
    let tmp = tempfile::tempdir().unwrap();
    // vanilla errors ±2, ZV errors ±1 around the gold value 0; CF identical to vanilla
    let f1 = estimates_file(tmp.path(), "r1.json", &[("vanilla", 2.0), ("ZV2", 1.0), ("CF", 2.0), ("exact", 0.0)]);
    let f2 = estimates_file(tmp.path(), "r2.json", &[("vanilla", -2.0), ("ZV2", -1.0), ("CF", -2.0), ("exact", 0.0)]);
    let csv_path = tmp.path().join("eff.csv");
    let md = tmp.path().join("eff.md");
    ok(&["efficiency", "--estimates", &f1, &f2, "--gold", "0", "--out", &s(&csv_path), "--markdown", &s(&md)]);
    let mut rdr = csv::Reader::from_path(&csv_path).unwrap();
    let mut eff = std::collections::BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec.unwrap();
        eff.insert(rec[1].to_string(), rec[7].parse::<f64>().unwrap());
    }
    assert_eq!(eff["vanilla"], 1.0);
    assert_eq!(eff["CF"], 1.0);
    assert_eq!(eff["ZV2"], 4.0);
    assert_eq!(eff["exact"], 1e12);
    assert!(fs::read_to_string(&md).unwrap().contains("> 1e12"));

    let out = zvcv(&["efficiency", "--estimates", &f1, "--baseline", "nothing"]);
    assert_eq!(out.status.code(), Some(2));
}
