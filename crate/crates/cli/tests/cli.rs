use std::process::{Command, Output};

fn rqopt(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rqopt")).args(args).output().expect("spawn rqopt")
}

fn error_line(out: &Output) -> serde_json::Value {
    let text = String::from_utf8_lossy(&out.stderr);
    serde_json::from_str(text.lines().last().expect("an error line")).expect("error line is json")
}

#[test]
fn run_writes_artifacts_and_report_recomputes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("s2");
    let r = rqopt(&["run", "--scenario", "scenario2", "--policy", "adrenaline", "--out", out.to_str().unwrap()]);
    assert!(r.status.success());
    let printed: serde_json::Value = serde_json::from_slice(&r.stdout).unwrap();
    for f in ["trace.csv", "decisions.jsonl", "report.json"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let header = std::fs::read_to_string(out.join("trace.csv")).unwrap();
    assert!(header.starts_with("time_s,client_id,game,rq,qp,fps,above_threshold\n"));

    let again = rqopt(&["report", "--trace", out.join("trace.csv").to_str().unwrap()]);
    assert!(again.status.success());
    let recomputed: serde_json::Value = serde_json::from_slice(&again.stdout).unwrap();
    assert_eq!(printed, recomputed);
}

#[test]
fn compare_writes_each_policy() {
    let dir = tempfile::tempdir().unwrap();
    let r = rqopt(&[
        "compare",
        "--scenario",
        "scenario1",
        "--policies",
        "adrenaline,djay",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(r.status.success());
    assert!(dir.path().join("adrenaline/trace.csv").exists());
    assert!(dir.path().join("djay/report.json").exists());
    let c: serde_json::Value = serde_json::from_slice(&r.stdout).unwrap();
    assert_eq!(c["policies"].as_array().unwrap().len(), 2);
}

#[test]
fn train_reports_rmse_and_saves_model() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("q.csv");
    let mut csv = String::from("scene,location,rq,qp,vmaf\n");
    for loc in ["a", "b"] {
        for (rq, base) in [("low", 24.0), ("medium", 51.0), ("high", 65.0), ("very_high", 81.0)] {
            for (qp, drop) in [(10, 0.0), (30, 4.0), (40, 20.0)] {
                csv.push_str(&format!("village,{loc},{rq},{qp},{}\n", base - drop));
            }
        }
    }
    std::fs::write(&data, csv).unwrap();
    let model = dir.path().join("model.json");
    let r = rqopt(&[
        "train",
        "--data",
        data.to_str().unwrap(),
        "--test-location",
        "b",
        "--max-depth",
        "6",
        "--out",
        model.to_str().unwrap(),
    ]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let v: serde_json::Value = serde_json::from_slice(&r.stdout).unwrap();
    assert_eq!(v["test_samples"], 12);
    assert!(v["rmse"].as_f64().unwrap() < 1e-9);
    assert!(model.exists());

    let missing = rqopt(&["train", "--data", data.to_str().unwrap(), "--test-location", "zzz", "--out", model.to_str().unwrap()]);
    assert_eq!(missing.status.code(), Some(1));
    assert_eq!(error_line(&missing)["error"], "quality");
}

#[test]
fn failures_are_machine_readable() {
    let r = rqopt(&["run", "--scenario", "scenario9"]);
    assert_eq!(r.status.code(), Some(1));
    assert_eq!(error_line(&r)["error"], "scenario");

    let r = rqopt(&["run", "--scenario", "scenario1", "--policy", "greedy"]);
    assert_eq!(r.status.code(), Some(1));
    assert_eq!(error_line(&r)["error"], "policy");

    let r = rqopt(&["compare", "--scenario", "scenario1", "--policies", "djay"]);
    assert_eq!(r.status.code(), Some(2));

    let r = rqopt(&["frobnicate"]);
    assert_eq!(r.status.code(), Some(2));
    assert_eq!(error_line(&r)["error"], "usage");

    let r = rqopt(&["serve", "--listen", "256.0.0.1:1"]);
    assert_eq!(r.status.code(), Some(1));
    assert_eq!(error_line(&r)["error"], "service");
}
