use std::path::Path;
use std::process::{Command, Output};
use std::time::Instant;

use scalevec::data::{save_fold, Fold};
use scalevec::verify::suites::synthetic_records;

fn scalevec(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_scalevec"))
        .args(args)
        .env_remove("SCALEVEC_DATA_DIR")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn write_fold(dir: &Path) -> String {
    let mut recs = synthetic_records(300, 21);
    let test = recs.split_off(280);
    let val = recs.split_off(256);
    let path = dir.join("fold.mscl");
    save_fold(&path, &Fold { train: recs, val, test }).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn help_succeeds_and_bad_arguments_exit_with_one() {
    assert_eq!(code(&scalevec(&["--help"])), 0);
    assert_eq!(code(&scalevec(&[])), 1);
    assert_eq!(code(&scalevec(&["frobnicate"])), 1);
    let out = scalevec(&["train", "--variant", "quantum", "--out", "/nonexistent"]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("quantum"));
}

#[test]
fn smoke_train_then_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let fold = write_fold(dir.path());
    let run = dir.path().join("run");
    let run_s = run.to_str().unwrap();

    let t = Instant::now();
    let out = scalevec(&["train", "--fold-path", &fold, "--epochs", "1", "--limit-train", "256", "--out", run_s]);
    let secs = t.elapsed().as_secs_f64();
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(secs < 60.0, "smoke run took {secs:.1}s");

    let csv = std::fs::read_to_string(run.join("metrics.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "epoch,train_loss,val_error_pct,val_scale_rmse,wall_seconds");
    assert_eq!(lines.len(), 2);
    assert!(lines[1].starts_with("1,"));
    let echo: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(run.join("run.json")).unwrap()).unwrap();
    assert_eq!(echo["model"]["variant"], "equivariant");

    let ckpt = run.join("model.ckpt");
    let ckpt_s = ckpt.to_str().unwrap();
    let out = scalevec(&["eval", "--checkpoint", ckpt_s, "--fold-path", &fold, "--split", "test"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["n"], 20);
    assert!(report["classification_error_pct"].as_f64().unwrap() <= 100.0);

    let out = scalevec(&["eval", "--checkpoint", ckpt_s, "--fold-path", &fold, "--split", "holdout"]);
    assert_eq!(code(&out), 1);
}

#[test]
fn check_suites_report_json() {
    let out = scalevec(&["check", "oracle", "--cases", "25"]);
    assert_eq!(code(&out), 0);
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["passed"], true);
    assert_eq!(report["cases"], 25);

    let out = scalevec(&["check", "equivariance", "--mnist-dir", "/nonexistent/mnist", "--images", "2"]);
    assert_eq!(code(&out), 1);
}

#[test]
fn reproduce_resumes_finished_runs() {
    let dir = tempfile::tempdir().unwrap();
    for (variant, err) in [("standard", 3.0), ("invariant", 2.8), ("equivariant", 2.5)] {
        let d = dir.path().join(format!("fold0-{variant}"));
        std::fs::create_dir_all(&d).unwrap();
        let v = serde_json::json!({"fold": 0, "variant": variant, "classification_error_pct": err,
                                   "scale_rmse": 0.1, "n": 50000});
        std::fs::write(d.join("test.json"), v.to_string()).unwrap();
    }
    let out_dir = dir.path().to_str().unwrap();
    let out = scalevec(&["--data-dir", "/nonexistent", "reproduce", "--folds", "0", "--out", out_dir]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let results: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("results.json")).unwrap()).unwrap();
    assert_eq!(results["summary"]["equivariant"]["mean_error_pct"], 2.5);
    assert_eq!(results["summary"]["standard"]["folds"], 1);
    assert_eq!(results["runs"].as_array().unwrap().len(), 3);
}
