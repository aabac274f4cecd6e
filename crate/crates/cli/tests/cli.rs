use std::path::Path;
use std::process::{Command, Output};

fn gpllm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gpllm")).args(args).env("GPLLM_WORKERS", "1").output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = gpllm(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn write_config(dir: &Path, data: &Path) -> std::path::PathBuf {
    let path = dir.join("fit.toml");
    let text = format!(
        "model = \"gpllm\"\nseed = 3\n\n[data]\nsource = \"csv\"\npath = {:?}\nresponse = \"y\"\n\n[mcmc]\nn_burn = 50\nn_keep = 100\n",
        data
    );
    std::fs::write(&path, text).unwrap();
    path
}

#[test]
fn simulate_then_fit_writes_report_and_predictions() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("linear.csv");
    ok(&["simulate", "--surface", "linear", "--n", "30", "--seed", "2", "--output", data.to_str().unwrap()]);
    let csv = std::fs::read_to_string(&data).unwrap();
    assert_eq!(csv.lines().count(), 31);
    assert_eq!(csv.lines().next().unwrap().split(',').last(), Some("y"));

    let cfg = write_config(dir.path(), &data);
    let out = dir.path().join("out");
    let report = ok(&["fit", "--config", cfg.to_str().unwrap(), "--output", out.to_str().unwrap()]);
    assert!(report.contains("rmse_observed_mean"), "{report}");
    assert!(out.join("report.toml").exists());
    let preds = std::fs::read_to_string(out.join("predictions_0.csv")).unwrap();
    assert_eq!(preds.lines().next().unwrap(), "x1,mean,variance,q05,q95,llm_weight");
    assert_eq!(preds.lines().count(), 31);
}

#[test]
fn fit_is_deterministic_for_a_seed() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.csv");
    ok(&["simulate", "--surface", "linear", "--n", "20", "--output", data.to_str().unwrap()]);
    let cfg = write_config(dir.path(), &data);
    let strip = |s: String| s.lines().take_while(|l| !l.starts_with("[timing]")).collect::<Vec<_>>().join("\n");
    let a = strip(ok(&["fit", "--config", cfg.to_str().unwrap()]));
    let b = strip(ok(&["fit", "--config", cfg.to_str().unwrap()]));
    assert_eq!(a, b);
}

#[test]
fn explore_writes_a_surface() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.csv");
    let surface = dir.path().join("s.csv");
    ok(&["simulate", "--surface", "linear", "--n", "10", "--output", data.to_str().unwrap()]);
    let out = gpllm(&[
        "explore", "--data", data.to_str().unwrap(), "--response", "y", "--d-points", "5", "--g-points", "4",
        "--output", surface.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("likelihood ratio"));
    assert!(std::fs::read_to_string(&surface).unwrap().lines().count() > 1);
}

#[test]
fn bad_inputs_exit_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "model = \"gp\"\ncolour = 1\n[data]\nsource = \"linear\"\nn = 10\n").unwrap();
    for args in [
        vec!["fit", "--config", bad.to_str().unwrap()],
        vec!["fit", "--recipe", "friedman", "--model", "svm"],
        vec!["fit", "--recipe", "nonexistent"],
        vec!["bench", "nonexistent"],
        vec!["fit", "--recipe", "linear", "--traces"],
    ] {
        let out = gpllm(&args);
        assert!(!out.status.success(), "{args:?} should fail");
        assert!(!out.stderr.is_empty());
    }
}
