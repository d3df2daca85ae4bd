use std::path::Path;
use std::process::{Command, Output};

fn fri(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fri")).args(args).output().unwrap()
}

fn write_config(dir: &Path, method: &str) -> String {
    let path = dir.join("config.json");
    let text = format!(
        r#"{{"method": "{method}", "psnr": [null], "dt0": [0.05], "realizations": 10, "seed": 4,
            "output_dir": "{}"}}"#,
        dir.join("out").display()
    );
    std::fs::write(&path, text).unwrap();
    path.to_string_lossy().into_owned()
}

#[test]
fn synth_then_reconstruct_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "prony-cadzow");
    let real = dir.path().join("real");
    let out = fri(&["synth", "--config", &cfg, "--index", "3", "--out", real.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let est = dir.path().join("est.csv");
    let samples = real.join("samples.csv");
    let out = fri(&["reconstruct", "--config", &cfg, "--samples", samples.to_str().unwrap(), "--out", est.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let read = |p: &Path| {
        let mut v: Vec<f64> = std::fs::read_to_string(p)
            .unwrap()
            .lines()
            .skip(1)
            .map(|l| l.split(',').next().unwrap().parse().unwrap())
            .collect();
        v.sort_by(f64::total_cmp);
        v
    };
    let truth = read(&real.join("stream.csv"));
    let got = read(&est);
    assert_eq!(truth.len(), 2);
    for (a, b) in truth.iter().zip(&got) {
        assert!((a - b).abs() < 1e-8, "{truth:?} vs {got:?}");
    }
}

#[test]
fn montecarlo_writes_grid_and_honours_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "prony-pwgd");
    let out = fri(&["montecarlo", "--config", &cfg, "--set", "dt0=[0.05,0.1]"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let grid = std::fs::read_to_string(dir.path().join("out/sd_mean.csv")).unwrap();
    assert_eq!(grid.lines().next().unwrap(), "psnr,0.05,0.1");
    let summary: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(summary["cells"].as_array().unwrap().len(), 2);
    assert!(summary["config_hash"].is_string());
}

#[test]
fn config_errors_exit_with_code_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "prony-cadzow");
    let out = fri(&["montecarlo", "--config", &cfg, "--set", "bogus=1"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("bogus"));
    let bad = write_config(dir.path(), "not-a-method");
    assert_eq!(fri(&["train", "--config", &bad]).status.code(), Some(2));
}

#[test]
fn numerical_failures_exit_with_code_3() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "prony-cadzow");
    let zeros = dir.path().join("zeros.csv");
    std::fs::write(&zeros, "0\n".repeat(21)).unwrap();
    let out = fri(&["reconstruct", "--config", &cfg, "--samples", zeros.to_str().unwrap(), "--out", "/dev/null"]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn breakdown_map_emits_one_row_per_grid_point() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("curve.csv");
    let out = fri(&["breakdown-map", "--points", "30", "--hi", "0.3162", "--out", path.to_str().unwrap()]);
    assert!(out.status.success());
    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(text.lines().next().unwrap(), "dt0,dt0_over_t,breakdown_psnr,error");
    assert_eq!(text.lines().count(), 31);
}

#[test]
fn eval_roc_scores_perfect_detections() {
    let dir = tempfile::tempdir().unwrap();
    let p = |name: &str| dir.path().join(name).to_string_lossy().into_owned();
    let mut trace = String::from("time,fluorescence\n");
    for i in 0..600 {
        trace += &format!("{},{}\n", i as f64 / 60.0, 1.0);
    }
    std::fs::write(p("trace.csv"), trace).unwrap();
    std::fs::write(p("spikes.csv"), "1.0\n4.5\n7.25\n").unwrap();
    std::fs::write(p("det.csv"), "time,probability\n1.01,0.9\n4.5,0.6\n7.26,0.3\n9.0,0.2\n").unwrap();
    let out = fri(&["eval-roc", "--detections", &p("det.csv"), "--spikes", &p("spikes.csv"), "--trace", &p("trace.csv"), "--out", &p("roc.csv")]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let roc = std::fs::read_to_string(p("roc.csv")).unwrap();
    let row = |thr: &str| roc.lines().find(|l| l.starts_with(&format!("{thr},"))).unwrap().to_string();
    assert!(row("0").starts_with("0,1,"), "{roc}");
    assert!(row("0.5").starts_with("0.5,0.6666666666666666,0"), "{roc}");
}

#[test]
fn calcium_detect_requires_a_valid_config() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cal.json");
    std::fs::write(&path, r#"{"seed": 1, "output_dir": "x", "threshold": 2.0}"#).unwrap();
    assert_eq!(fri(&["calcium-detect", "--config", path.to_str().unwrap()]).status.code(), Some(2));
}
