//! Exit codes and outputs of the command-line driver.

use etcl::bench::cli::run_cli;
use etcl::bench::report::RunReport;

const CONFIG: &str = r#"{
  "network": {"layers": [16, 20, 20], "headSize": 4},
  "train": {"epochs": 1, "lr": 0.05, "seed": 2},
  "sequence": {"kind": "mixed", "similar": 2, "dissimilar": 1, "noiseScale": 0.1,
               "dim": 16, "classes": 4, "train": 60, "val": 10, "test": 30}
}"#;

fn cli(args: &[&str]) -> i32 {
    run_cli(std::iter::once("etcl").chain(args.iter().copied()))
}

#[test]
fn usage_and_config_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("r.json");
    let out = out.to_str().unwrap();
    assert_eq!(cli(&["--help"]), 0);
    assert_eq!(cli(&[]), 2);
    assert_eq!(cli(&["train"]), 2);
    assert_eq!(cli(&["run", "--out", out]), 2);
    assert_eq!(cli(&["run", "--config", "/nonexistent/cfg.json", "--out", out]), 2);

    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, CONFIG.replace("\"lr\"", "\"momentum\"")).unwrap();
    assert_eq!(cli(&["run", "--config", bad.to_str().unwrap(), "--out", out]), 2);
    std::fs::write(&bad, CONFIG.replace("\"classes\": 4", "\"classes\": 0")).unwrap();
    assert_eq!(cli(&["run", "--config", bad.to_str().unwrap(), "--out", out]), 2);
    assert!(!std::path::Path::new(out).exists());
}

#[test]
fn run_writes_reproducible_report_and_tables() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, CONFIG).unwrap();
    let cfg = cfg.to_str().unwrap();
    let a = dir.path().join("a.json");
    let b = dir.path().join("b.json");
    let csv = dir.path().join("csv");
    assert_eq!(cli(&["run", "--config", cfg, "--out", a.to_str().unwrap(), "--csv", csv.to_str().unwrap()]), 0);
    assert_eq!(cli(&["run", "--config", cfg, "--out", b.to_str().unwrap()]), 0);
    let text = std::fs::read_to_string(&a).unwrap();
    assert_eq!(text, std::fs::read_to_string(&b).unwrap());

    let report: RunReport = serde_json::from_str(&text).unwrap();
    assert_eq!(report.accuracy.len(), 3);
    assert!(report.fwt.is_some() && report.bwt.is_some());
    assert_eq!(report.families.as_ref().map(Vec::len), Some(3));
    assert!(report.sdm.is_some());
    for name in ["acc_matrix.csv", "ati_task0.csv", "ati_task2.csv", "similarity.csv", "timings.csv"] {
        assert!(csv.join(name).exists(), "{name}");
    }
    let sim = std::fs::read_to_string(csv.join("similarity.csv")).unwrap();
    // one line per (task, prior) pair plus the header
    assert_eq!(sim.lines().count(), 1 + 0 + 1 + 2);
    assert!(!text.contains("seconds"));

    let no_base = dir.path().join("n.json");
    assert_eq!(cli(&["run", "--config", cfg, "--out", no_base.to_str().unwrap(), "--no-baselines"]), 0);
    let report: RunReport = serde_json::from_str(&std::fs::read_to_string(&no_base).unwrap()).unwrap();
    assert_eq!(report.fwt, None);

    let one = dir.path().join("one.json");
    assert_eq!(cli(&["one", "--config", cfg, "--out", one.to_str().unwrap()]), 0);
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&one).unwrap()).unwrap();
    assert_eq!(v["baselines"].as_array().unwrap().len(), 3);
}

#[test]
fn verify_bounds_and_stress_succeed() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("b.json");
    assert_eq!(cli(&["verify-bounds", "--trials", "200", "--seed", "7", "--out", out.to_str().unwrap()]), 0);
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(v["trials"], 200);
    let stress = dir.path().join("s.json");
    assert_eq!(cli(&["stress", "--tasks", "3", "--out", stress.to_str().unwrap()]), 0);
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&stress).unwrap()).unwrap();
    assert_eq!(v["perTask"].as_array().unwrap().len(), 3);
}
