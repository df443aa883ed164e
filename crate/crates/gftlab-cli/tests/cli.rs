use std::path::PathBuf;
use std::process::{Command, Output};

fn gft_lab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gft-lab")).args(args).output().expect("binary runs")
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("gft-lab-cli-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir.join(name)
}

#[test]
fn simulate_emits_versioned_csv() {
    let out = gft_lab(&["simulate", "--example", "a3", "--param", "m=6", "--mechanism", "buyer_offering", "--mechanism", "fpp", "--exact"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "#gft-lab-v1");
    assert!(lines[1].starts_with("mechanism,instance,samples,seed,gft_mean"));
    assert_eq!(lines.len(), 4);
    assert!(lines[2].starts_with("buyer_offering,"));
}

#[test]
fn identical_configs_give_identical_files() {
    let (a, b) = (scratch("run_a.json"), scratch("run_b.json"));
    for path in [&a, &b] {
        let out = gft_lab(&[
            "simulate", "--example", "random_uniform", "--param", "n=3", "--param", "seed=4", "--mechanism", "fpp",
            "--mechanism", "sapp_unlikely", "--samples", "5000", "--seed", "17", "--format", "json", "--output",
            path.to_str().unwrap(),
        ]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}

#[test]
fn dumped_examples_load_back() {
    let path = scratch("grid.json");
    let out = gft_lab(&["example", "grid_bilateral", "--param", "k=3", "--output", path.to_str().unwrap()]);
    assert!(out.status.success());
    let out = gft_lab(&["oracle", "--instance", path.to_str().unwrap(), "--format", "json"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let doc: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(doc["verdicts"]["all_hold"], true);
}

#[test]
fn lp_dump_is_written() {
    let path = scratch("sb.lp");
    let out = gft_lab(&["oracle", "--example", "grid_bilateral", "--param", "k=2", "--lp-dump", path.to_str().unwrap()]);
    assert!(out.status.success());
    let lp = std::fs::read_to_string(&path).unwrap();
    assert!(lp.starts_with("Maximize"));
    assert!(lp.contains("Subject To") && lp.trim_end().ends_with("End"));
}

#[test]
fn configuration_errors_exit_with_2() {
    let bad_json = scratch("bad.json");
    std::fs::write(&bad_json, "{ not json").unwrap();
    let cases: Vec<Vec<&str>> = vec![
        vec!["simulate", "--example", "a3", "--param", "m=6", "--mechanism", "auction", "--exact"],
        vec!["simulate", "--example", "a3", "--param", "m=6", "--mechanism", "fpp", "--samples", "10"],
        vec!["simulate", "--example", "nope", "--mechanism", "fpp", "--exact"],
        vec!["simulate", "--example", "a3", "--param", "m=1", "--mechanism", "fpp", "--exact"],
        vec!["bounds", "--instance", bad_json.to_str().unwrap(), "--exact"],
        vec!["simulate", "--instance", "/nonexistent/instance.json", "--mechanism", "fpp", "--exact"],
    ];
    for args in cases {
        let out = gft_lab(&args);
        assert_eq!(out.status.code(), Some(2), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    }
}

#[test]
fn continuous_oracle_requests_exit_with_3() {
    let out = gft_lab(&["oracle", "--example", "a1", "--param", "t=5"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("discretize first"));
}

#[test]
fn bounds_reports_the_bilateral_sweep() {
    let out = gft_lab(&["bounds", "--example", "uniform_bilateral", "--samples", "20000", "--seed", "1", "--format", "json"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let doc: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let fb = doc["bilateral"]["first_best"].as_f64().unwrap();
    assert!((fb - 1.0 / 6.0).abs() < 1e-6);
    assert!((doc["bilateral"]["best_fixed_price"].as_f64().unwrap() - 0.5).abs() < 0.01);
}

#[test]
fn single_criteria_run_from_the_command_line() {
    let out = gft_lab(&["selftest", "--criterion", "7"]);
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.starts_with("criterion 7 "), "{text}");
    assert!(out.status.success(), "{text}");
}
