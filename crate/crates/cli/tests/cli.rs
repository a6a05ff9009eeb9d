use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/data/small.toml");

fn petc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_petc")).args(args).output().expect("petc runs")
}

fn ok(args: &[&str]) -> String {
    let out = petc(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn read(dir: &Path, name: &str) -> String {
    std::fs::read_to_string(dir.join(name)).unwrap()
}

#[test]
fn full_pipeline_on_a_small_grid() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let msg = ok(&["abstract", "--config", SMALL, "--out", out]);
    assert!(msg.contains("16 regions, 65 states"), "{msg}");
    let imc: serde_json::Value = serde_json::from_str(&read(dir.path(), "imc.json")).unwrap();
    assert_eq!(imc["metadata"]["partition"]["grid"], serde_json::json!([4, 4]));

    ok(&["analyze", "--config", SMALL, "--out", out]);
    let bounds = read(dir.path(), "bounds.csv");
    let mut lines = bounds.lines();
    assert_eq!(lines.next(), Some("region_index,s,lower,upper"));
    let rows: Vec<Vec<f64>> = lines.map(|l| l.split(',').map(|v| v.parse().unwrap()).collect()).collect();
    assert_eq!(rows.len(), 16);
    for r in &rows {
        assert_eq!(r[1], 0.0);
        assert!(0.0 <= r[2] && r[2] <= r[3] && r[3] <= 1.0);
    }
    let side: serde_json::Value = serde_json::from_str(&read(dir.path(), "bounds.json")).unwrap();
    assert_eq!(side["bounds"]["horizon"], 5);

    ok(&["simulate", "--config", SMALL, "--out", out, "--samples"]);
    let first = read(dir.path(), "estimates.csv");
    assert_eq!(first.lines().count(), 1 + 4);
    assert!(read(dir.path(), "samples.csv").starts_with("region_index,path_id,trigger_index,tau,x0,x1\n"));
    ok(&["simulate", "--config", SMALL, "--out", out, "--threads", "1"]);
    assert_eq!(read(dir.path(), "estimates.csv"), first);

    ok(&["report", "--config", SMALL, "--out", out]);
    let report: serde_json::Value = serde_json::from_str(&read(dir.path(), "report.json")).unwrap();
    assert_eq!(report["regions"], 4);
    assert!(report["containment_rate"].as_f64().unwrap() >= 0.75);

    // A different system must not be analyzed with this abstraction.
    let other = dir.path().join("other.toml");
    std::fs::write(&other, std::fs::read_to_string(SMALL).unwrap().replace("eps = 0.25", "eps = 0.3")).unwrap();
    let res = petc(&["analyze", "--config", other.to_str().unwrap(), "--out", out]);
    assert!(!res.status.success());
    assert!(String::from_utf8_lossy(&res.stderr).contains("different system"));
}

#[test]
fn seed_changes_estimates() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    ok(&["simulate", "--config", SMALL, "--out", out, "--seed", "5"]);
    let a = read(dir.path(), "estimates.csv");
    ok(&["simulate", "--config", SMALL, "--out", out, "--seed", "5"]);
    assert_eq!(read(dir.path(), "estimates.csv"), a);
    ok(&["simulate", "--config", SMALL, "--out", out, "--seed", "6"]);
    assert_ne!(read(dir.path(), "estimates.csv"), a);
}

fn config_error(edit: impl Fn(&str) -> String) -> String {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    std::fs::write(&path, edit(&std::fs::read_to_string(SMALL).unwrap())).unwrap();
    let res = petc(&["simulate", "--config", path.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert!(!res.status.success());
    String::from_utf8_lossy(&res.stderr).into_owned()
}

#[test]
fn missing_noise_gain_is_named() {
    let err = config_error(|s| s.lines().filter(|l| !l.starts_with("bw")).collect::<Vec<_>>().join("\n"));
    assert!(err.contains("bw"), "{err}");
}

#[test]
fn inconsistent_dimensions_are_named() {
    let err = config_error(|s| s.replace("k = [[-2.0, 3.0]]", "k = [[-2.0, 3.0, 1.0]]"));
    assert!(err.contains("system.k"), "{err}");
    let err = config_error(|s| s.replace("grid = [4, 4]", "grid = [4]"));
    assert!(err.contains("partition.grid"), "{err}");
    let err = config_error(|s| s.replace("integration = 1e-5", "integration = -1.0"));
    assert!(err.contains("tolerances.integration"), "{err}");
}

#[test]
fn grid_override_and_tabulated_rewards() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let cfg = dir.path().join("tab.toml");
    let text = std::fs::read_to_string(SMALL)
        .unwrap()
        .replace("y_lower = [-0.4, -0.4]", "y_lower = [-0.2, -0.2]")
        .replace("y_upper = [0.4, 0.4]", "y_upper = [0.2, 0.2]")
        .replace("kind = \"mul\"", "kind = \"cum\"\ngamma = 0.9")
        .replace("reward = { type = \"no-kbar-indicator\" }", "reward = { type = \"tabulated\", values = [0.0, 1.0, 2.0, 3.0] }");
    std::fs::write(&cfg, text).unwrap();
    let msg = ok(&["abstract", "--config", cfg.to_str().unwrap(), "--out", out, "--grid", "1x1", "--tol", "1e-4"]);
    assert!(msg.contains("1 regions, 5 states"), "{msg}");
    ok(&["analyze", "--config", cfg.to_str().unwrap(), "--out", out, "--grid", "1x1"]);
    let bounds = read(dir.path(), "bounds.csv");
    let row: Vec<f64> = bounds.lines().nth(1).unwrap().split(',').map(|v| v.parse().unwrap()).collect();
    // From s = 0 the reward is 0 now and between 1 and 3 at each of the next five triggers.
    let disc: f64 = (1..=5).map(|i| 0.9f64.powi(i)).sum();
    assert!(row[2] >= disc - 1e-9 && row[3] <= 3.0 * disc + 1e-9, "{row:?}");
}

#[test]
fn reference_config_is_valid() {
    let cfg = concat!(env!("CARGO_MANIFEST_DIR"), "/configs/reference.toml");
    let dir = tempfile::tempdir().unwrap();
    let res = petc(&["analyze", "--config", cfg, "--out", dir.path().to_str().unwrap()]);
    let err = String::from_utf8_lossy(&res.stderr);
    assert!(!res.status.success() && err.contains("imc.json"), "{err}");
}
