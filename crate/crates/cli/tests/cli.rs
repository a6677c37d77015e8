//! End-to-end CLI checks: exit codes, output files, and comparison.

use std::path::Path;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_lora-cluster-sim"))
}

#[test]
fn simulate_preset_writes_all_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    let status = bin()
        .args(["simulate", "--preset", "baseline-4-node", "--seed", "7"])
        .arg("--out")
        .arg(&out)
        .arg("--duration")
        .arg("30m")
        .status()
        .unwrap();
    assert!(status.success());
    for file in [
        "latency.csv",
        "transmissions.csv",
        "failover.csv",
        "timeseries.txt",
        "summary.json",
        "summary.txt",
    ] {
        assert!(out.join(file).exists(), "missing {file}");
    }
    let latency = std::fs::read_to_string(out.join("latency.csv")).unwrap();
    assert!(latency.starts_with("source,sequence,origin_us,ingest_us,latency_us\n"));
}

#[test]
fn simulate_scenario_file_and_compare() {
    let tmp = tempfile::tempdir().unwrap();
    let scenario = tmp.path().join("two.toml");
    std::fs::write(
        &scenario,
        r#"
name = "two-node"
duration = "30m"

[[nodes]]
name = "a"
position = [0.0, 0.0, 0.0]

[[nodes]]
name = "b"
position = [5.0, 0.0, 0.0]

[[services]]
name = "influxdb"
primary = "a"
fallbacks = ["b"]
"#,
    )
    .unwrap();

    let run = |seed: &str, dir: &Path| {
        let status = bin()
            .args(["simulate", "--scenario"])
            .arg(&scenario)
            .args(["--seed", seed, "--out"])
            .arg(dir)
            .status()
            .unwrap();
        assert!(status.success());
    };
    let out_a = tmp.path().join("a");
    let out_b = tmp.path().join("b");
    run("1", &out_a);
    run("2", &out_b);

    // Comparing a run against itself yields all-zero deltas.
    let output = bin()
        .arg("compare")
        .arg(out_a.join("summary.json"))
        .arg(out_a.join("summary.json"))
        .output()
        .unwrap();
    assert!(output.status.success());
    let text = String::from_utf8(output.stdout).unwrap();
    assert!(text.contains("median:        +0.000s"), "{text}");
    assert!(text.contains("collisions:    +0"), "{text}");

    // Different seeds still compare fine (same duration/node count).
    let status = bin()
        .arg("compare")
        .arg(out_a.join("summary.json"))
        .arg(out_b.join("summary.json"))
        .status()
        .unwrap();
    assert!(status.success());
}

#[test]
fn config_errors_exit_nonzero() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("bad.toml");
    std::fs::write(&bad, "duration = \"1h\"\n[[nodes]]\nname = \"a\"\nposition = [0.0,0.0,0.0]\nbogus_key = 1\n").unwrap();
    let output = bin()
        .args(["simulate", "--scenario"])
        .arg(&bad)
        .output()
        .unwrap();
    assert!(!output.status.success());
    let stderr = String::from_utf8(output.stderr).unwrap();
    assert!(stderr.contains("bogus_key"), "{stderr}");

    // Unknown preset.
    let status = bin()
        .args(["simulate", "--preset", "no-such-preset"])
        .status()
        .unwrap();
    assert!(!status.success());

    // Neither scenario nor preset.
    let status = bin().arg("simulate").status().unwrap();
    assert!(!status.success());
}

#[test]
fn incompatible_runs_refuse_to_compare() {
    let tmp = tempfile::tempdir().unwrap();
    let out_a = tmp.path().join("a");
    let out_b = tmp.path().join("b");
    let run = |dur: &str, dir: &Path| {
        let status = bin()
            .args(["simulate", "--preset", "baseline-4-node", "--duration", dur])
            .arg("--out")
            .arg(dir)
            .status()
            .unwrap();
        assert!(status.success());
    };
    run("20m", &out_a);
    run("40m", &out_b);
    let output = bin()
        .arg("compare")
        .arg(out_a.join("summary.json"))
        .arg(out_b.join("summary.json"))
        .output()
        .unwrap();
    assert!(!output.status.success());
    assert!(String::from_utf8(output.stderr)
        .unwrap()
        .contains("incompatible"));
}

#[test]
fn presets_lists_the_suite() {
    let output = bin().arg("presets").output().unwrap();
    assert!(output.status.success());
    let text = String::from_utf8(output.stdout).unwrap();
    for name in ["baseline-4-node", "bw-500k", "cr-4-8", "power-5dbm", "failover-imagesize"] {
        assert!(text.contains(name), "missing preset {name}");
    }
}
