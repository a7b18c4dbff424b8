//! Behavior of the command line interface: subcommands, exit codes, and
//! the output directory override.

use std::path::Path;
use std::process::{Command, Output};

fn nonholo(args: &[&str]) -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_nonholo"));
    cmd.args(args);
    cmd
}

fn write_config(dir: &Path, value: &serde_json::Value) -> std::path::PathBuf {
    let path = dir.join("config.json");
    std::fs::write(&path, serde_json::to_vec_pretty(value).unwrap()).unwrap();
    path
}

fn stdout(output: &Output) -> String {
    String::from_utf8_lossy(&output.stdout).into_owned()
}

fn stderr(output: &Output) -> String {
    String::from_utf8_lossy(&output.stderr).into_owned()
}

fn particle_config(dir: &Path) -> serde_json::Value {
    serde_json::json!({
        "scenario": {"name": "bouncing-particle",
                     "parameters": {"wall": 1.0}},
        "initial": {"q": [0.0], "v": [1.0]},
        "t1": 1.5,
        "h": 0.01,
        "output": {
            "trajectory_path": dir.join("trajectory.csv"),
            "events_path": dir.join("events.json")
        }
    })
}

#[test]
fn list_scenarios_names_the_registry() {
    let output = nonholo(&["list-scenarios"]).output().unwrap();
    assert!(output.status.success());
    let text = stdout(&output);
    assert!(text.contains("disk:"), "{text}");
    assert!(text.contains("bouncing-particle:"), "{text}");
    assert!(text.contains("wall="), "{text}");
}

#[test]
fn simulate_writes_both_output_files() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), &particle_config(dir.path()));
    let output = nonholo(&["simulate", "--config", config.to_str().unwrap()])
        .output()
        .unwrap();
    assert!(output.status.success(), "stderr: {}", stderr(&output));
    assert!(stdout(&output).contains("1 impacts"));
    assert!(dir.path().join("trajectory.csv").exists());
    assert!(dir.path().join("events.json").exists());
}

#[test]
fn output_directory_override_rehomes_files() {
    let dir = tempfile::tempdir().unwrap();
    let override_dir = dir.path().join("elsewhere");
    let config = write_config(dir.path(), &particle_config(dir.path()));
    let output = nonholo(&["simulate", "--config", config.to_str().unwrap()])
        .env("NONHOLO_OUTPUT_DIR", &override_dir)
        .output()
        .unwrap();
    assert!(output.status.success(), "stderr: {}", stderr(&output));
    assert!(override_dir.join("trajectory.csv").exists());
    assert!(override_dir.join("events.json").exists());
    assert!(!dir.path().join("trajectory.csv").exists());
}

#[test]
fn validate_reports_ok_without_writing() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), &particle_config(dir.path()));
    let output = nonholo(&["validate", "--config", config.to_str().unwrap()])
        .output()
        .unwrap();
    assert!(output.status.success(), "stderr: {}", stderr(&output));
    assert!(stdout(&output).contains("configuration ok"));
    assert!(!dir.path().join("trajectory.csv").exists());
}

#[test]
fn config_problems_exit_with_code_two() {
    let dir = tempfile::tempdir().unwrap();

    let missing = nonholo(&["simulate", "--config", "/no/such/config.json"])
        .output()
        .unwrap();
    assert_eq!(missing.status.code(), Some(2), "stderr: {}", stderr(&missing));

    let bad_json = dir.path().join("bad.json");
    std::fs::write(&bad_json, b"{not json").unwrap();
    let output = nonholo(&["simulate", "--config", bad_json.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2), "stderr: {}", stderr(&output));

    let unknown = serde_json::json!({
        "scenario": {"name": "perpetual-motion"},
        "t1": 1.0
    });
    let config = write_config(dir.path(), &unknown);
    let output = nonholo(&["simulate", "--config", config.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2), "stderr: {}", stderr(&output));

    let reversed = serde_json::json!({
        "scenario": {"name": "disk"},
        "t0": 2.0,
        "t1": 1.0
    });
    let config = write_config(dir.path(), &reversed);
    let output = nonholo(&["validate", "--config", config.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2), "stderr: {}", stderr(&output));
}

#[test]
fn compare_prints_the_deviation_table() {
    let dir = tempfile::tempdir().unwrap();
    let mut value = particle_config(dir.path());
    value["output"] = serde_json::json!({});
    value["scenario"]["parameters"]["gravity"] = serde_json::json!(2.0);
    value["initial"] = serde_json::json!({"q": [0.0], "v": [0.0]});
    value["t1"] = serde_json::json!(2.5);
    let config = write_config(dir.path(), &value);
    let output = nonholo(&["compare", "--config", config.to_str().unwrap()])
        .output()
        .unwrap();
    assert!(output.status.success(), "stderr: {}", stderr(&output));
    let text = stdout(&output);
    assert!(text.contains("max state deviation"), "{text}");
    assert!(text.contains("event 0:"), "{text}");
}
