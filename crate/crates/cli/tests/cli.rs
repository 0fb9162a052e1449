use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use hybridmpc::harness::ScenarioConfig;
use tempfile::TempDir;

fn hybridmpc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hybridmpc"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write_config(dir: &TempDir, name: &str, edit: impl FnOnce(&mut ScenarioConfig)) -> PathBuf {
    let mut cfg = ScenarioConfig { duration: 0.4, ..Default::default() };
    edit(&mut cfg);
    let path = dir.path().join(name);
    std::fs::write(&path, cfg.to_toml()).unwrap();
    path
}

/// Dataset and model from a one-scenario grid, a few epochs only.
fn tiny_model(dir: &TempDir) -> PathBuf {
    let grid = dir.path().join("grid.toml");
    std::fs::write(
        &grid,
        "cycle_durations = [2.0]\ncontrol_dts = [0.005]\ncycles = 0.25\n\n[[bodies]]\nmass = 70.0\nheight = 1.75\n",
    )
    .unwrap();
    let data = dir.path().join("data.bin");
    let model = dir.path().join("model.bin");
    let out = hybridmpc(&["gen-data", s(&grid), "-o", s(&data)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let out = hybridmpc(&["train", s(&data), "-o", s(&model), "--epochs", "5"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    model
}

#[test]
fn default_config_round_trips() {
    let out = hybridmpc(&["print-default-config"]);
    assert_eq!(code(&out), 0);
    let cfg = ScenarioConfig::from_toml(std::str::from_utf8(&out.stdout).unwrap()).unwrap();
    assert_eq!(cfg, ScenarioConfig::default());
    let out = hybridmpc(&["print-default-config", "--grid"]);
    assert_eq!(code(&out), 0);
    hybridmpc::dnn::DatasetGrid::from_toml(std::str::from_utf8(&out.stdout).unwrap()).unwrap();
}

#[test]
fn config_problems_exit_with_three() {
    let dir = TempDir::new().unwrap();
    assert_eq!(code(&hybridmpc(&["simulate", s(&dir.path().join("missing.toml"))])), 3);
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "duration = -1.0\n").unwrap();
    assert_eq!(code(&hybridmpc(&["simulate", s(&bad)])), 3);
    // hybrid without a model
    let cfg = write_config(&dir, "hybrid.toml", |_| {});
    assert_eq!(code(&hybridmpc(&["simulate", s(&cfg)])), 3);
    assert_eq!(code(&hybridmpc(&["bench", s(&cfg), "--iterations", "10"])), 3);
    assert_eq!(code(&hybridmpc(&["no-such-command"])), 3);
}

#[test]
fn simulation_csv_is_byte_identical() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(&dir, "nmpc.toml", |c| c.controller = hybridmpc::harness::ControllerKind::Nmpc);
    let run = |name: &str| {
        let csv = dir.path().join(name);
        let out = hybridmpc(&["simulate", s(&cfg), "--csv-out", s(&csv), "--seed", "7"]);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
        let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
        assert_eq!(report["stable"], true);
        assert_eq!(report["steps"], 200);
        std::fs::read(csv).unwrap()
    };
    let a = run("a.csv");
    assert_eq!(a, run("b.csv"));
    let text = String::from_utf8(a).unwrap();
    assert!(text.starts_with("t,q_R1,q_R2,q_R3,"));
    assert_eq!(text.lines().count(), 201);
}

#[test]
fn trained_model_drives_every_subcommand() {
    let dir = TempDir::new().unwrap();
    let model = tiny_model(&dir);
    let cfg = write_config(&dir, "hybrid.toml", |c| c.model = Some("model.bin".into()));

    let out = hybridmpc(&["simulate", s(&cfg)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));

    let out = hybridmpc(&["compare", s(&cfg), "--controllers", "hybrid,none", "--json"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let reports: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(reports[0]["controller"], "hybrid");
    assert_eq!(reports[1]["controller"], "none");

    let out = hybridmpc(&["bench", s(&cfg), "--iterations", "100", "--model", s(&model)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let table = String::from_utf8(out.stdout).unwrap();
    assert!(table.contains("nmpc") && table.contains("hybrid") && table.contains("speedup"), "{table}");
}

#[test]
fn instability_exits_with_two() {
    let dir = TempDir::new().unwrap();
    tiny_model(&dir);
    // proportional gain far beyond what the loop tolerates
    let cfg = write_config(&dir, "hot.toml", |c| {
        c.model = Some("model.bin".into());
        c.pi.kp = [5.0; 3];
    });
    let out = hybridmpc(&["simulate", s(&cfg)]);
    assert_eq!(code(&out), 2, "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["stable"], false);
    assert!(report["failure"].as_str().unwrap().contains("joint limit"));
}
