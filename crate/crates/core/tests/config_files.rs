use std::io::Write;

use resilience_smc::config::{ConfigError, Engine, ExperimentConfig};
use resilience_smc::experiment::{run_single, run_sweep};
use resilience_smc::mc::McConfig;

fn write(text: &str) -> tempfile::NamedTempFile {
    let mut f = tempfile::NamedTempFile::new().unwrap();
    f.write_all(text.as_bytes()).unwrap();
    f
}

#[test]
fn load_full_example() {
    let f = write(
        r#"
engine = "mc"
seed = 42
replications = 3
out_dir = "results"

[model]
delay_threshold = 0.2
stress_std = 0.6

[levels]
thresholds = [0.0, 0.2, 1.0, 1.5, 2.0]

[smc]
budget = 1000000

[mc]
trajectories = 500

[policy]
size = 9
continuations = 10

[sweep]
engines = ["mc", "smc", "smc+policy"]

[[sweep.axes]]
name = "model.stress_std"
values = [0.45, 0.575, 0.8]
"#,
    );
    let cfg = ExperimentConfig::load(f.path()).unwrap();
    assert_eq!(cfg.engine, Engine::Mc);
    assert_eq!(cfg.mc, McConfig::Trajectories(500));
    assert_eq!(cfg.levels.stages(), 4);
    assert_eq!(cfg.levels.threshold(1), 0.2);
    assert_eq!(cfg.policy.size, 9);
    assert_eq!(cfg.sweep.engines.len(), 3);
}

#[test]
fn missing_file_is_an_io_error() {
    let err = ExperimentConfig::load(std::path::Path::new("/nonexistent/x.toml")).unwrap_err();
    assert!(matches!(err, ConfigError::Io { .. }));
}

#[test]
fn bad_levels_rejected() {
    let err = ExperimentConfig::from_toml_str("[levels]\nthresholds = [0.0, 1.0, 0.5]").unwrap_err();
    assert!(err.to_string().contains("increasing"), "{err}");
}

#[test]
fn emitted_config_reproduces_run() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig::default();
    cfg.smc.budget = 200_000;
    cfg.out_dir = dir.path().join("a");
    let first = run_single(&cfg).unwrap();
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("a/summary.json")).unwrap()).unwrap();
    assert!(dir.path().join("a/timing.json").exists());
    // rebuild the config from the artifact alone
    let echoed: ExperimentConfig = serde_json::from_value(summary["config"].clone()).unwrap();
    let again = run_single(&ExperimentConfig { out_dir: dir.path().join("b"), ..echoed }).unwrap();
    assert_eq!(first.record.estimate, again.record.estimate);
    assert_eq!(
        std::fs::read(dir.path().join("a/summary.json")).unwrap().len(),
        std::fs::read(dir.path().join("b/summary.json")).unwrap().len()
    );
}

#[test]
fn sweep_row_is_rerunnable_from_its_point_config() {
    let dir = tempfile::tempdir().unwrap();
    let text = format!(
        "seed = 5\nout_dir = {:?}\n[smc]\nbudget = 200000\n[mc]\ntrajectories = 50\n\
         [sweep]\nengines = [\"mc\", \"smc\"]\n[[sweep.axes]]\nname = \"model.delay_threshold\"\nvalues = [0.1, 0.2]",
        dir.path().display().to_string()
    );
    let cfg = ExperimentConfig::from_toml_str(&text).unwrap();
    let a = run_sweep(&cfg).unwrap();
    let csv = std::fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    assert_eq!(csv, a.csv);
    let run = &a.runs[3];
    let mut point = a.points[run.point].config.clone();
    point.seed = run.record.seed;
    point.engine = run.record.engine;
    point.out_dir = dir.path().join("single");
    let single = run_single(&point).unwrap();
    assert_eq!(single.record.estimate, run.record.estimate);
}
