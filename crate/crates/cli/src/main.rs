use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use resilience_smc::acceptance::{self, Scale};
use resilience_smc::config::{Engine, ExperimentConfig};
use resilience_smc::experiment::{run_single, run_sweep};

/// Rare resilience-failure estimation for a stochastic network model.
#[derive(Parser)]
#[command(name = "resmc", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the configured engine once and write summary.json.
    Run(Common),
    /// Run every grid point of the [sweep] section and write sweep.csv.
    Sweep(Common),
    /// Run the reconfiguration engine, as a sweep when axes are configured.
    Policy(Common),
    /// Run the built-in acceptance checks.
    Verify {
        #[command(flatten)]
        common: Common,
        /// Skip the 10⁵-replication check and shrink the network budgets.
        #[arg(long)]
        quick: bool,
    },
}

#[derive(Args)]
struct Common {
    /// TOML config; defaults are used when omitted.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Overrides the master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the output directory.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    workers: Option<usize>,
}

impl Common {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(out) = &self.out {
            cfg.out_dir = out.clone();
        }
        Ok(cfg)
    }

    fn init_workers(&self) -> Result<()> {
        if let Some(n) = self.workers {
            rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global()
                .context("cannot start the worker pool")?;
        }
        Ok(())
    }
}

fn single(cfg: &ExperimentConfig) -> Result<()> {
    let a = run_single(cfg)?;
    println!(
        "{} estimate {:e} (seed {}); wrote {}",
        a.record.engine,
        a.record.estimate,
        a.record.seed,
        cfg.out_dir.join("summary.json").display()
    );
    Ok(())
}

fn sweep(cfg: &ExperimentConfig) -> Result<()> {
    let a = run_sweep(cfg)?;
    println!(
        "{} runs over {} grid points in {:.1} s; wrote {}",
        a.runs.len(),
        a.points.len(),
        a.wall_seconds,
        cfg.out_dir.join("sweep.csv").display()
    );
    Ok(())
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Run(c) => {
            let cfg = c.load()?;
            c.init_workers()?;
            single(&cfg)?;
        }
        Command::Sweep(c) => {
            let cfg = c.load()?;
            c.init_workers()?;
            sweep(&cfg)?;
        }
        Command::Policy(c) => {
            let mut cfg = c.load()?;
            cfg.engine = Engine::SmcPolicy;
            cfg.sweep.engines = vec![Engine::SmcPolicy];
            cfg.validate()?;
            c.init_workers()?;
            if cfg.sweep.axes.is_empty() {
                single(&cfg)?;
            } else {
                sweep(&cfg)?;
            }
        }
        Command::Verify { common, quick } => {
            // a bad config is reported before anything is simulated
            let cfg = common.load()?;
            common.init_workers()?;
            let scale = if quick { Scale::Quick } else { Scale::Full };
            let mut ok = true;
            for &(id, _) in acceptance::CRITERIA {
                let r = acceptance::run_criterion(id, scale, cfg.seed);
                println!("{}", r.line());
                ok &= r.passed != Some(false);
            }
            return Ok(ok);
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SMALL: &str = r#"
seed = 7
[model]
delay_threshold = 0.3
[smc]
budget = 200000
[mc]
trajectories = 40
[policy]
size = 2
continuations = 2
inner_budget = 200000
"#;

    fn parse(args: &[&str]) -> Cli {
        Cli::try_parse_from(std::iter::once("resmc").chain(args.iter().copied())).unwrap()
    }

    fn config_file(dir: &std::path::Path, extra: &str) -> PathBuf {
        let path = dir.join("cfg.toml");
        std::fs::write(&path, format!("{SMALL}{extra}")).unwrap();
        path
    }

    fn summary(dir: &std::path::Path) -> serde_json::Value {
        let text = std::fs::read_to_string(dir.join("summary.json")).unwrap();
        serde_json::from_str(&text).unwrap()
    }

    #[test]
    fn run_writes_summary_with_overrides() {
        let tmp = tempfile::tempdir().unwrap();
        let cfg = config_file(tmp.path(), "");
        let out = tmp.path().join("out");
        let cli = parse(&[
            "run",
            "--config",
            cfg.to_str().unwrap(),
            "--seed",
            "11",
            "--out",
            out.to_str().unwrap(),
        ]);
        assert!(run(cli).unwrap());
        let s = summary(&out);
        assert_eq!(s["seed"], 11);
        assert_eq!(s["engine"], "smc");
        assert!(out.join("timing.json").exists());
    }

    #[test]
    fn sweep_writes_csv_rows() {
        let tmp = tempfile::tempdir().unwrap();
        let extra = r#"
[sweep]
engines = ["mc", "smc"]
[[sweep.axes]]
name = "model.delay_threshold"
values = [0.2, 0.3]
"#;
        let cfg = config_file(tmp.path(), extra);
        let out = tmp.path().join("s");
        let cli = parse(&["sweep", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
        assert!(run(cli).unwrap());
        let csv = std::fs::read_to_string(out.join("sweep.csv")).unwrap();
        // header plus 2 points × 2 engines
        assert_eq!(csv.lines().count(), 5);
    }

    #[test]
    fn policy_forces_reconfiguration_engine() {
        let tmp = tempfile::tempdir().unwrap();
        let cfg = config_file(tmp.path(), "");
        let out = tmp.path().join("p");
        let cli = parse(&["policy", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
        assert!(run(cli).unwrap());
        let s = summary(&out);
        assert_eq!(s["engine"], "smc+policy");
        assert!(s["result"]["smc+policy"]["selection_frequencies"].is_array());
    }

    #[test]
    fn bad_schedule_is_rejected() {
        let tmp = tempfile::tempdir().unwrap();
        let path = tmp.path().join("bad.toml");
        std::fs::write(&path, "[levels]\nthresholds = [0.0, 1.5, 0.5]\n").unwrap();
        let cli = parse(&["run", "--config", path.to_str().unwrap(), "--out", tmp.path().to_str().unwrap()]);
        let err = format!("{:#}", run(cli).unwrap_err());
        assert!(err.contains("levels"), "{err}");
        assert!(!tmp.path().join("summary.json").exists());
    }

    #[test]
    fn unknown_key_is_rejected() {
        let tmp = tempfile::tempdir().unwrap();
        let path = tmp.path().join("bad.toml");
        std::fs::write(&path, "[smc]\nbudgett = 5\n").unwrap();
        let cli = parse(&["verify", "--quick", "--config", path.to_str().unwrap()]);
        assert!(run(cli).is_err());
    }

    #[test]
    fn missing_subcommand_is_a_usage_error() {
        assert!(Cli::try_parse_from(["resmc"]).is_err());
        assert!(Cli::try_parse_from(["resmc", "run", "--seed", "x"]).is_err());
    }
}
