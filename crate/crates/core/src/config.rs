//! Experiment configuration.
//!
//! A single TOML file describes a run. Every key has a default, unknown keys
//! are rejected, and validation errors name the offending key path.
//!
//! ```toml
//! engine = "smc"            # "mc" | "smc" | "smc+policy"
//! seed = 1
//! replications = 1
//! out_dir = "out"
//!
//! [model]
//! delay_threshold = 0.1
//!
//! [levels]
//! thresholds = [0.0, 0.1, 1.0, 1.5, 2.0]
//!
//! [smc]
//! success_target = 20
//!
//! [mc]
//! budget_steps = 5000000    # or: trajectories = 4166
//!
//! [policy]
//! size = 5
//!
//! [sweep]
//! engines = ["mc", "smc"]
//! [[sweep.axes]]
//! name = "model.delay_threshold"
//! values = [0.1, 0.2, 0.3]
//! ```

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::levels::LevelSchedule;
use crate::mc::McConfig;
use crate::netmodel::NetParams;
use crate::policy::{LookaheadConfig, PolicySet};
use crate::smc::SmcConfig;

/// A rejected value, identified by its key path.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{field}: {message}")]
pub struct ParamError {
    pub field: String,
    pub message: String,
}

impl ParamError {
    pub fn new(field: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            field: field.into(),
            message: message.into(),
        }
    }

    /// Prefixes the key path, e.g. `delay_threshold` → `model.delay_threshold`.
    pub fn within(self, section: &str) -> Self {
        if self.field.starts_with(&format!("{section}.")) || self.field == section {
            return self;
        }
        Self {
            field: format!("{section}.{}", self.field),
            message: self.message,
        }
    }
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("malformed config: {0}")]
    Parse(String),
    #[error("invalid config: {0}")]
    Invalid(#[from] ParamError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Engine {
    #[serde(rename = "mc")]
    Mc,
    #[serde(rename = "smc")]
    Smc,
    #[serde(rename = "smc+policy")]
    SmcPolicy,
}

impl fmt::Display for Engine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Engine::Mc => "mc",
            Engine::Smc => "smc",
            Engine::SmcPolicy => "smc+policy",
        })
    }
}

/// Candidate family and lookahead settings for `smc+policy`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicyConfig {
    /// `|U|`.
    pub size: usize,
    /// `ρ'`.
    pub increment: f64,
    /// `κ`.
    pub cost_scale: f64,
    pub host_level: usize,
    /// `N'`.
    pub continuations: u64,
    /// `K'`; omitted means myopic.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub depth: Option<usize>,
    pub inner_budget: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub inner_seed: Option<u64>,
    pub zero_count_floor: f64,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        let look = LookaheadConfig::default();
        Self {
            size: 5,
            increment: 0.5,
            cost_scale: 0.5,
            host_level: look.host_level,
            continuations: look.continuations,
            depth: look.depth,
            inner_budget: look.inner_budget,
            inner_seed: look.inner_seed,
            zero_count_floor: look.zero_count_floor,
        }
    }
}

impl PolicyConfig {
    pub fn lookahead(&self) -> LookaheadConfig {
        LookaheadConfig {
            host_level: self.host_level,
            continuations: self.continuations,
            depth: self.depth,
            inner_budget: self.inner_budget,
            inner_seed: self.inner_seed,
            zero_count_floor: self.zero_count_floor,
        }
    }

    pub fn policy_set(&self, model: &NetParams) -> Result<PolicySet, ParamError> {
        PolicySet::new(
            self.size,
            self.increment,
            model.recovery_rate,
            model.recovery_exponent,
            self.cost_scale,
            model.step_duration,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepAxis {
    /// Dotted key path into the config, e.g. `model.stress_std`.
    pub name: String,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub axes: Vec<SweepAxis>,
    /// Engines run at every grid point; empty means the top-level engine.
    pub engines: Vec<Engine>,
}

pub const MAX_SWEEP_AXES: usize = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub engine: Engine,
    pub seed: u64,
    pub replications: u64,
    pub out_dir: PathBuf,
    pub model: NetParams,
    pub levels: LevelSchedule,
    pub smc: SmcConfig,
    pub mc: McConfig,
    pub policy: PolicyConfig,
    pub sweep: SweepConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            engine: Engine::Smc,
            seed: 1,
            replications: 1,
            out_dir: PathBuf::from("out"),
            model: NetParams::default(),
            levels: LevelSchedule::default(),
            smc: SmcConfig::default(),
            mc: McConfig::default(),
            policy: PolicyConfig::default(),
            sweep: SweepConfig::default(),
        }
    }
}

impl ExperimentConfig {
    /// Parses and validates.
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Engines executed by a sweep.
    pub fn sweep_engines(&self) -> Vec<Engine> {
        if self.sweep.engines.is_empty() {
            vec![self.engine]
        } else {
            self.sweep.engines.clone()
        }
    }

    pub fn validate(&self) -> Result<(), ParamError> {
        self.validate_point()?;
        let sweep = &self.sweep;
        if sweep.axes.len() > MAX_SWEEP_AXES {
            return Err(ParamError::new(
                "sweep.axes",
                format!("at most {MAX_SWEEP_AXES} axes, got {}", sweep.axes.len()),
            ));
        }
        for (i, axis) in sweep.axes.iter().enumerate() {
            let field = format!("sweep.axes[{i}]");
            if axis.values.is_empty() {
                return Err(ParamError::new(format!("{field}.values"), "grid must be non-empty"));
            }
            if axis.values.iter().any(|v| !v.is_finite()) {
                return Err(ParamError::new(format!("{field}.values"), "grid values must be finite"));
            }
            if sweep.axes[..i].iter().any(|a| a.name == axis.name) {
                return Err(ParamError::new(
                    format!("{field}.name"),
                    format!("axis `{}` appears twice", axis.name),
                ));
            }
            if !SWEEPABLE.contains(&axis.name.as_str()) {
                return Err(ParamError::new(
                    format!("{field}.name"),
                    format!("`{}` is not a sweepable key", axis.name),
                ));
            }
        }
        let mut seen = Vec::new();
        for e in &sweep.engines {
            if seen.contains(e) {
                return Err(ParamError::new("sweep.engines", format!("engine `{e}` listed twice")));
            }
            seen.push(*e);
        }
        // Every grid point must itself be valid.
        for point in grid_points(&sweep.axes) {
            let resolved = self.at_point(&point)?;
            resolved.validate_point().map_err(|e| {
                let at: Vec<String> = point.iter().map(|(n, v)| format!("{n}={v}")).collect();
                ParamError::new(e.field, format!("{} (at {})", e.message, at.join(", ")))
            })?;
            for engine in self.sweep_engines() {
                resolved.validate_engine(engine)?;
            }
        }
        Ok(())
    }

    fn validate_point(&self) -> Result<(), ParamError> {
        if self.replications < 1 {
            return Err(ParamError::new("replications", "at least one replication required"));
        }
        self.model.validate().map_err(|e| e.within("model"))?;
        self.smc.validate().map_err(|e| e.within("smc"))?;
        self.validate_engine(self.engine)
    }

    fn validate_engine(&self, engine: Engine) -> Result<(), ParamError> {
        match engine {
            Engine::Mc => self.mc.validate(self.model.horizon_steps()),
            Engine::Smc => Ok(()),
            Engine::SmcPolicy => {
                self.policy.policy_set(&self.model)?;
                self.policy
                    .lookahead()
                    .validate(&self.levels)
                    .map_err(|e| e.within("policy"))
            }
        }
    }

    /// The config with sweep axis values substituted and the sweep cleared.
    pub fn at_point(&self, point: &[(String, f64)]) -> Result<Self, ParamError> {
        let mut value = serde_json::to_value(self).expect("config serializes");
        for (name, v) in point {
            set_path(&mut value, name, *v)?;
        }
        let mut resolved: Self =
            serde_json::from_value(value).map_err(|e| ParamError::new("sweep.axes", e.to_string()))?;
        resolved.sweep = SweepConfig::default();
        Ok(resolved)
    }
}

/// Keys that may appear as sweep axes.
pub const SWEEPABLE: &[&str] = &[
    "model.arrival_load",
    "model.initial_backlog",
    "model.initial_health",
    "model.initial_stress",
    "model.recovery_rate",
    "model.recovery_exponent",
    "model.stress_correlation",
    "model.stress_mean",
    "model.stress_std",
    "model.delay_threshold",
    "model.recovery_target",
    "smc.success_target",
    "smc.attempt_target",
    "smc.initial_pool",
    "smc.min_pool",
    "smc.max_pool",
    "smc.safety_factor",
    "smc.probability_floor",
    "smc.budget",
    "smc.batch_size",
    "mc.budget_steps",
    "mc.trajectories",
    "policy.size",
    "policy.increment",
    "policy.cost_scale",
    "policy.continuations",
    "policy.inner_budget",
];

fn set_path(root: &mut serde_json::Value, path: &str, v: f64) -> Result<(), ParamError> {
    let parts: Vec<&str> = path.split('.').collect();
    let (section, key) = (parts[0], parts[1]);
    let obj = root
        .get_mut(section)
        .and_then(|s| s.as_object_mut())
        .ok_or_else(|| ParamError::new(path, "unknown section"))?;
    let integer_key = matches!(section, "smc" | "mc")
        && !matches!(key, "safety_factor" | "probability_floor")
        || matches!(path, "policy.size" | "policy.continuations" | "policy.inner_budget");
    let json = if integer_key {
        if v < 0.0 || v.fract() != 0.0 {
            return Err(ParamError::new(path, format!("integer value required, got {v}")));
        }
        serde_json::Value::from(v as u64)
    } else {
        serde_json::Value::from(v)
    };
    if section == "mc" {
        // the mc section is a one-key table selecting the mode
        obj.clear();
    }
    obj.insert(key.to_string(), json);
    Ok(())
}

/// Cross product of the axis grids, first axis outermost.
pub fn grid_points(axes: &[SweepAxis]) -> Vec<Vec<(String, f64)>> {
    let mut points = vec![Vec::new()];
    for axis in axes {
        let mut next = Vec::with_capacity(points.len() * axis.values.len());
        for p in &points {
            for &v in &axis.values {
                let mut q: Vec<(String, f64)> = p.clone();
                q.push((axis.name.clone(), v));
                next.push(q);
            }
        }
        points = next;
    }
    points
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let cfg = ExperimentConfig::from_toml_str("").unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
        assert_eq!(cfg.levels.thresholds(), &[0.0, 0.1, 1.0, 1.5, 2.0]);
    }

    #[test]
    fn round_trip() {
        let cfg = ExperimentConfig::default();
        let back = ExperimentConfig::from_toml_str(&cfg.to_toml_string()).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn unknown_keys_rejected() {
        for text in ["bogus = 1", "[model]\ndelay_treshold = 0.2", "[smc]\nsuccess = 3", "[mc]\nsteps = 4"] {
            assert!(matches!(ExperimentConfig::from_toml_str(text), Err(ConfigError::Parse(_))), "{text}");
        }
    }

    #[test]
    fn overload_is_rejected_with_path() {
        let err = ExperimentConfig::from_toml_str("[model]\narrival_load = 1.2").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("model.arrival_load"), "{msg}");
        assert!(msg.contains("Λ ∈ (0,1)"), "{msg}");
    }

    #[test]
    fn sweep_validation() {
        let empty = "[[sweep.axes]]\nname = \"model.delay_threshold\"\nvalues = []";
        assert!(ExperimentConfig::from_toml_str(empty).unwrap_err().to_string().contains("non-empty"));
        let dup = "[[sweep.axes]]\nname = \"model.stress_std\"\nvalues = [0.5]\n\
                   [[sweep.axes]]\nname = \"model.stress_std\"\nvalues = [0.6]";
        assert!(ExperimentConfig::from_toml_str(dup).unwrap_err().to_string().contains("twice"));
        let three = (0..3)
            .map(|i| format!("[[sweep.axes]]\nname = \"{}\"\nvalues = [0.5]\n", SWEEPABLE[i]))
            .collect::<String>();
        assert!(ExperimentConfig::from_toml_str(&three).is_err());
        let bad_point = "[[sweep.axes]]\nname = \"model.arrival_load\"\nvalues = [0.5, 1.5]";
        let msg = ExperimentConfig::from_toml_str(bad_point).unwrap_err().to_string();
        assert!(msg.contains("arrival_load=1.5"), "{msg}");
        let unknown = "[[sweep.axes]]\nname = \"model.nope\"\nvalues = [1.0]";
        assert!(ExperimentConfig::from_toml_str(unknown).is_err());
    }

    #[test]
    fn grid_is_row_major() {
        let axes = vec![
            SweepAxis { name: "a".into(), values: vec![1.0, 2.0] },
            SweepAxis { name: "b".into(), values: vec![3.0, 4.0, 5.0] },
        ];
        let g = grid_points(&axes);
        assert_eq!(g.len(), 6);
        assert_eq!(g[1], vec![("a".to_string(), 1.0), ("b".to_string(), 4.0)]);
        assert_eq!(grid_points(&[]), vec![Vec::<(String, f64)>::new()]);
    }

    #[test]
    fn point_substitution() {
        let cfg = ExperimentConfig::default();
        let p = cfg
            .at_point(&[
                ("model.delay_threshold".into(), 0.3),
                ("policy.size".into(), 9.0),
            ])
            .unwrap();
        assert_eq!(p.model.delay_threshold, 0.3);
        assert_eq!(p.policy.size, 9);
        let m = cfg.at_point(&[("mc.trajectories".into(), 10.0)]).unwrap();
        assert_eq!(m.mc, McConfig::Trajectories(10));
        assert!(cfg.at_point(&[("smc.budget".into(), 1.5)]).is_err());
    }

    #[test]
    fn policy_section_checked_only_for_policy_engine() {
        let text = "[policy]\nhost_level = 7";
        assert!(ExperimentConfig::from_toml_str(text).is_ok());
        let text = "engine = \"smc+policy\"\n[policy]\nhost_level = 7";
        let msg = ExperimentConfig::from_toml_str(text).unwrap_err().to_string();
        assert!(msg.contains("policy.host_level"), "{msg}");
    }
}
