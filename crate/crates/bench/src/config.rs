//! Benchmark configuration file.
//!
//! ```json
//! {
//!   "cases": ["multi_ptv", {"spec": { ... }, "goals": [ ... ]}],
//!   "optimizers": ["NewtonCG", {"id": "Adam", "learning_rate": 0.1, "label": "Adam-0.1"}],
//!   "output_directory": "out",
//!   "repetitions": 3,
//!   "matrix_cache": true
//! }
//! ```
//!
//! Optimizer objects start from the defaults of their `id` and override the
//! fields they name.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use fmo_core::dvh::DEFAULT_BIN_WIDTH;
use fmo_core::objective::{default_goals, DoseGoal, ObjectiveSpec};
use fmo_core::optim::{OptimizerConfig, OptimizerId};
use fmo_core::phantom::{CaseName, CaseSpec};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{BenchError, Result};

/// One case to benchmark: geometry, goals and smoothness weight.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaseEntry {
    pub spec: CaseSpec,
    pub goals: Vec<DoseGoal>,
    pub smoothness_weight: f64,
}

impl CaseEntry {
    pub fn builtin(name: CaseName) -> Self {
        CaseEntry {
            spec: CaseSpec::builtin(name),
            goals: default_goals(name),
            smoothness_weight: ObjectiveSpec::DEFAULT_SMOOTHNESS,
        }
    }

    pub fn name(&self) -> &'static str {
        self.spec.case_name.as_str()
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct InlineCase {
    spec: CaseSpec,
    #[serde(default)]
    goals: Option<Vec<DoseGoal>>,
    #[serde(default)]
    smoothness_weight: Option<f64>,
}

/// An optimizer run under a unique label.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OptimizerEntry {
    pub label: String,
    pub config: OptimizerConfig,
}

impl OptimizerEntry {
    pub fn new(id: OptimizerId) -> Self {
        OptimizerEntry {
            label: id.as_str().to_string(),
            config: OptimizerConfig::new(id),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchmarkConfig {
    pub cases: Vec<CaseEntry>,
    pub optimizers: Vec<OptimizerEntry>,
    pub output_directory: PathBuf,
    pub repetitions: usize,
    pub matrix_cache: bool,
    /// Defaults to `<output_directory>/cache`.
    pub cache_directory: Option<PathBuf>,
    /// Gy.
    pub dvh_bin_width: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    cases: Vec<Value>,
    optimizers: Vec<Value>,
    #[serde(default = "default_output")]
    output_directory: PathBuf,
    #[serde(default = "default_repetitions")]
    repetitions: usize,
    #[serde(default = "default_true")]
    matrix_cache: bool,
    #[serde(default)]
    cache_directory: Option<PathBuf>,
    #[serde(default = "default_bin_width")]
    dvh_bin_width: f64,
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

fn default_repetitions() -> usize {
    3
}

fn default_true() -> bool {
    true
}

fn default_bin_width() -> f64 {
    DEFAULT_BIN_WIDTH
}

impl BenchmarkConfig {
    /// Every built-in case against every optimizer, with default settings.
    pub fn builtin(output_directory: impl Into<PathBuf>) -> Self {
        BenchmarkConfig {
            cases: CaseName::ALL.into_iter().map(CaseEntry::builtin).collect(),
            optimizers: OptimizerId::ALL.into_iter().map(OptimizerEntry::new).collect(),
            output_directory: output_directory.into(),
            repetitions: default_repetitions(),
            matrix_cache: true,
            cache_directory: None,
            dvh_bin_width: DEFAULT_BIN_WIDTH,
        }
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let raw: RawConfig = serde_json::from_str(text).map_err(|e| BenchError::config(e.to_string()))?;
        let cases = raw
            .cases
            .iter()
            .enumerate()
            .map(|(i, v)| parse_case(v).map_err(|e| BenchError::config(format!("cases[{i}]: {e}"))))
            .collect::<Result<Vec<_>>>()?;
        let optimizers = raw
            .optimizers
            .iter()
            .enumerate()
            .map(|(i, v)| parse_optimizer(v).map_err(|e| BenchError::config(format!("optimizers[{i}]: {e}"))))
            .collect::<Result<Vec<_>>>()?;
        let config = BenchmarkConfig {
            cases,
            optimizers,
            output_directory: raw.output_directory,
            repetitions: raw.repetitions,
            matrix_cache: raw.matrix_cache,
            cache_directory: raw.cache_directory,
            dvh_bin_width: raw.dvh_bin_width,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(BenchError::io(path))?;
        Self::from_json_str(&text).map_err(|e| match e {
            BenchError::Config(msg) => BenchError::config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.cases.is_empty() {
            return Err(BenchError::config("cases: at least one case is required"));
        }
        if self.optimizers.is_empty() {
            return Err(BenchError::config("optimizers: at least one optimizer is required"));
        }
        if self.repetitions == 0 {
            return Err(BenchError::config("repetitions: must be >= 1"));
        }
        if !(self.dvh_bin_width > 0.0 && self.dvh_bin_width.is_finite()) {
            return Err(BenchError::config("dvh_bin_width: must be > 0"));
        }
        let mut names = BTreeSet::new();
        for (i, case) in self.cases.iter().enumerate() {
            if !names.insert(case.name()) {
                return Err(BenchError::config(format!("cases[{i}]: case `{}` listed twice", case.name())));
            }
            case.spec
                .validate()
                .map_err(|e| BenchError::config(format!("cases[{i}].spec: {e}")))?;
            if case.goals.is_empty() {
                return Err(BenchError::config(format!("cases[{i}].goals: at least one goal is required")));
            }
            for goal in &case.goals {
                goal.validate()
                    .map_err(|e| BenchError::config(format!("cases[{i}].goals: {e}")))?;
                if !case.spec.structures.iter().any(|s| s.name == goal.structure) {
                    return Err(BenchError::config(format!(
                        "cases[{i}].goals: structure `{}` is not defined by the case",
                        goal.structure
                    )));
                }
            }
            if !(case.smoothness_weight >= 0.0 && case.smoothness_weight.is_finite()) {
                return Err(BenchError::config(format!("cases[{i}].smoothness_weight: must be >= 0")));
            }
        }
        let mut labels = BTreeSet::new();
        for (i, opt) in self.optimizers.iter().enumerate() {
            if opt.label.is_empty() || opt.label.contains(['/', '\\']) || opt.label.contains("__") {
                return Err(BenchError::config(format!(
                    "optimizers[{i}].label: `{}` must be non-empty without path separators or `__`",
                    opt.label
                )));
            }
            if !labels.insert(opt.label.as_str()) {
                return Err(BenchError::config(format!(
                    "optimizers[{i}].label: `{}` used twice; give repeated optimizers distinct labels",
                    opt.label
                )));
            }
            opt.config
                .validate()
                .map_err(|e| BenchError::config(format!("optimizers[{i}] ({}): {e}", opt.label)))?;
        }
        Ok(())
    }

    pub fn cache_dir(&self) -> Option<PathBuf> {
        self.matrix_cache.then(|| {
            self.cache_directory
                .clone()
                .unwrap_or_else(|| self.output_directory.join("cache"))
        })
    }
}

fn parse_case(value: &Value) -> std::result::Result<CaseEntry, String> {
    match value {
        Value::String(name) => Ok(CaseEntry::builtin(name.parse().map_err(|e: fmo_core::FmoError| e.to_string())?)),
        Value::Object(_) => {
            let inline: InlineCase = serde_json::from_value(value.clone()).map_err(|e| e.to_string())?;
            let name = inline.spec.case_name;
            Ok(CaseEntry {
                spec: inline.spec,
                goals: inline.goals.unwrap_or_else(|| default_goals(name)),
                smoothness_weight: inline.smoothness_weight.unwrap_or(ObjectiveSpec::DEFAULT_SMOOTHNESS),
            })
        }
        _ => Err("expected a case name or an object with a `spec` field".into()),
    }
}

fn parse_optimizer(value: &Value) -> std::result::Result<OptimizerEntry, String> {
    match value {
        Value::String(name) => {
            let id: OptimizerId = name.parse().map_err(|e: fmo_core::FmoError| e.to_string())?;
            Ok(OptimizerEntry::new(id))
        }
        Value::Object(fields) => {
            let mut fields = fields.clone();
            let id: OptimizerId = match fields.get("id") {
                Some(Value::String(s)) => s.parse().map_err(|e: fmo_core::FmoError| format!("id: {e}"))?,
                Some(_) => return Err("id: expected a string".into()),
                None => return Err("missing field `id`".into()),
            };
            fields.insert("id".into(), Value::String(id.as_str().into()));
            let label = match fields.remove("label") {
                Some(Value::String(s)) => s,
                Some(_) => return Err("label: expected a string".into()),
                None => id.as_str().to_string(),
            };
            let mut base = match serde_json::to_value(OptimizerConfig::new(id)) {
                Ok(Value::Object(m)) => m,
                _ => unreachable!("optimizer config serializes to an object"),
            };
            merge(&mut base, fields);
            let config: OptimizerConfig = serde_json::from_value(Value::Object(base)).map_err(|e| e.to_string())?;
            Ok(OptimizerEntry { label, config })
        }
        _ => Err("expected an optimizer name or an object with an `id` field".into()),
    }
}

/// Overlays `overrides` on `base`, one level deep into nested objects.
fn merge(base: &mut Map<String, Value>, overrides: Map<String, Value>) {
    for (key, value) in overrides {
        match (base.get_mut(&key), value) {
            (Some(Value::Object(inner)), Value::Object(patch)) => {
                for (k, v) in patch {
                    inner.insert(k, v);
                }
            }
            (_, value) => {
                base.insert(key, value);
            }
        }
    }
}
