//! Files written by the harness.
//!
//! ```text
//! <out>/summary.json
//! <out>/config.json                     resolved configuration
//! <out>/goals/<case>.json               goal list of each case
//! <out>/traces/<case>__<opt>.csv        iteration,cost,gradient_norm,elapsed_seconds,function_evals
//! <out>/traces/<case>__<opt>.final.json final fluence and goal checks
//! <out>/dvh/<case>__<opt>.csv           structure,dose_gy,volume_fraction
//! ```

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use fmo_core::dvh::{DvhCurve, GoalCheck};
use fmo_core::objective::DoseGoal;
use fmo_core::optim::{IterationRecord, OptimizerConfig, Termination};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{BenchError, Result};
use crate::summary::{BenchmarkSummary, TraceRecords};

pub const SUMMARY_FILE: &str = "summary.json";
pub const CONFIG_FILE: &str = "config.json";
pub const TRACE_DIR: &str = "traces";
pub const GOALS_DIR: &str = "goals";
pub const DVH_DIR: &str = "dvh";

const FINAL_SUFFIX: &str = ".final.json";

pub fn pair_stem(case: &str, optimizer: &str) -> String {
    format!("{case}__{optimizer}")
}

pub fn trace_path(out: &Path, case: &str, optimizer: &str) -> PathBuf {
    out.join(TRACE_DIR).join(format!("{}.csv", pair_stem(case, optimizer)))
}

pub fn final_path(out: &Path, case: &str, optimizer: &str) -> PathBuf {
    out.join(TRACE_DIR).join(format!("{}{FINAL_SUFFIX}", pair_stem(case, optimizer)))
}

pub fn dvh_path(out: &Path, case: &str, optimizer: &str) -> PathBuf {
    out.join(DVH_DIR).join(format!("{}.csv", pair_stem(case, optimizer)))
}

pub fn goals_path(out: &Path, case: &str) -> PathBuf {
    out.join(GOALS_DIR).join(format!("{case}.json"))
}

/// The final fluence of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalFluence {
    pub case: String,
    pub optimizer: String,
    pub config: OptimizerConfig,
    pub termination: Termination,
    /// Cost at `final_b`.
    pub final_cost: f64,
    pub final_b: Vec<f64>,
    pub goal_checks: Vec<GoalCheck>,
}

#[derive(Debug, Serialize, Deserialize)]
struct TraceRow {
    iteration: usize,
    cost: f64,
    gradient_norm: f64,
    elapsed_seconds: f64,
    function_evals: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct DvhRow<'a> {
    structure: &'a str,
    dose_gy: f64,
    volume_fraction: f64,
}

pub(crate) fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(BenchError::io(dir))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let file = File::create(path).map_err(BenchError::io(path))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, value).map_err(BenchError::json(path))?;
    w.write_all(b"\n").map_err(BenchError::io(path))?;
    w.flush().map_err(BenchError::io(path))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(BenchError::io(path))?;
    serde_json::from_str(&text).map_err(BenchError::json(path))
}

pub fn write_trace_csv(path: &Path, records: &[IterationRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(BenchError::csv(path))?;
    for r in records {
        w.serialize(TraceRow {
            iteration: r.iteration,
            cost: r.cost,
            gradient_norm: r.gradient_norm,
            elapsed_seconds: r.elapsed,
            function_evals: r.function_evals,
        })
        .map_err(BenchError::csv(path))?;
    }
    w.flush().map_err(BenchError::io(path))
}

pub fn read_trace_csv(path: &Path) -> Result<Vec<IterationRecord>> {
    let mut r = csv::Reader::from_path(path).map_err(BenchError::csv(path))?;
    let expected = ["iteration", "cost", "gradient_norm", "elapsed_seconds", "function_evals"];
    let headers = r.headers().map_err(BenchError::csv(path))?;
    if headers.iter().ne(expected) {
        return Err(BenchError::Format {
            path: path.into(),
            message: format!("expected columns {}", expected.join(",")),
        });
    }
    r.deserialize::<TraceRow>()
        .map(|row| {
            let row = row.map_err(BenchError::csv(path))?;
            Ok(IterationRecord {
                iteration: row.iteration,
                cost: row.cost,
                gradient_norm: row.gradient_norm,
                elapsed: row.elapsed_seconds,
                function_evals: row.function_evals,
            })
        })
        .collect()
}

pub fn write_dvh_csv<W: Write>(writer: W, curves: &[DvhCurve]) -> std::result::Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(writer);
    for c in curves {
        for (dose_gy, volume_fraction) in c.points() {
            w.serialize(DvhRow {
                structure: &c.structure,
                dose_gy,
                volume_fraction,
            })?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_dvh_file(path: &Path, curves: &[DvhCurve]) -> Result<()> {
    let file = File::create(path).map_err(BenchError::io(path))?;
    write_dvh_csv(BufWriter::new(file), curves).map_err(BenchError::csv(path))
}

pub fn write_goals(path: &Path, goals: &[DoseGoal]) -> Result<()> {
    write_json(path, &goals)
}

/// Reads every trace CSV under `<out>/traces` with the termination from its
/// final-fluence file.
pub fn read_traces(out: &Path) -> Result<Vec<TraceRecords>> {
    let dir = out.join(TRACE_DIR);
    let entries = std::fs::read_dir(&dir).map_err(BenchError::io(&dir))?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .collect();
    paths.sort();
    paths
        .iter()
        .map(|csv_path| {
            let stem = csv_path.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
            let Some((case, optimizer)) = stem.split_once("__") else {
                return Err(BenchError::Format {
                    path: csv_path.clone(),
                    message: "trace file name is not <case>__<optimizer>.csv".into(),
                });
            };
            let fin: FinalFluence = read_json(&final_path(out, case, optimizer))?;
            Ok(TraceRecords {
                case: case.to_string(),
                optimizer: optimizer.to_string(),
                records: read_trace_csv(csv_path)?,
                termination: fin.termination,
            })
        })
        .collect()
}

pub fn read_summary(out: &Path) -> Result<BenchmarkSummary> {
    read_json(&out.join(SUMMARY_FILE))
}
