//! Runs every (case, optimizer) pair of a configuration and writes the
//! results.

use std::path::Path;

use fmo_core::dose::dose_from_fluence;
use fmo_core::dvh::{compute_case_dvhs, evaluate_goals};
use fmo_core::optim::{ConvergenceTrace, Objective, OptimizerRegistry};
use rayon::prelude::*;

use crate::case::{prepare_case, PreparedCase};
use crate::config::{BenchmarkConfig, OptimizerEntry};
use crate::error::{BenchError, Result};
use crate::output::{self, FinalFluence};
use crate::summary::{summarize, BenchmarkSummary, FailedRun, TraceRecords};

/// Caps the number of pairs run at once. Defaults to the available cores.
pub const THREADS_ENV: &str = "FMO_BENCH_THREADS";

pub fn thread_count() -> Result<usize> {
    let available = std::thread::available_parallelism().map_or(1, |n| n.get());
    match std::env::var(THREADS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(n),
            _ => Err(BenchError::config(format!("{THREADS_ENV} must be a positive integer, got `{v}`"))),
        },
        Err(_) => Ok(available),
    }
}

/// Outcome of one (case, optimizer) pair.
pub struct PairRun {
    pub case: String,
    pub optimizer: String,
    pub result: Result<ConvergenceTrace>,
}

/// Runs `optimizer` `repetitions` times. Cost columns must agree exactly;
/// elapsed times are averaged record by record.
pub fn run_repeated(
    case: &PreparedCase,
    optimizer: &OptimizerEntry,
    repetitions: usize,
) -> Result<ConvergenceTrace> {
    let registry = OptimizerRegistry::builtin();
    let run = || registry.run(&case.objective, &case.initial_fluence, &optimizer.config, case.name());
    let mut trace = run()?;
    let mut elapsed: Vec<f64> = trace.records.iter().map(|r| r.elapsed).collect();
    for rep in 1..repetitions {
        let again = run()?;
        let same = again.records.len() == trace.records.len()
            && again
                .records
                .iter()
                .zip(&trace.records)
                .all(|(a, b)| a.cost.to_bits() == b.cost.to_bits());
        if !same {
            return Err(BenchError::config(format!(
                "{} on {}: repetition {rep} produced a different cost sequence",
                optimizer.label,
                case.name()
            )));
        }
        for (e, r) in elapsed.iter_mut().zip(&again.records) {
            *e += r.elapsed;
        }
    }
    for (r, e) in trace.records.iter_mut().zip(elapsed) {
        r.elapsed = e / repetitions as f64;
    }
    Ok(trace)
}

/// Runs the benchmark and writes every output file. Configuration problems
/// are reported before anything is written.
pub fn run_benchmark(config: &BenchmarkConfig) -> Result<BenchmarkSummary> {
    run_benchmark_with(config, |_| {})
}

/// As [`run_benchmark`], calling `progress` with a line per finished pair.
pub fn run_benchmark_with(config: &BenchmarkConfig, progress: impl Fn(&str) + Sync) -> Result<BenchmarkSummary> {
    config.validate()?;
    let threads = thread_count()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| BenchError::config(format!("cannot start {threads} worker threads: {e}")))?;
    let out = config.output_directory.as_path();
    let cache = config.cache_dir();

    let cases: Vec<PreparedCase> = pool.install(|| {
        config
            .cases
            .par_iter()
            .map(|entry| prepare_case(entry, cache.as_deref()))
            .collect::<Result<Vec<_>>>()
    })?;

    for dir in [output::TRACE_DIR, output::GOALS_DIR, output::DVH_DIR] {
        output::create_dir(&out.join(dir))?;
    }
    output::write_json(&out.join(output::CONFIG_FILE), config)?;
    for case in &cases {
        output::write_goals(&output::goals_path(out, case.name()), &case.entry.goals)?;
    }

    let pairs: Vec<(&PreparedCase, &OptimizerEntry)> = cases
        .iter()
        .flat_map(|c| config.optimizers.iter().map(move |o| (c, o)))
        .collect();
    let runs: Vec<PairRun> = pool.install(|| {
        pairs
            .par_iter()
            .map(|&(case, opt)| {
                let result = run_repeated(case, opt, config.repetitions)
                    .and_then(|trace| write_pair(out, case, opt, &trace, config.dvh_bin_width).map(|_| trace));
                progress(&match &result {
                    Ok(t) => format!(
                        "{} {}: cost {:.6e} after {} iterations ({:?})",
                        case.name(),
                        opt.label,
                        t.final_cost(),
                        t.iterations(),
                        t.termination
                    ),
                    Err(e) => format!("{} {}: failed: {e}", case.name(), opt.label),
                });
                PairRun {
                    case: case.name().to_string(),
                    optimizer: opt.label.clone(),
                    result,
                }
            })
            .collect()
    });

    let mut traces = Vec::new();
    let mut failures = Vec::new();
    for run in runs {
        match run.result {
            Ok(t) => traces.push(TraceRecords {
                case: run.case,
                optimizer: run.optimizer,
                records: t.records,
                termination: t.termination,
            }),
            Err(e) => failures.push(FailedRun {
                case: run.case,
                optimizer: run.optimizer,
                error: e.to_string(),
            }),
        }
    }
    let mut summary = summarize(&traces);
    summary.failures = failures;
    output::write_json(&out.join(output::SUMMARY_FILE), &summary)?;
    Ok(summary)
}

fn write_pair(
    out: &Path,
    case: &PreparedCase,
    opt: &OptimizerEntry,
    trace: &ConvergenceTrace,
    bin_width: f64,
) -> Result<()> {
    let name = case.name();
    output::write_trace_csv(&output::trace_path(out, name, &opt.label), &trace.records)?;
    let dose = dose_from_fluence(&case.matrix, &trace.final_b)?;
    let curves = compute_case_dvhs(&dose, &case.phantom, bin_width)?;
    output::write_dvh_file(&output::dvh_path(out, name, &opt.label), &curves)?;
    let final_fluence = FinalFluence {
        case: name.to_string(),
        optimizer: opt.label.clone(),
        config: opt.config.clone(),
        termination: trace.termination,
        final_cost: case.objective.value(&trace.final_b),
        final_b: trace.final_b.clone(),
        goal_checks: evaluate_goals(&curves, &case.entry.goals)?,
    };
    output::write_json(&output::final_path(out, name, &opt.label), &final_fluence)
}
