//! Per-case comparison of convergence traces.

use fmo_core::optim::{IterationRecord, Termination};
use serde::{Deserialize, Serialize};

/// A trace counts as converged once its cost is within this factor of the
/// best final cost on its case.
pub const THRESHOLD_FACTOR: f64 = 1.01;

/// The parts of a convergence trace the summary needs.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecords {
    pub case: String,
    pub optimizer: String,
    pub records: Vec<IterationRecord>,
    pub termination: Termination,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseSummary {
    pub case: String,
    pub best_final_cost: f64,
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub case: String,
    pub optimizer: String,
    pub initial_cost: f64,
    pub final_cost: f64,
    pub iterations: usize,
    /// First iteration whose cost is within the case threshold, if any.
    pub iterations_to_threshold: Option<usize>,
    /// Seconds.
    pub time_to_threshold: Option<f64>,
    /// Total elapsed seconds over iterations.
    pub mean_iteration_seconds: f64,
    pub function_evals: usize,
    pub termination: Termination,
}

/// A pair whose run could not be performed at all.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailedRun {
    pub case: String,
    pub optimizer: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkSummary {
    pub threshold_factor: f64,
    pub cases: Vec<CaseSummary>,
    /// Sorted by case, then optimizer.
    pub rows: Vec<SummaryRow>,
    #[serde(default)]
    pub failures: Vec<FailedRun>,
}

impl BenchmarkSummary {
    pub fn row(&self, case: &str, optimizer: &str) -> Option<&SummaryRow> {
        self.rows.iter().find(|r| r.case == case && r.optimizer == optimizer)
    }

    pub fn case(&self, case: &str) -> Option<&CaseSummary> {
        self.cases.iter().find(|c| c.case == case)
    }

    pub fn rows_for<'a>(&'a self, case: &'a str) -> impl Iterator<Item = &'a SummaryRow> + 'a {
        self.rows.iter().filter(move |r| r.case == case)
    }
}

/// Thresholds are `THRESHOLD_FACTOR` times the lowest final cost among the
/// traces of each case. Traces without records are skipped.
pub fn summarize(traces: &[TraceRecords]) -> BenchmarkSummary {
    let mut traces: Vec<&TraceRecords> = traces.iter().filter(|t| !t.records.is_empty()).collect();
    traces.sort_by(|a, b| (&a.case, &a.optimizer).cmp(&(&b.case, &b.optimizer)));
    let mut cases: Vec<CaseSummary> = Vec::new();
    for t in &traces {
        let last = t.records[t.records.len() - 1].cost;
        match cases.iter_mut().find(|c| c.case == t.case) {
            Some(c) => c.best_final_cost = c.best_final_cost.min(last),
            None => cases.push(CaseSummary {
                case: t.case.clone(),
                best_final_cost: last,
                threshold: 0.0,
            }),
        }
    }
    for c in &mut cases {
        c.threshold = THRESHOLD_FACTOR * c.best_final_cost;
    }
    let rows = traces
        .iter()
        .map(|t| {
            let threshold = cases.iter().find(|c| c.case == t.case).map_or(f64::NAN, |c| c.threshold);
            let first = &t.records[0];
            let last = &t.records[t.records.len() - 1];
            let hit = t.records.iter().find(|r| r.cost <= threshold);
            SummaryRow {
                case: t.case.clone(),
                optimizer: t.optimizer.clone(),
                initial_cost: first.cost,
                final_cost: last.cost,
                iterations: last.iteration,
                iterations_to_threshold: hit.map(|r| r.iteration),
                time_to_threshold: hit.map(|r| r.elapsed),
                mean_iteration_seconds: if last.iteration > 0 {
                    last.elapsed / last.iteration as f64
                } else {
                    0.0
                },
                function_evals: last.function_evals,
                termination: t.termination,
            }
        })
        .collect();
    BenchmarkSummary {
        threshold_factor: THRESHOLD_FACTOR,
        cases,
        rows,
        failures: Vec::new(),
    }
}
