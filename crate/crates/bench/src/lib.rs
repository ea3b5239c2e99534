//! Benchmark harness for the fluence-map optimizers.
//!
//! A [`BenchmarkConfig`] names cases and optimizers; [`run_benchmark`]
//! builds each case once, runs every pair (in parallel, capped by
//! `FMO_BENCH_THREADS`), and writes traces, final fluences, DVHs, goal
//! lists and a summary under the output directory.

pub mod case;
pub mod config;
pub mod error;
pub mod output;
pub mod runner;
pub mod summary;

pub use config::{BenchmarkConfig, CaseEntry, OptimizerEntry};
pub use error::{BenchError, Result};
pub use runner::{run_benchmark, run_benchmark_with, THREADS_ENV};
pub use summary::{summarize, BenchmarkSummary, SummaryRow, TraceRecords};
