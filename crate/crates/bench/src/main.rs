use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use fmo_bench::case::{build_matrix, prepare_case};
use fmo_bench::config::{BenchmarkConfig, CaseEntry};
use fmo_bench::output::{self, FinalFluence};
use fmo_bench::{run_benchmark_with, BenchmarkSummary};
use fmo_core::dose::dose_from_fluence;
use fmo_core::dvh::{compute_case_dvhs, evaluate_goals, DEFAULT_BIN_WIDTH};
use fmo_core::optim::OptimizerId;
use fmo_core::phantom::{CaseName, CaseSpec};

#[derive(Parser)]
#[command(name = "fmo-bench", version, about = "Benchmark fluence-map optimizers on synthetic IMRT cases")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every (case, optimizer) pair of a configuration file.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides `output_directory` from the configuration.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the optimizer names accepted in configurations.
    ListOptimizers,
    /// Print the built-in case names.
    ListCases,
    /// Recompute dose from a run's final fluence and write DVH curves as CSV.
    Dvh {
        #[arg(long)]
        case: String,
        /// A `<case>__<opt>.final.json` file or its trace CSV.
        #[arg(long)]
        trace: PathBuf,
        /// Configuration defining the case, for cases not built in.
        #[arg(long)]
        config: Option<PathBuf>,
        /// CSV destination; standard output when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Gy.
        #[arg(long, default_value_t = DEFAULT_BIN_WIDTH)]
        bin_width: f64,
    },
    /// Build a case's dose-influence matrix and write it as binary triplets.
    ExportMatrix {
        #[arg(long)]
        case: String,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() {
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run { config, out } => {
            let mut cfg = BenchmarkConfig::from_file(&config)?;
            if let Some(out) = out {
                cfg.output_directory = out;
            }
            let summary = run_benchmark_with(&cfg, |line| eprintln!("{line}"))?;
            print_summary(&summary);
            println!("results written to {}", cfg.output_directory.display());
            if !summary.failures.is_empty() {
                bail!("{} run(s) failed", summary.failures.len());
            }
            Ok(())
        }
        Command::ListOptimizers => {
            for id in OptimizerId::ALL {
                println!("{id}");
            }
            Ok(())
        }
        Command::ListCases => {
            for name in CaseName::ALL {
                let spec = CaseSpec::builtin(name);
                let structures: Vec<&str> = spec.structures.iter().map(|s| s.name.as_str()).collect();
                let [x, y, z] = spec.grid.dims;
                println!("{name}\t{x}x{y}x{z}\t{}", structures.join(","));
            }
            Ok(())
        }
        Command::Dvh {
            case,
            trace,
            config,
            out,
            bin_width,
        } => dvh(&case, &trace, config.as_deref(), out.as_deref(), bin_width),
        Command::ExportMatrix { case, out } => {
            let entry = CaseEntry::builtin(case.parse()?);
            let (_, matrix) = build_matrix(&entry)?;
            let file = File::create(&out).with_context(|| format!("creating {}", out.display()))?;
            matrix.write_triplets(BufWriter::new(file))?;
            println!(
                "{}: {} voxels x {} bixels, {} nonzeros written to {}",
                entry.name(),
                matrix.n_voxels(),
                matrix.n_bixels(),
                matrix.nnz(),
                out.display()
            );
            Ok(())
        }
    }
}

fn find_case(case: &str, config: Option<&Path>) -> Result<CaseEntry> {
    if let Some(path) = config {
        let cfg = BenchmarkConfig::from_file(path)?;
        return cfg
            .cases
            .into_iter()
            .find(|c| c.name() == case)
            .with_context(|| format!("case `{case}` is not in {}", path.display()));
    }
    Ok(CaseEntry::builtin(case.parse()?))
}

fn dvh(case: &str, trace: &Path, config: Option<&Path>, out: Option<&Path>, bin_width: f64) -> Result<()> {
    let final_file = match trace.extension().and_then(|e| e.to_str()) {
        Some("csv") => trace.with_extension("final.json"),
        _ => trace.to_path_buf(),
    };
    let fin: FinalFluence = output::read_json(&final_file)?;
    if fin.case != case {
        bail!("{} holds a run on `{}`, not `{case}`", final_file.display(), fin.case);
    }
    let entry = find_case(case, config)?;
    let prepared = prepare_case(&entry, None)?;
    let dose = dose_from_fluence(&prepared.matrix, &fin.final_b)
        .with_context(|| format!("final fluence in {}", final_file.display()))?;
    let curves = compute_case_dvhs(&dose, &prepared.phantom, bin_width)?;
    let checks = evaluate_goals(&curves, &entry.goals)?;

    let mut report = String::new();
    report.push_str(&prepared.objective.evaluate(&fin.final_b)?.to_string());
    for c in &checks {
        report.push_str(&format!(
            "{:<40} achieved {:>6.3} {}\n",
            c.goal.to_string(),
            c.achieved_fraction,
            if c.passed { "pass" } else { "FAIL" }
        ));
    }
    match out {
        Some(path) => {
            output::write_dvh_file(path, &curves)?;
            print!("{report}");
        }
        None => {
            eprint!("{report}");
            let stdout = std::io::stdout();
            let mut lock = stdout.lock();
            output::write_dvh_csv(&mut lock, &curves)?;
            lock.flush()?;
        }
    }
    Ok(())
}

fn print_summary(summary: &BenchmarkSummary) {
    println!(
        "{:<14} {:<10} {:>14} {:>6} {:>8} {:>10} {:>12}  termination",
        "case", "optimizer", "final cost", "iters", "to 1%", "t to 1%", "s/iter"
    );
    for r in &summary.rows {
        let reach = r.iterations_to_threshold.map_or("-".to_string(), |i| i.to_string());
        let time = r.time_to_threshold.map_or("-".to_string(), |t| format!("{t:.3}"));
        println!(
            "{:<14} {:<10} {:>14.6e} {:>6} {:>8} {:>10} {:>12.3e}  {:?}",
            r.case, r.optimizer, r.final_cost, r.iterations, reach, time, r.mean_iteration_seconds, r.termination
        );
    }
    for f in &summary.failures {
        println!("{:<14} {:<10} failed: {}", f.case, f.optimizer, f.error);
    }
}
