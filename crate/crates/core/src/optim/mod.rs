//! Gradient-based optimizers over a generic smooth objective.
//!
//! Every method implements [`Optimizer`] and is created by name through the
//! [`OptimizerRegistry`]. [`run`] drives any of them and records a
//! [`ConvergenceTrace`].

mod adaptive;
mod config;
mod gd;
mod lbfgs;
mod line_search;
mod newton;
mod quasi_newton;
mod registry;
pub mod vecops;

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{FmoError, Result};

pub use config::{LineSearchParams, OptimizerConfig, OptimizerId, RpropParams};
pub use lbfgs::{lbfgs_two_loop, CurvaturePair};
pub use line_search::{wolfe_line_search, LineSearchError, LineSearchStep};
pub use newton::newton_inner_solve;
pub use registry::{OptimizerFactory, OptimizerRegistry};

/// A symmetric linear map, typically a Hessian at a fixed point.
pub trait LinearOperator {
    fn apply(&self, v: &[f64], out: &mut [f64]);
}

/// A smooth scalar function of `dim()` variables.
///
/// Implementations must be safe to share between threads because separate
/// runs may evaluate the same objective concurrently.
pub trait Objective: Sync {
    fn dim(&self) -> usize;

    /// Writes the gradient into `grad` and returns the value.
    fn value_and_gradient(&self, x: &[f64], grad: &mut [f64]) -> f64;

    fn value(&self, x: &[f64]) -> f64 {
        let mut g = vec![0.0; self.dim()];
        self.value_and_gradient(x, &mut g)
    }

    /// Hessian at `x` as an operator, if the objective provides one.
    fn hessian(&self, _x: &[f64]) -> Option<Box<dyn LinearOperator + '_>> {
        None
    }

    /// For objectives of the form `f(b) = F(|b|)` with `F` smooth on the
    /// nonnegative orthant, returns `F`. Line-search methods then minimize
    /// `F` over `x >= 0` with projected steps, which sidesteps the kinks of
    /// `|b|` at zero without changing any cost value.
    fn magnitude_form(&self) -> Option<Box<dyn Objective + '_>> {
        None
    }
}

/// Dense matrix-vector operator, row-major.
#[derive(Debug, Clone)]
pub struct DenseOperator {
    n: usize,
    data: Vec<f64>,
}

impl DenseOperator {
    pub fn new(n: usize, data: Vec<f64>) -> Result<Self> {
        crate::error::check_len("dense operator", n * n, data.len())?;
        Ok(DenseOperator { n, data })
    }
}

impl LinearOperator for DenseOperator {
    fn apply(&self, v: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate().take(self.n) {
            *o = vecops::dot(&self.data[i * self.n..(i + 1) * self.n], v);
        }
    }
}

/// `f(x) = 0.5 xᵀAx - bᵀx` with a dense symmetric `A`.
#[derive(Debug, Clone)]
pub struct Quadratic {
    a: DenseOperator,
    b: Vec<f64>,
}

impl Quadratic {
    pub fn new(a: Vec<f64>, b: Vec<f64>) -> Result<Self> {
        let n = b.len();
        let a = DenseOperator::new(n, a)?;
        for i in 0..n {
            for j in 0..i {
                if (a.data[i * n + j] - a.data[j * n + i]).abs() > 1e-12 {
                    return Err(FmoError::config("quadratic matrix must be symmetric"));
                }
            }
        }
        Ok(Quadratic { a, b })
    }

    pub fn matrix(&self) -> &[f64] {
        &self.a.data
    }

    pub fn rhs(&self) -> &[f64] {
        &self.b
    }
}

impl Objective for Quadratic {
    fn dim(&self) -> usize {
        self.b.len()
    }

    fn value_and_gradient(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        self.a.apply(x, grad);
        let quad = 0.5 * vecops::dot(x, grad);
        for (g, b) in grad.iter_mut().zip(&self.b) {
            *g -= b;
        }
        quad - vecops::dot(&self.b, x)
    }

    fn hessian(&self, _x: &[f64]) -> Option<Box<dyn LinearOperator + '_>> {
        Some(Box::new(self.a.clone()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub cost: f64,
    pub gradient_norm: f64,
    /// Seconds since the start of the run.
    pub elapsed: f64,
    /// Cumulative objective evaluations.
    pub function_evals: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Termination {
    Converged,
    MaxIterations,
    LineSearchFailure,
    /// A non-finite cost or gradient appeared; the trace stops at the last
    /// finite iterate.
    NumericalFailure,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceTrace {
    pub optimizer: OptimizerId,
    pub case_name: String,
    pub records: Vec<IterationRecord>,
    pub final_b: Vec<f64>,
    pub termination: Termination,
}

impl ConvergenceTrace {
    pub fn initial_cost(&self) -> f64 {
        self.records[0].cost
    }

    pub fn final_cost(&self) -> f64 {
        self.records.last().map_or(f64::NAN, |r| r.cost)
    }

    pub fn iterations(&self) -> usize {
        self.records.last().map_or(0, |r| r.iteration)
    }
}

/// Counts objective evaluations for one run and knows whether the
/// iterates are confined to `x >= 0`.
pub struct Evaluator<'a> {
    objective: &'a dyn Objective,
    evals: usize,
    nonnegative: bool,
}

impl<'a> Evaluator<'a> {
    pub fn new(objective: &'a dyn Objective) -> Self {
        Evaluator {
            objective,
            evals: 0,
            nonnegative: false,
        }
    }

    /// Evaluator for minimizing over the nonnegative orthant.
    pub fn nonnegative(objective: &'a dyn Objective) -> Self {
        Evaluator {
            objective,
            evals: 0,
            nonnegative: true,
        }
    }

    pub fn is_nonnegative(&self) -> bool {
        self.nonnegative
    }

    /// Gradient with the components of variables held at the bound zeroed.
    /// Without a bound this is the gradient itself.
    pub fn reduced_gradient(&self, x: &[f64], g: &[f64]) -> Vec<f64> {
        if !self.nonnegative {
            return g.to_vec();
        }
        x.iter()
            .zip(g)
            .map(|(&xi, &gi)| if xi <= 0.0 && gi > 0.0 { 0.0 } else { gi })
            .collect()
    }

    /// Zeroes the components of `p` for variables on the bound that would
    /// leave the feasible set or that the gradient holds there.
    pub fn clip_direction(&self, x: &[f64], g: &[f64], p: &mut [f64]) {
        if self.nonnegative {
            for ((pi, &xi), &gi) in p.iter_mut().zip(x).zip(g) {
                if xi <= 0.0 && (*pi < 0.0 || gi > 0.0) {
                    *pi = 0.0;
                }
            }
        }
    }

    /// Projects `x` onto the feasible set.
    pub fn project(&self, x: &mut [f64]) {
        if self.nonnegative {
            x.iter_mut().for_each(|v| *v = v.max(0.0));
        }
    }

    pub fn dim(&self) -> usize {
        self.objective.dim()
    }

    pub fn eval(&mut self, x: &[f64], grad: &mut [f64]) -> f64 {
        self.evals += 1;
        self.objective.value_and_gradient(x, grad)
    }

    pub fn hessian(&self, x: &[f64]) -> Option<Box<dyn LinearOperator + 'a>> {
        self.objective.hessian(x)
    }

    pub fn evals(&self) -> usize {
        self.evals
    }
}

/// Current point with its cost and gradient.
#[derive(Debug, Clone)]
pub struct Iterate {
    pub x: Vec<f64>,
    pub f: f64,
    pub g: Vec<f64>,
}

impl Iterate {
    pub fn evaluate(eval: &mut Evaluator<'_>, x: Vec<f64>) -> Self {
        let mut g = vec![0.0; x.len()];
        let f = eval.eval(&x, &mut g);
        Iterate { x, f, g }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepOutcome {
    Continue,
    LineSearchFailure,
}

/// One optimization method. `step` moves `it` to the next iterate and
/// leaves its cost and gradient up to date.
pub trait Optimizer {
    fn step(&mut self, eval: &mut Evaluator<'_>, it: &mut Iterate) -> StepOutcome;

    /// Point reported as the result of the run.
    fn final_point(&self, _eval: &mut Evaluator<'_>, it: &Iterate) -> Vec<f64> {
        it.x.clone()
    }
}

/// Runs the configured optimizer from `b0` and records every iteration.
pub fn run(objective: &dyn Objective, b0: &[f64], config: &OptimizerConfig) -> Result<ConvergenceTrace> {
    run_named(objective, b0, config, "")
}

/// Like [`run`], tagging the trace with a case name.
pub fn run_named(
    objective: &dyn Objective,
    b0: &[f64],
    config: &OptimizerConfig,
    case_name: &str,
) -> Result<ConvergenceTrace> {
    OptimizerRegistry::builtin().run(objective, b0, config, case_name)
}

/// Runs `optimizer` from `b0`. With `bounded` set and an objective that has
/// a magnitude form, the run minimizes that form over `x >= 0` from `|b0|`.
pub(crate) fn drive(
    optimizer: &mut dyn Optimizer,
    objective: &dyn Objective,
    b0: &[f64],
    config: &OptimizerConfig,
    case_name: &str,
    bounded: bool,
) -> Result<ConvergenceTrace> {
    crate::error::check_len("initial fluence", objective.dim(), b0.len())?;
    if !vecops::all_finite(b0) {
        return Err(FmoError::config("initial point must be finite"));
    }
    let start = Instant::now();
    let magnitude = if bounded { objective.magnitude_form() } else { None };
    let (mut eval, x0) = match &magnitude {
        Some(form) => (Evaluator::nonnegative(form.as_ref()), b0.iter().map(|v| v.abs()).collect()),
        None => (Evaluator::new(objective), b0.to_vec()),
    };
    let mut it = Iterate::evaluate(&mut eval, x0);
    let mut trace = ConvergenceTrace {
        optimizer: config.id,
        case_name: case_name.to_string(),
        records: Vec::with_capacity(config.max_iterations.min(4096) + 1),
        final_b: Vec::new(),
        termination: Termination::MaxIterations,
    };
    let stationarity = |it: &Iterate, eval: &Evaluator<'_>| vecops::norm(&eval.reduced_gradient(&it.x, &it.g));
    let record = |k: usize, it: &Iterate, eval: &Evaluator<'_>| IterationRecord {
        iteration: k,
        cost: it.f,
        gradient_norm: stationarity(it, eval),
        elapsed: start.elapsed().as_secs_f64(),
        function_evals: eval.evals(),
    };
    if !(it.f.is_finite() && vecops::all_finite(&it.g)) {
        return Err(FmoError::config("objective is not finite at the initial point"));
    }
    trace.records.push(record(0, &it, &eval));

    let scale = trace.records[0].gradient_norm.max(1.0);
    let tolerance = config.gradient_tolerance;
    let converged = |r: &IterationRecord| r.gradient_norm / scale <= tolerance;

    if converged(&trace.records[0]) {
        trace.termination = Termination::Converged;
    } else {
        for k in 1..=config.max_iterations {
            let last_good = it.clone();
            let outcome = optimizer.step(&mut eval, &mut it);
            if !(it.f.is_finite() && vecops::all_finite(&it.g) && vecops::all_finite(&it.x)) {
                it = last_good;
                trace.termination = Termination::NumericalFailure;
                break;
            }
            if outcome == StepOutcome::LineSearchFailure {
                trace.termination = Termination::LineSearchFailure;
                break;
            }
            trace.records.push(record(k, &it, &eval));
            if converged(trace.records.last().unwrap()) {
                trace.termination = Termination::Converged;
                break;
            }
        }
    }
    trace.final_b = optimizer.final_point(&mut eval, &it);
    Ok(trace)
}

#[cfg(test)]
mod tests;
