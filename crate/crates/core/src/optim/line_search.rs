use thiserror::Error;

use super::config::LineSearchParams;
use super::vecops::{dot, norm_inf, offset};
use super::{Evaluator, Iterate};

const MAX_STEP: f64 = 1e10;
const ROUNDOFF: f64 = 1e-13;

/// An accepted step `x = x0 + alpha * p`.
#[derive(Debug, Clone, PartialEq)]
pub struct LineSearchStep {
    pub alpha: f64,
    pub x: Vec<f64>,
    pub f: f64,
    pub g: Vec<f64>,
    /// Evaluations spent by this search.
    pub evals: usize,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LineSearchError {
    #[error("search direction is not a descent direction (slope {slope})")]
    NotDescent { slope: f64 },
    /// No strong Wolfe point within the budget. `best_armijo` is the lowest
    /// evaluated point that still gives sufficient decrease, if any.
    #[error("no strong Wolfe step within {evals} evaluations")]
    MaxEvals {
        evals: usize,
        best_armijo: Option<Box<LineSearchStep>>,
    },
}

struct Probe {
    alpha: f64,
    f: f64,
    slope: f64,
    x: Vec<f64>,
    g: Vec<f64>,
}

struct Search<'a, F> {
    path: F,
    f0: f64,
    slope0: f64,
    params: &'a LineSearchParams,
    evals: usize,
    best: Option<Probe>,
}

impl<F: FnMut(f64) -> Probe> Search<'_, F> {
    fn probe(&mut self, alpha: f64) -> Probe {
        let probe = (self.path)(alpha);
        self.evals += 1;
        if self.armijo(&probe) && probe.f < self.f0 && self.best.as_ref().map_or(true, |b| probe.f < b.f) {
            self.best = Some(Probe {
                alpha,
                f: probe.f,
                slope: probe.slope,
                x: probe.x.clone(),
                g: probe.g.clone(),
            });
        }
        probe
    }

    fn armijo(&self, p: &Probe) -> bool {
        let predicted = self.params.c1 * p.alpha * self.slope0;
        p.f.is_finite() && (p.f <= self.f0 + predicted || (p.f <= self.f0 && -predicted <= ROUNDOFF * self.f0.abs()))
    }

    fn curvature(&self, p: &Probe) -> bool {
        p.slope.abs() <= -self.params.c2 * self.slope0
    }

    fn budget_left(&self) -> bool {
        self.evals < self.params.max_evals
    }

    fn accept(&self, p: Probe) -> LineSearchStep {
        LineSearchStep {
            alpha: p.alpha,
            x: p.x,
            f: p.f,
            g: p.g,
            evals: self.evals,
        }
    }

    fn fail(self) -> LineSearchError {
        let evals = self.evals;
        LineSearchError::MaxEvals {
            evals,
            best_armijo: self.best.map(|p| {
                Box::new(LineSearchStep {
                    alpha: p.alpha,
                    x: p.x,
                    f: p.f,
                    g: p.g,
                    evals,
                })
            }),
        }
    }

    fn zoom(mut self, mut lo: Probe, mut hi: Probe) -> Result<LineSearchStep, LineSearchError> {
        while self.budget_left() {
            let width = (hi.alpha - lo.alpha).abs();
            if width <= 1e-14 * lo.alpha.abs().max(hi.alpha.abs()) {
                break;
            }
            let alpha = interpolate(&lo, &hi);
            let trial = self.probe(alpha);
            if !self.armijo(&trial) || trial.f >= lo.f {
                hi = trial;
            } else {
                if self.curvature(&trial) {
                    return Ok(self.accept(trial));
                }
                if trial.slope * (hi.alpha - lo.alpha) >= 0.0 {
                    hi = lo;
                }
                lo = trial;
            }
        }
        Err(self.fail())
    }
}

/// Safeguarded cubic minimizer of the interpolant through both ends;
/// bisection when the cubic is degenerate or lands too close to an end.
fn interpolate(lo: &Probe, hi: &Probe) -> f64 {
    let (a, b) = (lo.alpha, hi.alpha);
    let mid = 0.5 * (a + b);
    if !(lo.f.is_finite() && hi.f.is_finite() && hi.slope.is_finite()) {
        return mid;
    }
    let d1 = lo.slope + hi.slope - 3.0 * (lo.f - hi.f) / (a - b);
    let disc = d1 * d1 - lo.slope * hi.slope;
    if disc < 0.0 {
        return mid;
    }
    let d2 = (b - a).signum() * disc.sqrt();
    let denom = hi.slope - lo.slope + 2.0 * d2;
    if denom == 0.0 {
        return mid;
    }
    let t = b - (b - a) * (hi.slope + d2 - d1) / denom;
    let (left, right) = (a.min(b), a.max(b));
    let margin = 0.1 * (right - left);
    if t.is_finite() && t >= left + margin && t <= right - margin {
        t
    } else {
        mid
    }
}

/// Strong Wolfe line search by bracketing and zoom.
///
/// `fg(x, grad)` returns the value at `x` and writes its gradient. The
/// search starts at `alpha0` and doubles the step while the bracket is open.
pub fn wolfe_line_search<F>(
    mut fg: F,
    x0: &[f64],
    p: &[f64],
    f0: f64,
    g0: &[f64],
    alpha0: f64,
    params: &LineSearchParams,
) -> Result<LineSearchStep, LineSearchError>
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    let path = |alpha: f64| {
        let x = offset(x0, alpha, p);
        let mut g = vec![0.0; x.len()];
        let f = fg(&x, &mut g);
        Probe {
            alpha,
            f,
            slope: dot(&g, p),
            x,
            g,
        }
    };
    search_path(path, x0, f0, g0, dot(g0, p), alpha0, params)
}

/// Strong Wolfe search along `alpha -> x(alpha)` given by `path`, which
/// starts at `x0` with value `f0`, gradient `g0` and slope `slope0`.
fn search_path<F: FnMut(f64) -> Probe>(
    path: F,
    x0: &[f64],
    f0: f64,
    g0: &[f64],
    slope0: f64,
    alpha0: f64,
    params: &LineSearchParams,
) -> Result<LineSearchStep, LineSearchError> {
    if !(slope0 < 0.0) {
        return Err(LineSearchError::NotDescent { slope: slope0 });
    }
    let mut search = Search {
        path,
        f0,
        slope0,
        params,
        evals: 0,
        best: None,
    };
    let mut prev = Probe {
        alpha: 0.0,
        f: f0,
        slope: slope0,
        x: x0.to_vec(),
        g: g0.to_vec(),
    };
    let mut alpha = if alpha0 > 0.0 && alpha0.is_finite() { alpha0.min(MAX_STEP) } else { 1.0 };
    let mut first = true;
    while search.budget_left() {
        let trial = search.probe(alpha);
        if !search.armijo(&trial) || (!first && trial.f >= prev.f) {
            return search.zoom(prev, trial);
        }
        if search.curvature(&trial) {
            return Ok(search.accept(trial));
        }
        if trial.slope >= 0.0 {
            return search.zoom(trial, prev);
        }
        if alpha >= MAX_STEP {
            break;
        }
        prev = trial;
        alpha = (2.0 * alpha).min(MAX_STEP);
        first = false;
    }
    Err(search.fail())
}

/// Moves `it` along `p` with a strong Wolfe search, falling back to the best
/// sufficient-decrease point when the curvature condition is never met.
/// Returns the previous iterate and the step length, or `None` when no
/// acceptable step exists.
pub(crate) fn advance(
    eval: &mut Evaluator<'_>,
    it: &mut Iterate,
    p: &[f64],
    alpha0: f64,
    params: &LineSearchParams,
) -> Option<(Iterate, f64)> {
    let result = if eval.is_nonnegative() {
        // Projected path max(0, x + alpha p); coordinates clipped at zero
        // do not move, so they drop out of the slope.
        let x0 = &it.x;
        let path = |alpha: f64| {
            let x: Vec<f64> = x0.iter().zip(p).map(|(a, b)| (a + alpha * b).max(0.0)).collect();
            let mut g = vec![0.0; x.len()];
            let f = eval.eval(&x, &mut g);
            let slope = x.iter().zip(&g).zip(p).filter(|((xi, _), _)| **xi > 0.0).map(|((_, gi), pi)| gi * pi).sum();
            Probe { alpha, f, slope, x, g }
        };
        search_path(path, &it.x, it.f, &it.g, dot(&it.g, p), alpha0, params)
    } else {
        wolfe_line_search(|x, g| eval.eval(x, g), &it.x, p, it.f, &it.g, alpha0, params)
    };
    let step = match result {
        Ok(step) => step,
        Err(LineSearchError::MaxEvals {
            best_armijo: Some(step),
            ..
        }) => *step,
        Err(_) => return None,
    };
    let alpha = step.alpha;
    let next = Iterate {
        x: step.x,
        f: step.f,
        g: step.g,
    };
    Some((std::mem::replace(it, next), alpha))
}

/// First trial step when no curvature information exists yet.
pub(crate) fn cold_start_step(g: &[f64]) -> f64 {
    let m = norm_inf(g);
    if m > 0.0 {
        (1.0 / m).min(1.0)
    } else {
        1.0
    }
}
