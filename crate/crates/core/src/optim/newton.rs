use super::config::OptimizerConfig;
use super::line_search::advance;
use super::vecops::{axpy, dot, norm};
use super::{Evaluator, Iterate, LinearOperator, Optimizer, StepOutcome};

/// Truncated conjugate gradient on `H p = -g`.
///
/// Stops once the residual falls to `tol * |g|` or after `max_inner` steps.
/// On nonpositive curvature it returns the current iterate, or `-g` if that
/// happens on the first step.
pub fn newton_inner_solve(hvp: &dyn LinearOperator, g: &[f64], tol: f64, max_inner: usize) -> Vec<f64> {
    let n = g.len();
    let mut z = vec![0.0; n];
    let g_norm = norm(g);
    if g_norm == 0.0 {
        return z;
    }
    let mut r = g.to_vec();
    let mut d: Vec<f64> = g.iter().map(|v| -v).collect();
    let mut hd = vec![0.0; n];
    let mut rr = dot(&r, &r);
    for j in 0..max_inner {
        hvp.apply(&d, &mut hd);
        let curvature = dot(&d, &hd);
        if !(curvature > f64::EPSILON * dot(&d, &d)) {
            if j == 0 {
                return d;
            }
            break;
        }
        let alpha = rr / curvature;
        axpy(alpha, &d, &mut z);
        axpy(alpha, &hd, &mut r);
        let rr_next = dot(&r, &r);
        if rr_next.sqrt() <= tol * g_norm {
            break;
        }
        let beta = rr_next / rr;
        rr = rr_next;
        for (di, ri) in d.iter_mut().zip(&r) {
            *di = -ri + beta * *di;
        }
    }
    z
}

/// `H` restricted to the free variables.
struct Reduced<'a> {
    inner: &'a dyn LinearOperator,
    free: Vec<bool>,
}

impl LinearOperator for Reduced<'_> {
    fn apply(&self, v: &[f64], out: &mut [f64]) {
        let masked: Vec<f64> = v.iter().zip(&self.free).map(|(&x, &f)| if f { x } else { 0.0 }).collect();
        self.inner.apply(&masked, out);
        for (o, &f) in out.iter_mut().zip(&self.free) {
            if !f {
                *o = 0.0;
            }
        }
    }
}

/// Inexact Newton: the inner solve is truncated with forcing term
/// `min(0.5, sqrt(|g| / max(1, |g0|)))`, then a Wolfe search from a unit step.
/// Under a nonnegativity bound the system is solved on the variables that
/// are not held at zero by the gradient.
pub(crate) struct NewtonCg {
    config: OptimizerConfig,
    g0_norm: Option<f64>,
}

impl NewtonCg {
    pub(crate) fn new(config: &OptimizerConfig) -> Self {
        NewtonCg {
            config: config.clone(),
            g0_norm: None,
        }
    }
}

impl Optimizer for NewtonCg {
    fn step(&mut self, eval: &mut Evaluator<'_>, it: &mut Iterate) -> StepOutcome {
        let g = eval.reduced_gradient(&it.x, &it.g);
        let g_norm = norm(&g);
        let scale = *self.g0_norm.get_or_insert(g_norm.max(1.0));
        let forcing = (g_norm / scale).sqrt().min(0.5);
        let mut p = match eval.hessian(&it.x) {
            Some(h) => {
                let free = it.x.iter().zip(&it.g).map(|(&x, &g)| !(eval.is_nonnegative() && x <= 0.0 && g > 0.0)).collect();
                let reduced = Reduced { inner: h.as_ref(), free };
                newton_inner_solve(&reduced, &g, forcing, self.config.newton_max_inner)
            }
            None => g.iter().map(|v| -v).collect(),
        };
        eval.clip_direction(&it.x, &it.g, &mut p);
        if !(dot(&p, &it.g) < 0.0) {
            p = g.iter().map(|v| -v).collect();
        }
        match advance(eval, it, &p, 1.0, &self.config.line_search) {
            Some(_) => StepOutcome::Continue,
            None => StepOutcome::LineSearchFailure,
        }
    }
}
