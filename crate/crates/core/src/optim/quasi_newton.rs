use super::config::OptimizerConfig;
use super::lbfgs::CurvaturePair;
use super::line_search::{advance, cold_start_step};
use super::vecops::dot;
use super::{Evaluator, Iterate, Optimizer, StepOutcome};

/// BFGS with a dense inverse-Hessian approximation. Under a nonnegativity
/// bound the approximation restarts whenever the set of variables at zero
/// changes.
pub(crate) struct Bfgs {
    config: OptimizerConfig,
    /// Row-major inverse Hessian; `None` until the first curvature pair.
    h: Option<Vec<f64>>,
}

impl Bfgs {
    pub(crate) fn new(config: &OptimizerConfig) -> Self {
        Bfgs {
            config: config.clone(),
            h: None,
        }
    }

    fn direction(&self, g: &[f64]) -> Vec<f64> {
        match &self.h {
            None => g.iter().map(|v| -v).collect(),
            Some(h) => {
                let n = g.len();
                (0..n).map(|i| -dot(&h[i * n..(i + 1) * n], g)).collect()
            }
        }
    }

    fn update(&mut self, pair: &CurvaturePair) {
        let n = pair.s.len();
        let sy = pair.sy();
        let rho = 1.0 / sy;
        let h = self.h.get_or_insert_with(|| {
            let gamma = sy / dot(&pair.y, &pair.y);
            let mut h = vec![0.0; n * n];
            for i in 0..n {
                h[i * n + i] = gamma;
            }
            h
        });
        let hy: Vec<f64> = (0..n).map(|i| dot(&h[i * n..(i + 1) * n], &pair.y)).collect();
        let yhy = dot(&pair.y, &hy);
        let c = rho * rho * yhy + rho;
        for i in 0..n {
            let (si, hyi) = (pair.s[i], hy[i]);
            let row = &mut h[i * n..(i + 1) * n];
            for j in 0..n {
                row[j] += c * si * pair.s[j] - rho * (hyi * pair.s[j] + si * hy[j]);
            }
        }
    }
}

impl Optimizer for Bfgs {
    fn step(&mut self, eval: &mut Evaluator<'_>, it: &mut Iterate) -> StepOutcome {
        let g = eval.reduced_gradient(&it.x, &it.g);
        let mut p = self.direction(&g);
        eval.clip_direction(&it.x, &it.g, &mut p);
        let mut alpha0 = 1.0;
        if self.h.is_none() || dot(&p, &it.g) >= 0.0 {
            self.h = None;
            p = g.iter().map(|v| -v).collect();
            alpha0 = cold_start_step(&g);
        }
        let Some((prev, _)) = advance(eval, it, &p, alpha0, &self.config.line_search) else {
            return StepOutcome::LineSearchFailure;
        };
        let pair = CurvaturePair::between(&prev, it);
        // Restart when the set of variables at zero changes.
        if eval.is_nonnegative() && prev.x.iter().zip(&it.x).any(|(a, b)| (*a <= 0.0) != (*b <= 0.0)) {
            self.h = None;
        }
        if pair.is_usable() {
            self.update(&pair);
        }
        StepOutcome::Continue
    }
}

/// Nonlinear conjugate gradient, Polak-Ribiere+ with restarts.
pub(crate) struct ConjugateGradient {
    config: OptimizerConfig,
    direction: Option<Vec<f64>>,
    /// `(alpha, g.p)` of the previous step, used to guess the next step.
    last_step: Option<(f64, f64)>,
    /// Reduced gradient at the start of the previous step.
    prev_grad: Vec<f64>,
    since_restart: usize,
}

impl ConjugateGradient {
    pub(crate) fn new(config: &OptimizerConfig) -> Self {
        ConjugateGradient {
            config: config.clone(),
            direction: None,
            last_step: None,
            prev_grad: Vec::new(),
            since_restart: 0,
        }
    }
}

impl Optimizer for ConjugateGradient {
    fn step(&mut self, eval: &mut Evaluator<'_>, it: &mut Iterate) -> StepOutcome {
        let g = eval.reduced_gradient(&it.x, &it.g);
        let steepest: Vec<f64> = g.iter().map(|v| -v).collect();
        let mut p = match self.direction.take() {
            Some(d) => {
                let gg_prev = dot(&self.prev_grad, &self.prev_grad);
                let num: f64 = g.iter().zip(&self.prev_grad).map(|(a, b)| a * (a - b)).sum();
                let beta = if gg_prev > 0.0 { (num / gg_prev).max(0.0) } else { 0.0 };
                g.iter().zip(&d).map(|(gi, di)| -gi + beta * di).collect()
            }
            None => steepest.clone(),
        };
        eval.clip_direction(&it.x, &it.g, &mut p);
        let mut slope = dot(&p, &it.g);
        if slope >= 0.0 || self.since_restart >= it.x.len() {
            p = steepest;
            slope = dot(&p, &it.g);
            self.since_restart = 0;
        }
        let alpha0 = match self.last_step {
            Some((alpha, prev_slope)) => (alpha * prev_slope / slope).min(1e10),
            None => cold_start_step(&g),
        };
        let Some((_, alpha)) = advance(eval, it, &p, alpha0, &self.config.line_search) else {
            return StepOutcome::LineSearchFailure;
        };
        self.last_step = Some((alpha, slope));
        self.prev_grad = g;
        self.direction = Some(p);
        self.since_restart += 1;
        StepOutcome::Continue
    }
}
