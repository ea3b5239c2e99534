use super::config::OptimizerConfig;
use super::line_search::cold_start_step;
use super::vecops::offset;
use super::{Evaluator, Iterate, Optimizer, StepOutcome};

const MAX_HALVINGS: usize = 60;

/// Steepest descent with Armijo backtracking. Each search starts from twice
/// the previously accepted step.
pub(crate) struct GradientDescent {
    config: OptimizerConfig,
    step: Option<f64>,
}

impl GradientDescent {
    pub(crate) fn new(config: &OptimizerConfig) -> Self {
        GradientDescent {
            config: config.clone(),
            step: None,
        }
    }
}

impl Optimizer for GradientDescent {
    fn step(&mut self, eval: &mut Evaluator<'_>, it: &mut Iterate) -> StepOutcome {
        let p: Vec<f64> = eval.reduced_gradient(&it.x, &it.g).iter().map(|v| -v).collect();
        let mut alpha = self.step.map_or_else(|| cold_start_step(&p), |a| 2.0 * a);
        let mut g = vec![0.0; p.len()];
        for _ in 0..MAX_HALVINGS {
            let mut x = offset(&it.x, alpha, &p);
            eval.project(&mut x);
            // Predicted decrease along the projected step.
            let moved: f64 = x.iter().zip(&it.x).zip(&it.g).map(|((a, b), gi)| (a - b) * gi).sum();
            let f = eval.eval(&x, &mut g);
            if f.is_finite() && moved < 0.0 && f <= it.f + self.config.line_search.c1 * moved {
                self.step = Some(alpha);
                *it = Iterate { x, f, g };
                return StepOutcome::Continue;
            }
            alpha *= 0.5;
        }
        StepOutcome::LineSearchFailure
    }
}

/// Backtracking gradient descent that also keeps a running average of the
/// iterates from `averaging_start` on. The reported point is whichever of
/// the average and the last iterate has the lower cost.
pub(crate) struct AveragedGd {
    inner: GradientDescent,
    start: usize,
    steps: usize,
    average: Option<(Vec<f64>, usize)>,
}

impl AveragedGd {
    pub(crate) fn new(config: &OptimizerConfig) -> Self {
        AveragedGd {
            inner: GradientDescent::new(config),
            start: config.averaging_start,
            steps: 0,
            average: None,
        }
    }
}

impl Optimizer for AveragedGd {
    fn step(&mut self, eval: &mut Evaluator<'_>, it: &mut Iterate) -> StepOutcome {
        let outcome = self.inner.step(eval, it);
        self.steps += 1;
        if outcome == StepOutcome::Continue && self.steps >= self.start {
            match &mut self.average {
                None => self.average = Some((it.x.clone(), 1)),
                Some((avg, count)) => {
                    *count += 1;
                    let w = 1.0 / *count as f64;
                    for (a, x) in avg.iter_mut().zip(&it.x) {
                        *a += w * (x - *a);
                    }
                }
            }
        }
        outcome
    }

    fn final_point(&self, eval: &mut Evaluator<'_>, it: &Iterate) -> Vec<f64> {
        match &self.average {
            Some((avg, count)) if *count > 1 => {
                let mut g = vec![0.0; avg.len()];
                let f = eval.eval(avg, &mut g);
                if f < it.f {
                    avg.clone()
                } else {
                    it.x.clone()
                }
            }
            _ => it.x.clone(),
        }
    }
}
