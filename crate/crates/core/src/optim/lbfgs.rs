use std::collections::VecDeque;

use super::config::OptimizerConfig;
use super::line_search::{advance, cold_start_step};
use super::vecops::{axpy, dot, norm};
use super::{Evaluator, Iterate, Optimizer, StepOutcome};

/// Pairs with `<s, y>` at or below this fraction of `|s||y|` carry no
/// usable curvature and are dropped.
pub(crate) const CURVATURE_FLOOR: f64 = 1e-10;

/// One step `s = x_{k+1} - x_k` with its gradient change `y`.
#[derive(Debug, Clone, PartialEq)]
pub struct CurvaturePair {
    pub s: Vec<f64>,
    pub y: Vec<f64>,
}

impl CurvaturePair {
    pub fn new(s: Vec<f64>, y: Vec<f64>) -> Self {
        CurvaturePair { s, y }
    }

    pub(crate) fn between(prev: &Iterate, next: &Iterate) -> Self {
        let s = next.x.iter().zip(&prev.x).map(|(a, b)| a - b).collect();
        let y = next.g.iter().zip(&prev.g).map(|(a, b)| a - b).collect();
        CurvaturePair { s, y }
    }

    pub fn sy(&self) -> f64 {
        dot(&self.s, &self.y)
    }

    pub(crate) fn is_usable(&self) -> bool {
        self.sy() > CURVATURE_FLOOR * norm(&self.s) * norm(&self.y)
    }
}

/// Returns `-H g` for the limited-memory inverse Hessian built from the last
/// `memory` pairs of `history` (oldest first). Pairs without positive
/// curvature are ignored.
pub fn lbfgs_two_loop(g: &[f64], history: &[CurvaturePair], memory: usize) -> Vec<f64> {
    let start = history.len().saturating_sub(memory);
    let pairs: Vec<&CurvaturePair> = history[start..].iter().filter(|p| p.sy() > 0.0).collect();
    let mut q = g.to_vec();
    let mut alphas = vec![0.0; pairs.len()];
    for (i, pair) in pairs.iter().enumerate().rev() {
        let rho = 1.0 / pair.sy();
        alphas[i] = rho * dot(&pair.s, &q);
        axpy(-alphas[i], &pair.y, &mut q);
    }
    let gamma = pairs.last().map_or(1.0, |p| p.sy() / dot(&p.y, &p.y));
    q.iter_mut().for_each(|v| *v *= gamma);
    for (i, pair) in pairs.iter().enumerate() {
        let rho = 1.0 / pair.sy();
        let beta = rho * dot(&pair.y, &q);
        axpy(alphas[i] - beta, &pair.s, &mut q);
    }
    q.iter_mut().for_each(|v| *v = -*v);
    q
}

pub(crate) struct Lbfgs {
    config: OptimizerConfig,
    history: VecDeque<CurvaturePair>,
}

impl Lbfgs {
    pub(crate) fn new(config: &OptimizerConfig) -> Self {
        Lbfgs {
            config: config.clone(),
            history: VecDeque::with_capacity(config.lbfgs_memory),
        }
    }
}

impl Optimizer for Lbfgs {
    fn step(&mut self, eval: &mut Evaluator<'_>, it: &mut Iterate) -> StepOutcome {
        let g = eval.reduced_gradient(&it.x, &it.g);
        let history = self.history.make_contiguous();
        let mut p = lbfgs_two_loop(&g, history, self.config.lbfgs_memory);
        eval.clip_direction(&it.x, &it.g, &mut p);
        let mut alpha0 = 1.0;
        if self.history.is_empty() || dot(&p, &it.g) >= 0.0 {
            self.history.clear();
            p = g.iter().map(|v| -v).collect();
            alpha0 = cold_start_step(&g);
        }
        let Some((prev, _)) = advance(eval, it, &p, alpha0, &self.config.line_search) else {
            return StepOutcome::LineSearchFailure;
        };
        let pair = CurvaturePair::between(&prev, it);
        if pair.is_usable() {
            if self.history.len() == self.config.lbfgs_memory {
                self.history.pop_front();
            }
            self.history.push_back(pair);
        }
        StepOutcome::Continue
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_history_is_steepest_descent() {
        let g = [1.0, -2.0, 0.5];
        assert_eq!(lbfgs_two_loop(&g, &[], 10), vec![-1.0, 2.0, -0.5]);
    }

    #[test]
    fn memory_limits_pairs_used() {
        let g = [1.0, 1.0];
        let old = CurvaturePair::new(vec![1.0, 0.0], vec![4.0, 0.0]);
        let new = CurvaturePair::new(vec![0.0, 1.0], vec![0.0, 2.0]);
        let both = lbfgs_two_loop(&g, &[old.clone(), new.clone()], 2);
        let last = lbfgs_two_loop(&g, &[old, new.clone()], 1);
        assert_eq!(last, lbfgs_two_loop(&g, &[new], 10));
        assert_ne!(both, last);
    }
}
