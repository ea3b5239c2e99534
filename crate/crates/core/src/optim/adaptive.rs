//! Fixed-step methods with per-coordinate adaptive scaling. Each step uses
//! the gradient at the current point and costs one evaluation.

use super::config::{OptimizerConfig, RpropParams};
use super::{Evaluator, Iterate, Optimizer, StepOutcome};

fn move_to(eval: &mut Evaluator<'_>, it: &mut Iterate, x: Vec<f64>) -> StepOutcome {
    *it = Iterate::evaluate(eval, x);
    StepOutcome::Continue
}

/// First and second moment estimates shared by the Adam family.
struct Moments {
    t: i32,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Moments {
    fn new() -> Self {
        Moments {
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    fn update(&mut self, g: &[f64], beta1: f64, beta2: f64) {
        if self.m.is_empty() {
            self.m = vec![0.0; g.len()];
            self.v = vec![0.0; g.len()];
        }
        self.t += 1;
        for ((m, v), gi) in self.m.iter_mut().zip(self.v.iter_mut()).zip(g) {
            *m = beta1 * *m + (1.0 - beta1) * gi;
            *v = beta2 * *v + (1.0 - beta2) * gi * gi;
        }
    }
}

pub(crate) struct Adam {
    config: OptimizerConfig,
    moments: Moments,
}

impl Adam {
    /// Also serves AdamW through `weight_decay`.
    pub(crate) fn new(config: &OptimizerConfig) -> Self {
        Adam {
            config: config.clone(),
            moments: Moments::new(),
        }
    }
}

impl Optimizer for Adam {
    fn step(&mut self, eval: &mut Evaluator<'_>, it: &mut Iterate) -> StepOutcome {
        let c = &self.config;
        self.moments.update(&it.g, c.beta1, c.beta2);
        let bc1 = 1.0 - c.beta1.powi(self.moments.t);
        let bc2 = 1.0 - c.beta2.powi(self.moments.t);
        let decay = 1.0 - c.learning_rate * c.weight_decay;
        let x = (0..it.x.len())
            .map(|i| {
                let denom = (self.moments.v[i] / bc2).sqrt() + c.epsilon;
                it.x[i] * decay - c.learning_rate * self.moments.m[i] / bc1 / denom
            })
            .collect();
        move_to(eval, it, x)
    }
}

/// Adam with variance rectification. While the rectifier is undefined
/// (`rho_t <= 5`) the iterate does not move.
pub(crate) struct RAdam {
    config: OptimizerConfig,
    moments: Moments,
}

impl RAdam {
    pub(crate) fn new(config: &OptimizerConfig) -> Self {
        RAdam {
            config: config.clone(),
            moments: Moments::new(),
        }
    }
}

impl Optimizer for RAdam {
    fn step(&mut self, eval: &mut Evaluator<'_>, it: &mut Iterate) -> StepOutcome {
        let c = &self.config;
        self.moments.update(&it.g, c.beta1, c.beta2);
        let t = self.moments.t;
        let b2t = c.beta2.powi(t);
        let rho_inf = 2.0 / (1.0 - c.beta2) - 1.0;
        let rho_t = rho_inf - 2.0 * f64::from(t) * b2t / (1.0 - b2t);
        if rho_t <= 5.0 {
            return StepOutcome::Continue;
        }
        let rect = ((rho_t - 4.0) * (rho_t - 2.0) * rho_inf / ((rho_inf - 4.0) * (rho_inf - 2.0) * rho_t)).sqrt();
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - b2t;
        let x = (0..it.x.len())
            .map(|i| {
                let denom = (self.moments.v[i] / bc2).sqrt() + c.epsilon;
                it.x[i] - c.learning_rate * rect * self.moments.m[i] / bc1 / denom
            })
            .collect();
        move_to(eval, it, x)
    }
}

/// Adam with Nesterov momentum and the momentum-decay schedule
/// `mu_t = beta1 (1 - 0.5 * 0.96^(0.004 t))`.
pub(crate) struct NAdam {
    config: OptimizerConfig,
    moments: Moments,
    mu_product: f64,
}

impl NAdam {
    const MOMENTUM_DECAY: f64 = 0.004;

    pub(crate) fn new(config: &OptimizerConfig) -> Self {
        NAdam {
            config: config.clone(),
            moments: Moments::new(),
            mu_product: 1.0,
        }
    }

    fn mu(&self, t: i32) -> f64 {
        self.config.beta1 * (1.0 - 0.5 * 0.96f64.powf(f64::from(t) * Self::MOMENTUM_DECAY))
    }
}

impl Optimizer for NAdam {
    fn step(&mut self, eval: &mut Evaluator<'_>, it: &mut Iterate) -> StepOutcome {
        let c = self.config.clone();
        self.moments.update(&it.g, c.beta1, c.beta2);
        let t = self.moments.t;
        let (mu, mu_next) = (self.mu(t), self.mu(t + 1));
        self.mu_product *= mu;
        let bc2 = 1.0 - c.beta2.powi(t);
        let w_grad = c.learning_rate * (1.0 - mu) / (1.0 - self.mu_product);
        let w_mom = c.learning_rate * mu_next / (1.0 - self.mu_product * mu_next);
        let x = (0..it.x.len())
            .map(|i| {
                let denom = (self.moments.v[i] / bc2).sqrt() + c.epsilon;
                it.x[i] - (w_grad * it.g[i] + w_mom * self.moments.m[i]) / denom
            })
            .collect();
        move_to(eval, it, x)
    }
}

/// Adam with the second moment replaced by an exponentially weighted
/// infinity norm.
pub(crate) struct Adamax {
    config: OptimizerConfig,
    t: i32,
    m: Vec<f64>,
    u: Vec<f64>,
}

impl Adamax {
    pub(crate) fn new(config: &OptimizerConfig) -> Self {
        Adamax {
            config: config.clone(),
            t: 0,
            m: Vec::new(),
            u: Vec::new(),
        }
    }
}

impl Optimizer for Adamax {
    fn step(&mut self, eval: &mut Evaluator<'_>, it: &mut Iterate) -> StepOutcome {
        let c = &self.config;
        if self.m.is_empty() {
            self.m = vec![0.0; it.g.len()];
            self.u = vec![0.0; it.g.len()];
        }
        self.t += 1;
        let lr = c.learning_rate / (1.0 - c.beta1.powi(self.t));
        let mut x = it.x.clone();
        for i in 0..x.len() {
            self.m[i] = c.beta1 * self.m[i] + (1.0 - c.beta1) * it.g[i];
            self.u[i] = (c.beta2 * self.u[i]).max(it.g[i].abs() + c.epsilon);
            x[i] -= lr * self.m[i] / self.u[i];
        }
        move_to(eval, it, x)
    }
}

/// Running averages of squared gradients and squared updates set the step;
/// `learning_rate` scales the result.
pub(crate) struct Adadelta {
    config: OptimizerConfig,
    sq_grad: Vec<f64>,
    sq_delta: Vec<f64>,
}

impl Adadelta {
    pub(crate) fn new(config: &OptimizerConfig) -> Self {
        Adadelta {
            config: config.clone(),
            sq_grad: Vec::new(),
            sq_delta: Vec::new(),
        }
    }
}

impl Optimizer for Adadelta {
    fn step(&mut self, eval: &mut Evaluator<'_>, it: &mut Iterate) -> StepOutcome {
        let c = &self.config;
        if self.sq_grad.is_empty() {
            self.sq_grad = vec![0.0; it.g.len()];
            self.sq_delta = vec![0.0; it.g.len()];
        }
        let rho = c.decay;
        let mut x = it.x.clone();
        for i in 0..x.len() {
            let g = it.g[i];
            self.sq_grad[i] = rho * self.sq_grad[i] + (1.0 - rho) * g * g;
            let delta = (self.sq_delta[i] + c.epsilon).sqrt() / (self.sq_grad[i] + c.epsilon).sqrt() * g;
            self.sq_delta[i] = rho * self.sq_delta[i] + (1.0 - rho) * delta * delta;
            x[i] -= c.learning_rate * delta;
        }
        move_to(eval, it, x)
    }
}

/// Adagrad when `decay` is `None`, RMSprop otherwise.
pub(crate) struct RootMeanSquare {
    config: OptimizerConfig,
    decay: Option<f64>,
    acc: Vec<f64>,
}

impl RootMeanSquare {
    pub(crate) fn rmsprop(config: &OptimizerConfig) -> Self {
        RootMeanSquare {
            config: config.clone(),
            decay: Some(config.decay),
            acc: Vec::new(),
        }
    }

    pub(crate) fn adagrad(config: &OptimizerConfig) -> Self {
        RootMeanSquare {
            config: config.clone(),
            decay: None,
            acc: Vec::new(),
        }
    }
}

impl Optimizer for RootMeanSquare {
    fn step(&mut self, eval: &mut Evaluator<'_>, it: &mut Iterate) -> StepOutcome {
        if self.acc.is_empty() {
            self.acc = vec![0.0; it.g.len()];
        }
        let c = &self.config;
        let mut x = it.x.clone();
        for i in 0..x.len() {
            let g = it.g[i];
            self.acc[i] = match self.decay {
                Some(a) => a * self.acc[i] + (1.0 - a) * g * g,
                None => self.acc[i] + g * g,
            };
            x[i] -= c.learning_rate * g / (self.acc[i].sqrt() + c.epsilon);
        }
        move_to(eval, it, x)
    }
}

/// Resilient propagation: per-coordinate steps grow while the gradient sign
/// holds and shrink when it flips; a flipped coordinate skips its update.
pub(crate) struct Rprop {
    params: RpropParams,
    steps: Vec<f64>,
    prev_grad: Vec<f64>,
}

impl Rprop {
    pub(crate) fn new(config: &OptimizerConfig) -> Self {
        Rprop {
            params: config.rprop,
            steps: Vec::new(),
            prev_grad: Vec::new(),
        }
    }
}

impl Optimizer for Rprop {
    fn step(&mut self, eval: &mut Evaluator<'_>, it: &mut Iterate) -> StepOutcome {
        let p = self.params;
        if self.steps.is_empty() {
            self.steps = vec![p.step_init; it.g.len()];
            self.prev_grad = vec![0.0; it.g.len()];
        }
        let mut x = it.x.clone();
        for i in 0..x.len() {
            let mut g = it.g[i];
            let agreement = g * self.prev_grad[i];
            if agreement > 0.0 {
                self.steps[i] = (self.steps[i] * p.eta_plus).min(p.step_max);
            } else if agreement < 0.0 {
                self.steps[i] = (self.steps[i] * p.eta_minus).max(p.step_min);
                g = 0.0;
            }
            if g != 0.0 {
                x[i] -= g.signum() * self.steps[i];
            }
            self.prev_grad[i] = g;
        }
        move_to(eval, it, x)
    }
}
