use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{FmoError, Result};

/// Every optimizer the registry knows about.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum OptimizerId {
    GD,
    CG,
    NewtonCG,
    BFGS,
    LBFGS,
    Adam,
    RAdam,
    NAdam,
    Adadelta,
    Adamax,
    RMSprop,
    Rprop,
    AdamW,
    Adagrad,
    ASGD,
}

impl OptimizerId {
    pub const ALL: [OptimizerId; 15] = [
        OptimizerId::GD,
        OptimizerId::CG,
        OptimizerId::NewtonCG,
        OptimizerId::BFGS,
        OptimizerId::LBFGS,
        OptimizerId::Adam,
        OptimizerId::RAdam,
        OptimizerId::NAdam,
        OptimizerId::Adadelta,
        OptimizerId::Adamax,
        OptimizerId::RMSprop,
        OptimizerId::Rprop,
        OptimizerId::AdamW,
        OptimizerId::Adagrad,
        OptimizerId::ASGD,
    ];

    /// The optimizers reported in headline comparisons. AdamW, Adagrad and
    /// ASGD are variants that track Adam or GD closely.
    pub const HEADLINE: [OptimizerId; 12] = [
        OptimizerId::GD,
        OptimizerId::CG,
        OptimizerId::NewtonCG,
        OptimizerId::BFGS,
        OptimizerId::LBFGS,
        OptimizerId::Adam,
        OptimizerId::RAdam,
        OptimizerId::NAdam,
        OptimizerId::Adadelta,
        OptimizerId::Adamax,
        OptimizerId::RMSprop,
        OptimizerId::Rprop,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            OptimizerId::GD => "GD",
            OptimizerId::CG => "CG",
            OptimizerId::NewtonCG => "NewtonCG",
            OptimizerId::BFGS => "BFGS",
            OptimizerId::LBFGS => "LBFGS",
            OptimizerId::Adam => "Adam",
            OptimizerId::RAdam => "RAdam",
            OptimizerId::NAdam => "NAdam",
            OptimizerId::Adadelta => "Adadelta",
            OptimizerId::Adamax => "Adamax",
            OptimizerId::RMSprop => "RMSprop",
            OptimizerId::Rprop => "Rprop",
            OptimizerId::AdamW => "AdamW",
            OptimizerId::Adagrad => "Adagrad",
            OptimizerId::ASGD => "ASGD",
        }
    }

    /// Methods that choose each step with a line search and therefore never
    /// increase the cost.
    pub fn uses_line_search(self) -> bool {
        matches!(
            self,
            OptimizerId::GD
                | OptimizerId::CG
                | OptimizerId::NewtonCG
                | OptimizerId::BFGS
                | OptimizerId::LBFGS
        )
    }
}

impl fmt::Display for OptimizerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for OptimizerId {
    type Err = FmoError;

    fn from_str(s: &str) -> Result<Self> {
        // "SGD" is accepted as an alias: the full-batch method is plain GD.
        if s == "SGD" {
            return Ok(OptimizerId::GD);
        }
        OptimizerId::ALL
            .into_iter()
            .find(|id| id.as_str() == s)
            .ok_or_else(|| FmoError::config(format!("unknown optimizer `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LineSearchParams {
    pub c1: f64,
    pub c2: f64,
    pub max_evals: usize,
}

impl Default for LineSearchParams {
    fn default() -> Self {
        LineSearchParams {
            c1: 1e-4,
            c2: 0.9,
            max_evals: 25,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RpropParams {
    pub eta_plus: f64,
    pub eta_minus: f64,
    pub step_min: f64,
    pub step_max: f64,
    pub step_init: f64,
}

impl Default for RpropParams {
    fn default() -> Self {
        RpropParams {
            eta_plus: 1.2,
            eta_minus: 0.5,
            step_min: 1e-6,
            step_max: 50.0,
            step_init: 0.1,
        }
    }
}

/// Hyperparameters of one optimizer run. Fields a method does not use are
/// carried along unchanged so every run records the same schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    pub id: OptimizerId,
    pub learning_rate: f64,
    pub max_iterations: usize,
    /// Stop when `|g| / max(1, |g0|)` falls to this value.
    pub gradient_tolerance: f64,
    pub lbfgs_memory: usize,
    pub line_search: LineSearchParams,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Squared-gradient decay of RMSprop and Adadelta.
    pub decay: f64,
    /// Decoupled weight decay (AdamW).
    pub weight_decay: f64,
    pub rprop: RpropParams,
    /// Inner conjugate-gradient cap per Newton iteration.
    pub newton_max_inner: usize,
    /// Iteration from which ASGD starts averaging.
    pub averaging_start: usize,
    /// None of the built-in methods draw random numbers; the seed is
    /// recorded so runs stay reproducible if one does.
    pub seed: u64,
}

impl OptimizerConfig {
    pub const LINE_SEARCH_BUDGET: usize = 200;
    pub const FIXED_STEP_BUDGET: usize = 2000;

    pub fn new(id: OptimizerId) -> Self {
        let mut cfg = OptimizerConfig {
            id,
            learning_rate: 0.5,
            max_iterations: if id.uses_line_search() {
                Self::LINE_SEARCH_BUDGET
            } else {
                Self::FIXED_STEP_BUDGET
            },
            gradient_tolerance: 1e-6,
            lbfgs_memory: 10,
            line_search: LineSearchParams::default(),
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            decay: 0.99,
            weight_decay: 0.0,
            rprop: RpropParams::default(),
            newton_max_inner: 250,
            averaging_start: 100,
            seed: 0,
        };
        match id {
            OptimizerId::CG => cfg.line_search.c2 = 0.1,
            OptimizerId::AdamW => cfg.weight_decay = 1e-2,
            OptimizerId::Adadelta => {
                cfg.learning_rate = 1.0;
                cfg.decay = 0.9;
                cfg.epsilon = 1e-4;
            }
            _ => {}
        }
        cfg
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, why: &str| Err(FmoError::config(format!("{}: {field} {why}", self.id)));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate", "must be positive");
        }
        if self.max_iterations == 0 {
            return bad("max_iterations", "must be >= 1");
        }
        if !(self.gradient_tolerance >= 0.0) {
            return bad("gradient_tolerance", "must be >= 0");
        }
        if self.lbfgs_memory == 0 {
            return bad("lbfgs_memory", "must be >= 1");
        }
        let ls = &self.line_search;
        if !(0.0 < ls.c1 && ls.c1 < ls.c2 && ls.c2 < 1.0) {
            return bad("line_search", "needs 0 < c1 < c2 < 1");
        }
        if ls.max_evals == 0 {
            return bad("line_search.max_evals", "must be >= 1");
        }
        for (name, v) in [("beta1", self.beta1), ("beta2", self.beta2), ("decay", self.decay)] {
            if !(0.0..1.0).contains(&v) {
                return bad(name, "must lie in [0, 1)");
            }
        }
        if !(self.epsilon > 0.0) {
            return bad("epsilon", "must be positive");
        }
        if !(self.weight_decay >= 0.0) {
            return bad("weight_decay", "must be >= 0");
        }
        let r = &self.rprop;
        if !(r.eta_plus > 1.0 && 0.0 < r.eta_minus && r.eta_minus < 1.0) {
            return bad("rprop", "needs eta_plus > 1 and 0 < eta_minus < 1");
        }
        if !(0.0 < r.step_min && r.step_min <= r.step_init && r.step_init <= r.step_max) {
            return bad("rprop", "needs 0 < step_min <= step_init <= step_max");
        }
        if self.newton_max_inner == 0 {
            return bad("newton_max_inner", "must be >= 1");
        }
        Ok(())
    }
}
