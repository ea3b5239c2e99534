use std::collections::BTreeMap;
use std::sync::OnceLock;

use super::adaptive::{Adadelta, Adam, Adamax, NAdam, RAdam, RootMeanSquare, Rprop};
use super::config::{OptimizerConfig, OptimizerId};
use super::gd::{AveragedGd, GradientDescent};
use super::lbfgs::Lbfgs;
use super::newton::NewtonCg;
use super::quasi_newton::{Bfgs, ConjugateGradient};
use super::{drive, ConvergenceTrace, Objective, Optimizer};
use crate::error::{FmoError, Result};

pub type OptimizerFactory = fn(&OptimizerConfig) -> Box<dyn Optimizer>;

struct Entry {
    factory: OptimizerFactory,
    needs_hessian: bool,
    bounded: bool,
}

/// Optimizers by name.
pub struct OptimizerRegistry {
    entries: BTreeMap<String, Entry>,
}

impl Default for OptimizerRegistry {
    fn default() -> Self {
        Self::empty()
    }
}

impl OptimizerRegistry {
    pub fn empty() -> Self {
        OptimizerRegistry {
            entries: BTreeMap::new(),
        }
    }

    /// Registers `factory` under `name`, replacing any previous entry.
    /// `bounded` methods handle the nonnegativity bound and run on the
    /// magnitude form of objectives that offer one.
    pub fn register(&mut self, name: &str, factory: OptimizerFactory, needs_hessian: bool, bounded: bool) {
        self.entries.insert(
            name.to_string(),
            Entry {
                factory,
                needs_hessian,
                bounded,
            },
        );
    }

    /// The shared registry of every built-in method.
    pub fn builtin() -> &'static OptimizerRegistry {
        static REGISTRY: OnceLock<OptimizerRegistry> = OnceLock::new();
        REGISTRY.get_or_init(|| {
            let mut r = OptimizerRegistry::empty();
            r.register("GD", |c| Box::new(GradientDescent::new(c)), false, true);
            r.register("CG", |c| Box::new(ConjugateGradient::new(c)), false, true);
            r.register("NewtonCG", |c| Box::new(NewtonCg::new(c)), true, true);
            r.register("BFGS", |c| Box::new(Bfgs::new(c)), false, true);
            r.register("LBFGS", |c| Box::new(Lbfgs::new(c)), false, true);
            r.register("Adam", |c| Box::new(Adam::new(c)), false, false);
            r.register("AdamW", |c| Box::new(Adam::new(c)), false, false);
            r.register("RAdam", |c| Box::new(RAdam::new(c)), false, false);
            r.register("NAdam", |c| Box::new(NAdam::new(c)), false, false);
            r.register("Adamax", |c| Box::new(Adamax::new(c)), false, false);
            r.register("Adadelta", |c| Box::new(Adadelta::new(c)), false, false);
            r.register("RMSprop", |c| Box::new(RootMeanSquare::rmsprop(c)), false, false);
            r.register("Adagrad", |c| Box::new(RootMeanSquare::adagrad(c)), false, false);
            r.register("Rprop", |c| Box::new(Rprop::new(c)), false, false);
            r.register("ASGD", |c| Box::new(AveragedGd::new(c)), false, false);
            r
        })
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    /// Builds the optimizer for `config.id`.
    pub fn create(&self, config: &OptimizerConfig) -> Result<Box<dyn Optimizer>> {
        config.validate()?;
        let entry = self.entry(config.id)?;
        Ok((entry.factory)(config))
    }

    fn entry(&self, id: OptimizerId) -> Result<&Entry> {
        self.entries
            .get(id.as_str())
            .ok_or_else(|| FmoError::config(format!("optimizer `{id}` is not registered")))
    }

    /// Validates the configuration and runs the optimizer from `b0`.
    pub fn run(
        &self,
        objective: &dyn Objective,
        b0: &[f64],
        config: &OptimizerConfig,
        case_name: &str,
    ) -> Result<ConvergenceTrace> {
        let mut optimizer = self.create(config)?;
        if self.entry(config.id)?.needs_hessian && objective.dim() == b0.len() && objective.hessian(b0).is_none() {
            return Err(FmoError::config(format!(
                "{} needs Hessian-vector products, which this objective does not provide",
                config.id
            )));
        }
        let bounded = self.entry(config.id)?.bounded;
        drive(optimizer.as_mut(), objective, b0, config, case_name, bounded)
    }
}
