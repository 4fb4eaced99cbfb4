//! Full-batch optimizers: L-BFGS with a strong-Wolfe line search, ADAM, and
//! the ADAM-then-L-BFGS schedule.

mod adam;
mod lbfgs;
mod train;

pub use adam::{adam_minimize, adam_step, AdamState};
pub use lbfgs::{lbfgs_minimize, WolfeStep};
pub use train::{initial_point, train, TrainOutcome};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::loss::{LossBreakdown, LossError, PinnObjective};

#[derive(Debug, Error, PartialEq)]
pub enum OptimError {
    #[error("invalid optimizer configuration: {0}")]
    Config(String),
    #[error("objective is not finite at the starting point")]
    NonFiniteStart,
    #[error("non-finite loss or gradient at accepted iterate {iteration}")]
    Divergence { iteration: usize, x: Vec<f64> },
    #[error(transparent)]
    Loss(#[from] LossError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Lbfgs,
    Adam,
    AdamThenLbfgs,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Tolerance,
    MaxIter,
    LineSearchFailure,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimConfig {
    pub method: Method,
    pub lbfgs_memory: usize,
    pub wolfe_c1: f64,
    pub wolfe_c2: f64,
    /// Trial evaluations allowed per line search.
    pub max_line_search: usize,
    pub adam_step_size: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    pub adam_iterations: usize,
    pub stop_tolerance: f64,
    pub max_iterations: usize,
    /// Starting value of every θ component in inverse runs.
    pub theta_init: f64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            method: Method::Lbfgs,
            lbfgs_memory: 50,
            wolfe_c1: 1e-4,
            wolfe_c2: 0.9,
            max_line_search: 25,
            adam_step_size: 1e-3,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
            adam_iterations: 10000,
            stop_tolerance: 1e-16,
            max_iterations: 50000,
            theta_init: 0.5,
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<(), OptimError> {
        let bad = |m: &str| Err(OptimError::Config(m.to_string()));
        if !(0.0 < self.wolfe_c1 && self.wolfe_c1 < self.wolfe_c2 && self.wolfe_c2 < 1.0) {
            return bad("need 0 < c1 < c2 < 1");
        }
        if !(self.stop_tolerance > 0.0) {
            return bad("stop_tolerance must be positive");
        }
        if self.lbfgs_memory == 0 || self.max_line_search == 0 {
            return bad("lbfgs_memory and max_line_search must be >= 1");
        }
        if !(self.adam_step_size > 0.0 && (0.0..1.0).contains(&self.adam_beta1) && (0.0..1.0).contains(&self.adam_beta2) && self.adam_epsilon > 0.0) {
            return bad("ADAM constants out of range");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimResult {
    pub x: Vec<f64>,
    pub loss: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub stop_reason: StopReason,
    /// Loss at the start and after every iteration.
    pub history: Vec<f64>,
    /// Per-term losses aligned with `history` when the objective reports them.
    pub breakdowns: Vec<LossBreakdown>,
    /// Accepted L-BFGS steps, for checking the Wolfe conditions.
    #[serde(skip)]
    pub steps: Vec<WolfeStep>,
}

/// Value, gradient and optionally a per-term decomposition of the value.
#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub value: f64,
    pub gradient: Vec<f64>,
    pub terms: Option<LossBreakdown>,
}

impl Evaluation {
    fn is_finite(&self) -> bool {
        self.value.is_finite() && self.gradient.iter().all(|g| g.is_finite())
    }
}

pub trait Objective {
    fn dim(&self) -> usize;
    fn evaluate(&self, x: &[f64]) -> Result<Evaluation, LossError>;
}

/// Adapts a closure returning `(f, ∇f)`.
pub struct FnObjective<F> {
    pub dim: usize,
    pub f: F,
}

impl<F: Fn(&[f64]) -> (f64, Vec<f64>)> Objective for FnObjective<F> {
    fn dim(&self) -> usize {
        self.dim
    }
    fn evaluate(&self, x: &[f64]) -> Result<Evaluation, LossError> {
        let (value, gradient) = (self.f)(x);
        Ok(Evaluation {
            value,
            gradient,
            terms: None,
        })
    }
}

impl Objective for PinnObjective {
    fn dim(&self) -> usize {
        PinnObjective::dim(self)
    }
    fn evaluate(&self, x: &[f64]) -> Result<Evaluation, LossError> {
        let (b, gradient) = self.value_and_gradient(x)?;
        Ok(Evaluation {
            value: b.total,
            gradient,
            terms: Some(b),
        })
    }
}

/// `|MSEᵏ - MSEᵏ⁺¹| / max(|MSEᵏ|, |MSEᵏ⁺¹|, 1) <= tol`.
pub fn relative_change_stop(prev: f64, next: f64, tol: f64) -> bool {
    (prev - next).abs() / prev.abs().max(next.abs()).max(1.0) <= tol
}
