use crate::loss::{LossProblem, PinnObjective};
use crate::network::{init_params, NetLayout};

use super::{adam_minimize, lbfgs_minimize, Method, OptimConfig, OptimError, OptimResult};

/// Result of one training run, with the optimized vector split back into
/// network parameters and θ.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    pub params: Vec<f64>,
    /// θ used by the residuals: the estimate in inverse mode, the fixed truth
    /// in forward mode.
    pub theta: Vec<f64>,
    pub result: OptimResult,
}

/// Glorot-initialized parameters from `seed`, followed by θ at
/// `cfg.theta_init` in inverse mode.
pub fn initial_point(objective: &PinnObjective, cfg: &OptimConfig, seed: u64) -> Vec<f64> {
    let mut z = init_params(objective.layout, seed).expect("layout validated").values;
    z.extend(std::iter::repeat_n(cfg.theta_init, objective.problem.n_free_theta()));
    z
}

fn join(first: OptimResult, second: OptimResult) -> OptimResult {
    let mut history = first.history;
    history.extend_from_slice(&second.history[1..]);
    let mut breakdowns = first.breakdowns;
    breakdowns.extend(second.breakdowns.into_iter().skip(1));
    OptimResult {
        iterations: first.iterations + second.iterations,
        evaluations: first.evaluations + second.evaluations,
        history,
        breakdowns,
        ..second
    }
}

/// Trains a network on `problem` from a seed-determined initialization.
pub fn train(problem: &LossProblem, layout: NetLayout, cfg: &OptimConfig, seed: u64) -> Result<TrainOutcome, OptimError> {
    cfg.validate()?;
    layout.validate().map_err(|e| OptimError::Config(e.to_string()))?;
    let objective = PinnObjective::new(layout, problem.clone())?;
    let z0 = initial_point(&objective, cfg, seed);
    let result = match cfg.method {
        Method::Lbfgs => lbfgs_minimize(&objective, &z0, cfg)?,
        Method::Adam => adam_minimize(&objective, &z0, cfg.adam_iterations, cfg)?,
        Method::AdamThenLbfgs => {
            let warm = adam_minimize(&objective, &z0, cfg.adam_iterations, cfg)?;
            let rest = lbfgs_minimize(&objective, &warm.x, cfg)?;
            join(warm, rest)
        }
    };
    let np = layout.n_params();
    Ok(TrainOutcome {
        params: result.x[..np].to_vec(),
        theta: objective.theta(&result.x),
        result,
    })
}
