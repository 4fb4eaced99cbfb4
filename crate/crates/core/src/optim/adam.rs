use super::{Objective, OptimConfig, OptimError, OptimResult, StopReason};

/// Iterate and bias-corrected moment estimates.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub x: Vec<f64>,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(x: Vec<f64>) -> Self {
        let n = x.len();
        Self {
            x,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }
}

pub fn adam_step(state: &mut AdamState, gradient: &[f64], cfg: &OptimConfig) {
    state.t += 1;
    let (b1, b2) = (cfg.adam_beta1, cfg.adam_beta2);
    let c1 = 1.0 - b1.powi(state.t as i32);
    let c2 = 1.0 - b2.powi(state.t as i32);
    for i in 0..state.x.len() {
        let g = gradient[i];
        state.m[i] = b1 * state.m[i] + (1.0 - b1) * g;
        state.v[i] = b2 * state.v[i] + (1.0 - b2) * g * g;
        let m_hat = state.m[i] / c1;
        let v_hat = state.v[i] / c2;
        state.x[i] -= cfg.adam_step_size * m_hat / (v_hat.sqrt() + cfg.adam_epsilon);
    }
}

/// Exactly `iterations` ADAM steps from `x0`.
pub fn adam_minimize<O: Objective>(obj: &O, x0: &[f64], iterations: usize, cfg: &OptimConfig) -> Result<OptimResult, OptimError> {
    cfg.validate()?;
    let mut state = AdamState::new(x0.to_vec());
    let mut cur = obj.evaluate(&state.x)?;
    if !cur.is_finite() {
        return Err(OptimError::NonFiniteStart);
    }
    let mut history = vec![cur.value];
    let mut breakdowns: Vec<_> = cur.terms.into_iter().collect();
    for k in 1..=iterations {
        adam_step(&mut state, &cur.gradient, cfg);
        cur = obj.evaluate(&state.x)?;
        if !cur.is_finite() || state.x.iter().any(|v| !v.is_finite()) {
            return Err(OptimError::Divergence {
                iteration: k,
                x: state.x,
            });
        }
        history.push(cur.value);
        breakdowns.extend(cur.terms);
        if k % 1000 == 0 {
            log::debug!("adam iteration {k} loss {:e}", cur.value);
        }
    }
    Ok(OptimResult {
        x: state.x,
        loss: cur.value,
        iterations,
        evaluations: iterations + 1,
        stop_reason: StopReason::MaxIter,
        history,
        breakdowns,
        steps: Vec::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optim::FnObjective;

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let cfg = OptimConfig::default();
        let mut s = AdamState::new(vec![0.3, -2.0]);
        for _ in 0..100 {
            adam_step(&mut s, &[0.0, 0.0], &cfg);
        }
        assert_eq!(s.x, vec![0.3, -2.0]);
    }

    #[test]
    fn first_step_has_size_of_step_size() {
        let cfg = OptimConfig::default();
        let mut s = AdamState::new(vec![0.0; 3]);
        adam_step(&mut s, &[5.0, -0.01, 1e3], &cfg);
        for (x, sign) in s.x.iter().zip([-1.0, 1.0, -1.0]) {
            assert!((x - sign * cfg.adam_step_size).abs() < 1e-9, "{x}");
        }
    }

    #[test]
    fn quadratic_bowl_converges() {
        let obj = FnObjective {
            dim: 2,
            f: |x: &[f64]| (x[0] * x[0] + 3.0 * x[1] * x[1], vec![2.0 * x[0], 6.0 * x[1]]),
        };
        let r = adam_minimize(&obj, &[1.0, -1.0], 5000, &OptimConfig::default()).unwrap();
        assert_eq!(r.history.len(), 5001);
        assert!(r.loss < 1e-6, "{}", r.loss);
        assert!(r.history[100..].windows(2).all(|w| w[1] < w[0]));
    }
}
