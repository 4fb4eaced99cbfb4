use std::collections::VecDeque;

use super::{relative_change_stop, Evaluation, Objective, OptimConfig, OptimError, OptimResult, StopReason};

/// Line-search data of one accepted step along direction `d`:
/// `φ(α) = f(x + α d)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WolfeStep {
    pub alpha: f64,
    pub phi0: f64,
    pub dphi0: f64,
    pub phi: f64,
    pub dphi: f64,
}

impl WolfeStep {
    pub fn sufficient_decrease(&self, c1: f64) -> bool {
        self.phi <= self.phi0 + c1 * self.alpha * self.dphi0
    }

    pub fn curvature(&self, c2: f64) -> bool {
        self.dphi.abs() <= c2 * self.dphi0.abs()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(x: &[f64], a: f64, d: &[f64]) -> Vec<f64> {
    x.iter().zip(d).map(|(xi, di)| xi + a * di).collect()
}

struct Pair {
    s: Vec<f64>,
    y: Vec<f64>,
    rho: f64,
}

/// `-H g` by the two-loop recursion.
fn direction(g: &[f64], memory: &VecDeque<Pair>) -> Vec<f64> {
    let mut q: Vec<f64> = g.iter().map(|v| -v).collect();
    let mut alphas = Vec::with_capacity(memory.len());
    for p in memory.iter().rev() {
        let a = p.rho * dot(&p.s, &q);
        for (qi, yi) in q.iter_mut().zip(&p.y) {
            *qi -= a * yi;
        }
        alphas.push(a);
    }
    if let Some(last) = memory.back() {
        let gamma = dot(&last.s, &last.y) / dot(&last.y, &last.y);
        q.iter_mut().for_each(|v| *v *= gamma);
    }
    for (p, a) in memory.iter().zip(alphas.iter().rev()) {
        let b = p.rho * dot(&p.y, &q);
        for (qi, si) in q.iter_mut().zip(&p.s) {
            *qi += (a - b) * si;
        }
    }
    q
}

struct Probe {
    alpha: f64,
    eval: Evaluation,
    dphi: f64,
}

struct LineSearch<'a, O> {
    obj: &'a O,
    x: &'a [f64],
    d: &'a [f64],
    phi0: f64,
    dphi0: f64,
    c1: f64,
    c2: f64,
    budget: usize,
    evaluations: usize,
}

impl<O: Objective> LineSearch<'_, O> {
    /// `None` when the objective is not finite (or not computable) at `alpha`.
    fn probe(&mut self, alpha: f64) -> Option<Probe> {
        self.evaluations += 1;
        let eval = self.obj.evaluate(&axpy(self.x, alpha, self.d)).ok()?;
        if !eval.is_finite() {
            return None;
        }
        let dphi = dot(&eval.gradient, self.d);
        Some(Probe { alpha, eval, dphi })
    }

    fn armijo(&self, p: &Probe) -> bool {
        p.eval.value <= self.phi0 + self.c1 * p.alpha * self.dphi0
    }

    fn curvature(&self, p: &Probe) -> bool {
        p.dphi.abs() <= self.c2 * self.dphi0.abs()
    }

    /// Bracketing phase; returns a step satisfying both strong-Wolfe conditions.
    fn search(&mut self, alpha0: f64) -> Option<Probe> {
        let mut prev = Probe {
            alpha: 0.0,
            eval: Evaluation {
                value: self.phi0,
                gradient: Vec::new(),
                terms: None,
            },
            dphi: self.dphi0,
        };
        let mut alpha = alpha0;
        let mut first = true;
        while self.evaluations < self.budget {
            let Some(cur) = self.probe(alpha) else {
                // overshoot into a non-finite region: pull back
                alpha = prev.alpha + 0.5 * (alpha - prev.alpha);
                if alpha - prev.alpha <= f64::EPSILON * alpha.max(1.0) {
                    return None;
                }
                continue;
            };
            if !self.armijo(&cur) || (!first && cur.eval.value >= prev.eval.value) {
                return self.zoom(prev, cur);
            }
            if self.curvature(&cur) {
                return Some(cur);
            }
            if cur.dphi >= 0.0 {
                return self.zoom(cur, prev);
            }
            alpha = 2.0 * cur.alpha;
            prev = cur;
            first = false;
        }
        None
    }

    fn zoom(&mut self, mut lo: Probe, mut hi: Probe) -> Option<Probe> {
        while self.evaluations < self.budget {
            let (a, b) = (lo.alpha, hi.alpha);
            let width = (b - a).abs();
            if width <= f64::EPSILON * a.abs().max(b.abs()) {
                return None;
            }
            let mut alpha = cubic_min(&lo, &hi).unwrap_or(0.5 * (a + b));
            let (left, right) = (a.min(b), a.max(b));
            if !(alpha > left + 0.1 * width && alpha < right - 0.1 * width) {
                alpha = 0.5 * (a + b);
            }
            let Some(cur) = self.probe(alpha) else {
                hi = Probe {
                    alpha,
                    eval: Evaluation {
                        value: f64::INFINITY,
                        gradient: Vec::new(),
                        terms: None,
                    },
                    dphi: f64::NAN,
                };
                continue;
            };
            if !self.armijo(&cur) || cur.eval.value >= lo.eval.value {
                hi = cur;
            } else {
                if self.curvature(&cur) {
                    return Some(cur);
                }
                if cur.dphi * (hi.alpha - lo.alpha) >= 0.0 {
                    hi = lo;
                }
                lo = cur;
            }
        }
        None
    }
}

/// Minimizer of the cubic interpolating value and slope at both ends.
fn cubic_min(p: &Probe, q: &Probe) -> Option<f64> {
    let (a, fa, da) = (p.alpha, p.eval.value, p.dphi);
    let (b, fb, db) = (q.alpha, q.eval.value, q.dphi);
    if !(fa.is_finite() && fb.is_finite() && da.is_finite() && db.is_finite()) {
        return None;
    }
    let d1 = da + db - 3.0 * (fa - fb) / (a - b);
    let disc = d1 * d1 - da * db;
    if disc < 0.0 {
        return None;
    }
    let d2 = (b - a).signum() * disc.sqrt();
    let t = b - (b - a) * (db + d2 - d1) / (db - da + 2.0 * d2);
    t.is_finite().then_some(t)
}

/// Limited-memory BFGS with a strong-Wolfe line search.
///
/// Stops when the relative change of the loss over one iteration is within
/// `cfg.stop_tolerance`, after `cfg.max_iterations`, or when no step
/// satisfying the Wolfe conditions is found even along steepest descent.
pub fn lbfgs_minimize<O: Objective>(obj: &O, x0: &[f64], cfg: &OptimConfig) -> Result<OptimResult, OptimError> {
    cfg.validate()?;
    let mut x = x0.to_vec();
    let mut cur = obj.evaluate(&x)?;
    if !cur.is_finite() {
        return Err(OptimError::NonFiniteStart);
    }
    let mut result = OptimResult {
        x: Vec::new(),
        loss: cur.value,
        iterations: 0,
        evaluations: 1,
        stop_reason: StopReason::MaxIter,
        history: vec![cur.value],
        breakdowns: cur.terms.into_iter().collect(),
        steps: Vec::new(),
    };
    let mut memory: VecDeque<Pair> = VecDeque::with_capacity(cfg.lbfgs_memory);

    while result.iterations < cfg.max_iterations {
        if cur.gradient.iter().all(|&g| g == 0.0) {
            result.iterations += 1;
            result.history.push(cur.value);
            result.breakdowns.extend(cur.terms);
            result.stop_reason = StopReason::Tolerance;
            break;
        }
        let mut d = direction(&cur.gradient, &memory);
        let mut dphi0 = dot(&cur.gradient, &d);
        if !(dphi0 < 0.0) {
            memory.clear();
            d = cur.gradient.iter().map(|g| -g).collect();
            dphi0 = dot(&cur.gradient, &d);
        }
        let step = loop {
            let alpha0 = if memory.is_empty() {
                (1.0 / dot(&cur.gradient, &cur.gradient).sqrt()).min(1.0)
            } else {
                1.0
            };
            let mut ls = LineSearch {
                obj,
                x: &x,
                d: &d,
                phi0: cur.value,
                dphi0,
                c1: cfg.wolfe_c1,
                c2: cfg.wolfe_c2,
                budget: cfg.max_line_search,
                evaluations: 0,
            };
            let found = ls.search(alpha0);
            result.evaluations += ls.evaluations;
            match found {
                Some(p) => break Some(p),
                None if !memory.is_empty() => {
                    // retry once along steepest descent
                    memory.clear();
                    d = cur.gradient.iter().map(|g| -g).collect();
                    dphi0 = dot(&cur.gradient, &d);
                }
                None => break None,
            }
        };
        let Some(p) = step else {
            result.stop_reason = StopReason::LineSearchFailure;
            break;
        };
        result.steps.push(WolfeStep {
            alpha: p.alpha,
            phi0: cur.value,
            dphi0,
            phi: p.eval.value,
            dphi: p.dphi,
        });
        let s: Vec<f64> = d.iter().map(|v| p.alpha * v).collect();
        let x_new = axpy(&x, 1.0, &s);
        if x_new.iter().any(|v| !v.is_finite()) {
            return Err(OptimError::Divergence {
                iteration: result.iterations + 1,
                x: x_new,
            });
        }
        let y: Vec<f64> = p.eval.gradient.iter().zip(&cur.gradient).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > f64::EPSILON * dot(&y, &y) {
            if memory.len() == cfg.lbfgs_memory {
                memory.pop_front();
            }
            memory.push_back(Pair { s, y, rho: 1.0 / sy });
        }
        let prev = cur.value;
        x = x_new;
        cur = p.eval;
        result.iterations += 1;
        result.history.push(cur.value);
        result.breakdowns.extend(cur.terms);
        if result.iterations % 1000 == 0 {
            log::debug!("lbfgs iteration {} loss {:e}", result.iterations, cur.value);
        }
        if relative_change_stop(prev, cur.value, cfg.stop_tolerance) {
            result.stop_reason = StopReason::Tolerance;
            break;
        }
    }
    result.loss = cur.value;
    result.x = x;
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optim::FnObjective;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rosenbrock() -> FnObjective<impl Fn(&[f64]) -> (f64, Vec<f64>)> {
        FnObjective {
            dim: 2,
            f: |x: &[f64]| {
                let (a, b) = (1.0 - x[0], x[1] - x[0] * x[0]);
                (a * a + 100.0 * b * b, vec![-2.0 * a - 400.0 * x[0] * b, 200.0 * b])
            },
        }
    }

    fn assert_wolfe(r: &OptimResult, cfg: &OptimConfig) {
        for s in &r.steps {
            assert!(s.sufficient_decrease(cfg.wolfe_c1), "{s:?}");
            assert!(s.curvature(cfg.wolfe_c2), "{s:?}");
        }
    }

    fn cholesky_solve(a: &[f64], b: &[f64], n: usize) -> Vec<f64> {
        let mut l = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..=i {
                let s: f64 = (0..j).map(|k| l[i * n + k] * l[j * n + k]).sum();
                l[i * n + j] = if i == j { (a[i * n + i] - s).sqrt() } else { (a[i * n + j] - s) / l[j * n + j] };
            }
        }
        let mut y = vec![0.0; n];
        for i in 0..n {
            y[i] = (b[i] - (0..i).map(|k| l[i * n + k] * y[k]).sum::<f64>()) / l[i * n + i];
        }
        let mut x = vec![0.0; n];
        for i in (0..n).rev() {
            x[i] = (y[i] - (i + 1..n).map(|k| l[k * n + i] * x[k]).sum::<f64>()) / l[i * n + i];
        }
        x
    }

    #[test]
    fn solves_spd_quadratic() {
        let n = 10;
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m: Vec<f64> = (0..n * n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut a = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                a[i * n + j] = (0..n).map(|k| m[k * n + i] * m[k * n + j]).sum::<f64>() + if i == j { 1.0 } else { 0.0 };
            }
        }
        let x_star: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..n).map(|i| dot(&a[i * n..(i + 1) * n], &x_star)).collect();
        let grad = |x: &[f64]| -> Vec<f64> { (0..n).map(|i| dot(&a[i * n..(i + 1) * n], x) - b[i]).collect() };
        // ½xᵀAx - bᵀx shifted by its minimum value, so rounding vanishes at the minimizer
        let obj = FnObjective {
            dim: n,
            f: |x: &[f64]| {
                let e: Vec<f64> = x.iter().zip(&x_star).map(|(p, q)| p - q).collect();
                let ae: Vec<f64> = (0..n).map(|i| dot(&a[i * n..(i + 1) * n], &e)).collect();
                (0.5 * dot(&e, &ae), grad(x))
            },
        };
        let cfg = OptimConfig {
            stop_tolerance: f64::MIN_POSITIVE,
            ..OptimConfig::default()
        };
        let r = lbfgs_minimize(&obj, &vec![0.0; n], &cfg).unwrap();
        let gn = dot(&grad(&r.x), &grad(&r.x)).sqrt();
        assert!(gn < 1e-10, "{gn} after {:?}", r.stop_reason);
        let direct = cholesky_solve(&a, &b, n);
        assert!(r.x.iter().zip(&direct).all(|(p, q)| (p - q).abs() < 1e-9));
        assert_wolfe(&r, &cfg);
    }

    #[test]
    fn solves_rosenbrock() {
        let cfg = OptimConfig::default();
        let r = lbfgs_minimize(&rosenbrock(), &[-1.2, 1.0], &cfg).unwrap();
        assert!(r.loss < 1e-10, "{r:?}");
        assert!((r.x[0] - 1.0).abs() < 1e-4 && (r.x[1] - 1.0).abs() < 1e-4);
        assert_wolfe(&r, &cfg);
        assert!(r.history.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn constant_function_stops_after_one_iteration() {
        let obj = FnObjective {
            dim: 3,
            f: |_: &[f64]| (4.0, vec![0.0; 3]),
        };
        let r = lbfgs_minimize(&obj, &[1.0, 2.0, 3.0], &OptimConfig::default()).unwrap();
        assert_eq!((r.iterations, r.stop_reason), (1, StopReason::Tolerance));
        assert_eq!(r.x, vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn max_iterations_is_honoured() {
        let cfg = OptimConfig {
            max_iterations: 3,
            ..OptimConfig::default()
        };
        let r = lbfgs_minimize(&rosenbrock(), &[-1.2, 1.0], &cfg).unwrap();
        assert_eq!((r.iterations, r.stop_reason), (3, StopReason::MaxIter));
        assert_eq!(r.history.len(), 4);
    }

    #[test]
    fn non_finite_start_is_rejected() {
        let obj = FnObjective {
            dim: 1,
            f: |_: &[f64]| (f64::NAN, vec![0.0]),
        };
        assert_eq!(lbfgs_minimize(&obj, &[0.0], &OptimConfig::default()), Err(OptimError::NonFiniteStart));
    }

    #[test]
    fn non_finite_region_is_avoided() {
        // f = x^2 - 2 log x style barrier: infinite for x <= 0, minimum at 1
        let obj = FnObjective {
            dim: 1,
            f: |x: &[f64]| {
                if x[0] <= 0.0 {
                    (f64::INFINITY, vec![f64::NAN])
                } else {
                    (x[0] * x[0] - 2.0 * x[0].ln(), vec![2.0 * x[0] - 2.0 / x[0]])
                }
            },
        };
        let r = lbfgs_minimize(&obj, &[0.05], &OptimConfig::default()).unwrap();
        assert!((r.x[0] - 1.0).abs() < 1e-6, "{r:?}");
    }

    #[test]
    fn unbounded_objective_ends_with_a_stop_reason() {
        let obj = FnObjective {
            dim: 1,
            f: |x: &[f64]| (-x[0], vec![-1.0]),
        };
        let cfg = OptimConfig {
            max_iterations: 50,
            ..OptimConfig::default()
        };
        let r = lbfgs_minimize(&obj, &[0.0], &cfg).unwrap();
        assert_eq!(r.stop_reason, StopReason::LineSearchFailure);
    }

    #[test]
    fn cubic_interpolation_finds_quadratic_minimum() {
        let f = |a: f64| (a - 0.3) * (a - 0.3);
        let df = |a: f64| 2.0 * (a - 0.3);
        let mk = |a: f64| Probe {
            alpha: a,
            eval: Evaluation {
                value: f(a),
                gradient: vec![],
                terms: None,
            },
            dphi: df(a),
        };
        let t = cubic_min(&mk(0.0), &mk(1.0)).unwrap();
        assert!((t - 0.3).abs() < 1e-12);
    }
}
