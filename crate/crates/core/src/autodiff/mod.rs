//! Nested automatic differentiation over a fixed primitive set.
//!
//! Two layers compose: [`Dual`] (forward mode, generic over any [`Scalar`],
//! nestable) and [`Var`] (reverse mode on a [`DiffContext`] tape). Input
//! derivatives of a field are taken with nested duals; parameter gradients of
//! anything built from them are taken by running the duals over `Var`.

mod dual;
mod expr;
mod scalar;
mod tape;

pub use dual::Dual;
pub use expr::Expr;
pub use scalar::Scalar;
pub use tape::{DiffContext, Gradients, Var};

use thiserror::Error;

/// Highest total derivative order supported across all nesting levels.
pub const MAX_ORDER: usize = 3;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AdError {
    #[error("domain violation in primitive `{primitive}`")]
    Domain { primitive: &'static str },
    #[error("derivative order {requested} exceeds the supported maximum of {MAX_ORDER}")]
    UnsupportedOrder { requested: usize },
    #[error("function takes {expected} arguments, got {got}")]
    Arity { expected: usize, got: usize },
    #[error("variable index {index} out of range for arity {arity}")]
    BadVariable { index: usize, arity: usize },
}

/// A scalar function that can be evaluated on any [`Scalar`].
///
/// Rust closures cannot be generic over their argument type, so functions to
/// be differentiated implement this trait instead (see [`Expr`]).
pub trait ScalarFn {
    fn arity(&self) -> usize;

    /// Derivative order already folded into this function.
    fn order(&self) -> usize {
        0
    }

    fn eval<S: Scalar>(&self, x: &[S]) -> S;
}

impl<F: ScalarFn + ?Sized> ScalarFn for &F {
    fn arity(&self) -> usize {
        (**self).arity()
    }
    fn order(&self) -> usize {
        (**self).order()
    }
    fn eval<S: Scalar>(&self, x: &[S]) -> S {
        (**self).eval(x)
    }
}

/// Gradient of `f` at `x`, by a reverse sweep.
pub fn gradient<F: ScalarFn>(f: &F, x: &[f64]) -> Result<Vec<f64>, AdError> {
    if x.len() != f.arity() {
        return Err(AdError::Arity {
            expected: f.arity(),
            got: x.len(),
        });
    }
    if f.order() + 1 > MAX_ORDER {
        return Err(AdError::UnsupportedOrder {
            requested: f.order() + 1,
        });
    }
    let ctx = DiffContext::new();
    let vars: Vec<Var> = x.iter().map(|&v| ctx.variable(v)).collect();
    let y = f.eval(&vars);
    if let Some(err) = ctx.error() {
        return Err(err);
    }
    let g = ctx.backward(y);
    Ok(vars.iter().map(|&v| g.scalar(v)).collect())
}

/// A partial derivative of `F`, itself a [`ScalarFn`] so it can be evaluated
/// on duals or tape variables and differentiated further.
#[derive(Clone, Debug)]
pub struct Derivative<F> {
    f: F,
    wrt: Vec<usize>,
}

impl<F: ScalarFn> Derivative<F> {
    pub fn variables(&self) -> &[usize] {
        &self.wrt
    }

    pub fn inner(&self) -> &F {
        &self.f
    }
}

/// `order`-th partial derivative of `f` with respect to variable `wrt`.
pub fn derivative_of<F: ScalarFn>(f: F, wrt: usize, order: usize) -> Result<Derivative<F>, AdError> {
    mixed_partial(f, &vec![wrt; order])
}

/// Mixed partial `d/dx_{wrt[0]} d/dx_{wrt[1]} ...` of `f`.
pub fn mixed_partial<F: ScalarFn>(f: F, wrt: &[usize]) -> Result<Derivative<F>, AdError> {
    let total = f.order() + wrt.len();
    if wrt.is_empty() || total > MAX_ORDER {
        return Err(AdError::UnsupportedOrder { requested: total });
    }
    if let Some(&index) = wrt.iter().find(|&&i| i >= f.arity()) {
        return Err(AdError::BadVariable {
            index,
            arity: f.arity(),
        });
    }
    Ok(Derivative {
        f,
        wrt: wrt.to_vec(),
    })
}

fn seed<S: Scalar>(x: &[S], k: usize) -> Vec<Dual<S, 1>> {
    x.iter()
        .enumerate()
        .map(|(i, &v)| Dual::new(v, [S::lift(if i == k { 1.0 } else { 0.0 })]))
        .collect()
}

impl<F: ScalarFn> ScalarFn for Derivative<F> {
    fn arity(&self) -> usize {
        self.f.arity()
    }

    fn order(&self) -> usize {
        self.f.order() + self.wrt.len()
    }

    fn eval<S: Scalar>(&self, x: &[S]) -> S {
        match *self.wrt.as_slice() {
            [a] => self.f.eval(&seed(x, a)).d[0],
            [a, b] => self.f.eval(&seed(&seed(x, a), b)).d[0].d[0],
            [a, b, c] => self.f.eval(&seed(&seed(&seed(x, a), b), c)).d[0].d[0].d[0],
            _ => unreachable!("order checked at construction"),
        }
    }
}

/// One coordinate of a [`check_gradient`] report.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradCheckEntry {
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

/// `|a - b| / max(|a|, |b|)`, zero when both vanish.
pub fn relative_difference(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

/// Compares the autodiff gradient against central differences
/// `(f(x+h) - f(x-h)) / 2h` coordinate by coordinate.
pub fn check_gradient<F: ScalarFn>(f: &F, x: &[f64], h: f64) -> Result<Vec<GradCheckEntry>, AdError> {
    assert!(h > 0.0, "finite-difference step must be positive");
    let analytic = gradient(f, x)?;
    let mut probe = x.to_vec();
    Ok(analytic
        .into_iter()
        .enumerate()
        .map(|(i, a)| {
            probe[i] = x[i] + h;
            let fp = f.eval(&probe);
            probe[i] = x[i] - h;
            let fm = f.eval(&probe);
            probe[i] = x[i];
            let numeric = (fp - fm) / (2.0 * h);
            GradCheckEntry {
                analytic: a,
                numeric,
                rel_error: relative_difference(a, numeric),
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use Expr as E;

    #[test]
    fn lift_has_zero_derivative() {
        let f = E::constant(1.0);
        assert_eq!(gradient(&f.with_arity(1), &[0.3]).unwrap(), vec![0.0]);
        let g = E::constant(0.0) + E::var(0);
        assert_eq!(gradient(&g, &[2.0]).unwrap(), vec![1.0]);
        let ctx = DiffContext::new();
        let p = ctx.lift(2.5) * ctx.lift(4.0);
        assert_eq!(p.value(), 10.0);
        assert!(p.is_constant());
    }

    #[test]
    fn gradient_examples() {
        assert_eq!(gradient(&E::var(0).powi(2), &[3.0]).unwrap(), vec![6.0]);
        assert_eq!(gradient(&E::var(0).tanh(), &[0.0]).unwrap(), vec![1.0]);
        let f = (E::var(0) + E::var(1)).sin();
        let g = gradient(&f, &[0.3, 0.4]).unwrap();
        for (i, gi) in g.iter().enumerate() {
            let h = 1e-6;
            let mut p = [0.3, 0.4];
            p[i] += h;
            let fp: f64 = f.eval(&p);
            p[i] -= 2.0 * h;
            let fm: f64 = f.eval(&p);
            let fd = (fp - fm) / (2.0 * h);
            assert!(relative_difference(*gi, fd) < 1e-8);
        }
    }

    #[test]
    fn gradient_reports_offending_primitive() {
        let f = E::constant(1.0) / E::var(0);
        assert_eq!(gradient(&f, &[0.0]), Err(AdError::Domain { primitive: "div" }));
        let g = E::var(0).powi(-2);
        assert_eq!(gradient(&g, &[0.0]), Err(AdError::Domain { primitive: "powi" }));
        assert!(matches!(gradient(&g, &[1.0, 2.0]), Err(AdError::Arity { .. })));
    }

    #[test]
    fn derivative_examples() {
        let d2 = derivative_of(E::var(0).sin(), 0, 2).unwrap();
        assert_eq!(d2.eval(&[0.0f64]), 0.0);

        let f = E::var(0).powi(3) * E::var(1);
        let dxx = derivative_of(f, 0, 2).unwrap();
        let dxxt = derivative_of(dxx, 1, 1).unwrap();
        assert_eq!(dxxt.order(), 3);
        assert_eq!(dxxt.eval(&[2.0f64, 5.0]), 12.0);

        let e = (E::var(0) + E::var(1) + E::var(2)).exp();
        let mixed = mixed_partial(e, &[0, 1, 2]).unwrap();
        let got: f64 = mixed.eval(&[0.1, 0.2, 0.3]);
        assert!(relative_difference(got, 0.6f64.exp()) < 1e-14);
    }

    #[test]
    fn order_above_three_is_rejected() {
        let f = E::var(0).exp();
        assert_eq!(
            derivative_of(f.clone(), 0, 4).unwrap_err(),
            AdError::UnsupportedOrder { requested: 4 }
        );
        let d3 = derivative_of(f, 0, 3).unwrap();
        assert!(matches!(
            derivative_of(d3.clone(), 0, 1),
            Err(AdError::UnsupportedOrder { requested: 4 })
        ));
        assert!(matches!(gradient(&d3, &[0.0]), Err(AdError::UnsupportedOrder { .. })));
        assert!(matches!(derivative_of(E::var(0), 0, 0), Err(AdError::UnsupportedOrder { .. })));
    }

    #[test]
    fn derivative_is_differentiable_in_an_enclosing_context() {
        // d/dx of d^2/dx^2 (x^4) = 24x via a reverse sweep over a second-order dual
        let d2 = derivative_of(E::var(0).powi(4), 0, 2).unwrap();
        let g = gradient(&d2, &[0.5]).unwrap();
        assert!((g[0] - 12.0).abs() < 1e-13);
    }

    #[test]
    fn check_gradient_examples() {
        let r = check_gradient(&E::var(0).powi(2), &[1.0], 1e-6).unwrap();
        assert_eq!(r[0].analytic, 2.0);
        assert!(r[0].rel_error < 1e-9);

        let c = check_gradient(&E::constant(3.0).with_arity(2), &[0.1, 0.2], 1e-6).unwrap();
        assert!(c.iter().all(|e| e.analytic == 0.0 && e.numeric == 0.0 && e.rel_error == 0.0));

        let t = check_gradient(&(E::constant(3.0) * E::var(0)).tanh(), &[0.5], 1e-6).unwrap();
        let exact = 3.0 / 1.5f64.cosh().powi(2);
        assert!(relative_difference(t[0].analytic, exact) < 1e-14);
        assert!(t[0].rel_error < 1e-7);
    }
}
