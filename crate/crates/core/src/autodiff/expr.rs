use std::fmt;
use std::ops::{Add, Div, Mul, Neg, Sub};

use super::{Scalar, ScalarFn};

/// Expression tree over the primitive set, evaluable on any [`Scalar`].
#[derive(Clone, Debug, PartialEq)]
pub enum Expr {
    Var(usize),
    Const(f64),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Neg(Box<Expr>),
    Tanh(Box<Expr>),
    Exp(Box<Expr>),
    Sin(Box<Expr>),
    Cos(Box<Expr>),
    Powi(Box<Expr>, i32),
    /// Pins the arity of an expression that does not mention every variable.
    Arity(Box<Expr>, usize),
}

impl Expr {
    pub fn var(i: usize) -> Self {
        Expr::Var(i)
    }

    pub fn constant(c: f64) -> Self {
        Expr::Const(c)
    }

    pub fn tanh(self) -> Self {
        Expr::Tanh(Box::new(self))
    }

    pub fn exp(self) -> Self {
        Expr::Exp(Box::new(self))
    }

    pub fn sin(self) -> Self {
        Expr::Sin(Box::new(self))
    }

    pub fn cos(self) -> Self {
        Expr::Cos(Box::new(self))
    }

    pub fn powi(self, n: i32) -> Self {
        Expr::Powi(Box::new(self), n)
    }

    pub fn with_arity(self, n: usize) -> Self {
        Expr::Arity(Box::new(self), n)
    }

    fn max_var(&self) -> Option<usize> {
        use Expr::*;
        match self {
            Var(i) => Some(*i),
            Const(_) => None,
            Add(a, b) | Sub(a, b) | Mul(a, b) | Div(a, b) => a.max_var().max(b.max_var()),
            Neg(a) | Tanh(a) | Exp(a) | Sin(a) | Cos(a) | Powi(a, _) => a.max_var(),
            Arity(a, n) => a.max_var().max(n.checked_sub(1)),
        }
    }

    /// Number of nodes in the tree.
    pub fn size(&self) -> usize {
        use Expr::*;
        match self {
            Var(_) | Const(_) => 1,
            Add(a, b) | Sub(a, b) | Mul(a, b) | Div(a, b) => 1 + a.size() + b.size(),
            Neg(a) | Tanh(a) | Exp(a) | Sin(a) | Cos(a) | Powi(a, _) => 1 + a.size(),
            Arity(a, _) => a.size(),
        }
    }
}

impl ScalarFn for Expr {
    fn arity(&self) -> usize {
        self.max_var().map_or(0, |m| m + 1)
    }

    fn eval<S: Scalar>(&self, x: &[S]) -> S {
        use Expr::*;
        match self {
            Var(i) => x[*i],
            Const(c) => S::lift(*c),
            Add(a, b) => a.eval(x) + b.eval(x),
            Sub(a, b) => a.eval(x) - b.eval(x),
            Mul(a, b) => a.eval(x) * b.eval(x),
            Div(a, b) => a.eval(x) / b.eval(x),
            Neg(a) => -a.eval(x),
            Tanh(a) => a.eval(x).tanh(),
            Exp(a) => a.eval(x).exp(),
            Sin(a) => a.eval(x).sin(),
            Cos(a) => a.eval(x).cos(),
            Powi(a, n) => a.eval(x).powi(*n),
            Arity(a, _) => a.eval(x),
        }
    }
}

macro_rules! binop {
    ($tr:ident, $m:ident, $v:ident) => {
        impl $tr for Expr {
            type Output = Expr;
            fn $m(self, rhs: Expr) -> Expr {
                Expr::$v(Box::new(self), Box::new(rhs))
            }
        }
    };
}

binop!(Add, add, Add);
binop!(Sub, sub, Sub);
binop!(Mul, mul, Mul);
binop!(Div, div, Div);

impl Neg for Expr {
    type Output = Expr;
    fn neg(self) -> Expr {
        Expr::Neg(Box::new(self))
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        use Expr::*;
        match self {
            Var(i) => write!(f, "x{i}"),
            Const(c) => write!(f, "{c}"),
            Add(a, b) => write!(f, "({a} + {b})"),
            Sub(a, b) => write!(f, "({a} - {b})"),
            Mul(a, b) => write!(f, "({a} * {b})"),
            Div(a, b) => write!(f, "({a} / {b})"),
            Neg(a) => write!(f, "-{a}"),
            Tanh(a) => write!(f, "tanh({a})"),
            Exp(a) => write!(f, "exp({a})"),
            Sin(a) => write!(f, "sin({a})"),
            Cos(a) => write!(f, "cos({a})"),
            Powi(a, n) => write!(f, "{a}^{n}"),
            Arity(a, _) => write!(f, "{a}"),
        }
    }
}
