use std::ops::{Add, Div, Mul, Neg, Sub};

use super::Scalar;

/// Forward-mode dual number carrying `N` directional derivatives.
///
/// Nesting (`Dual<Dual<S, M>, N>`) yields mixed higher derivatives: the outer
/// tangent in direction `a` is itself a `Dual<S, M>` holding `d/da` of the
/// inner value together with its own `M` derivatives.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Dual<S, const N: usize> {
    pub v: S,
    pub d: [S; N],
}

impl<S: Scalar, const N: usize> Dual<S, N> {
    pub fn new(v: S, d: [S; N]) -> Self {
        Self { v, d }
    }

    pub fn constant(v: S) -> Self {
        Self {
            v,
            d: [S::lift(0.0); N],
        }
    }

    /// Independent variable seeded in direction `k`.
    pub fn variable(v: S, k: usize) -> Self {
        let mut d = [S::lift(0.0); N];
        d[k] = S::lift(1.0);
        Self { v, d }
    }

    pub fn value(&self) -> S {
        self.v
    }

    pub fn deriv(&self, k: usize) -> S {
        self.d[k]
    }

    #[inline]
    fn chain(self, v: S, dv: S) -> Self {
        Self {
            v,
            d: self.d.map(|di| di * dv),
        }
    }
}

impl<S: Scalar, const N: usize> Add for Dual<S, N> {
    type Output = Self;
    #[inline]
    fn add(self, rhs: Self) -> Self {
        let mut d = self.d;
        for (a, b) in d.iter_mut().zip(rhs.d) {
            *a = *a + b;
        }
        Self { v: self.v + rhs.v, d }
    }
}

impl<S: Scalar, const N: usize> Sub for Dual<S, N> {
    type Output = Self;
    #[inline]
    fn sub(self, rhs: Self) -> Self {
        let mut d = self.d;
        for (a, b) in d.iter_mut().zip(rhs.d) {
            *a = *a - b;
        }
        Self { v: self.v - rhs.v, d }
    }
}

impl<S: Scalar, const N: usize> Mul for Dual<S, N> {
    type Output = Self;
    #[inline]
    fn mul(self, rhs: Self) -> Self {
        let mut d = self.d;
        for (a, b) in d.iter_mut().zip(rhs.d) {
            *a = *a * rhs.v + self.v * b;
        }
        Self { v: self.v * rhs.v, d }
    }
}

impl<S: Scalar, const N: usize> Div for Dual<S, N> {
    type Output = Self;
    #[inline]
    fn div(self, rhs: Self) -> Self {
        let q = self.v / rhs.v;
        let mut d = self.d;
        for (a, b) in d.iter_mut().zip(rhs.d) {
            *a = (*a - q * b) / rhs.v;
        }
        Self { v: q, d }
    }
}

impl<S: Scalar, const N: usize> Neg for Dual<S, N> {
    type Output = Self;
    #[inline]
    fn neg(self) -> Self {
        Self {
            v: -self.v,
            d: self.d.map(|x| -x),
        }
    }
}

impl<S: Scalar, const N: usize> Scalar for Dual<S, N> {
    type Real = S::Real;
    const PARTS: usize = S::PARTS * (N + 1);

    fn lift(c: f64) -> Self {
        Self::constant(S::lift(c))
    }

    fn from_real(r: S::Real) -> Self {
        Self::constant(S::from_real(r))
    }

    fn from_parts(parts: &[S::Real]) -> Self {
        debug_assert_eq!(parts.len(), Self::PARTS);
        let mut blocks = parts.chunks_exact(S::PARTS).map(S::from_parts);
        let v = blocks.next().unwrap();
        Self {
            v,
            d: std::array::from_fn(|_| blocks.next().unwrap()),
        }
    }

    fn add_real(self, r: S::Real) -> Self {
        Self {
            v: self.v.add_real(r),
            d: self.d,
        }
    }

    fn scale(self, r: S::Real) -> Self {
        Self {
            v: self.v.scale(r),
            d: self.d.map(|x| x.scale(r)),
        }
    }

    fn tanh(self) -> Self {
        let y = self.v.tanh();
        let dy = S::lift(1.0) - y * y;
        self.chain(y, dy)
    }

    fn exp(self) -> Self {
        let y = self.v.exp();
        self.chain(y, y)
    }

    fn sin(self) -> Self {
        self.chain(self.v.sin(), self.v.cos())
    }

    fn cos(self) -> Self {
        self.chain(self.v.cos(), -self.v.sin())
    }

    fn powi(self, n: i32) -> Self {
        match n {
            0 => Self::lift(1.0),
            1 => self,
            _ => {
                let dv = S::lift(n as f64) * self.v.powi(n - 1);
                self.chain(self.v.powi(n), dv)
            }
        }
    }

    fn dot_real(w: &[S::Real], h: &[Self]) -> Self {
        let mut buf: Vec<S> = h.iter().map(|x| x.v).collect();
        let v = S::dot_real(w, &buf);
        let d = std::array::from_fn(|k| {
            for (b, x) in buf.iter_mut().zip(h) {
                *b = x.d[k];
            }
            S::dot_real(w, &buf)
        });
        Self { v, d }
    }
}
