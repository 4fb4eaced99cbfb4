use std::fmt::Debug;
use std::ops::{Add, Div, Mul, Neg, Sub};

/// Arithmetic over the primitive set `{+, -, *, /, tanh, exp, sin, cos, powi}`.
///
/// Everything the network and the residual operators compute is written
/// against this trait, so the same code runs on plain floats, on forward-mode
/// duals (input derivatives) and on tape variables (parameter gradients).
///
/// `Real` is the innermost scalar of a nested type: `f64` for `Dual<Dual<f64, 2>, 1>`,
/// `Var` for `Dual<Var, 3>`. Network weights and physical parameters live at
/// that level and are broadcast into the nested type with [`Scalar::from_real`].
pub trait Scalar:
    Copy
    + Debug
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
{
    type Real: Scalar<Real = Self::Real>;

    /// Number of innermost scalars stored in `Self`.
    const PARTS: usize;

    /// A constant with all derivatives zero.
    fn lift(c: f64) -> Self;

    fn from_real(r: Self::Real) -> Self;

    /// Inverse of flattening `Self` value-first, depth-first; `parts.len()`
    /// must equal `PARTS`.
    fn from_parts(parts: &[Self::Real]) -> Self;

    fn add_real(self, r: Self::Real) -> Self {
        self + Self::from_real(r)
    }

    fn scale(self, r: Self::Real) -> Self {
        self * Self::from_real(r)
    }

    fn tanh(self) -> Self;
    fn exp(self) -> Self;
    fn sin(self) -> Self;
    fn cos(self) -> Self;
    fn powi(self, n: i32) -> Self;

    /// `sum_i w[i] * h[i]`, left to right.
    fn dot_real(w: &[Self::Real], h: &[Self]) -> Self {
        debug_assert_eq!(w.len(), h.len());
        let mut it = w.iter().zip(h);
        match it.next() {
            None => Self::lift(0.0),
            Some((w0, h0)) => it.fold(h0.scale(*w0), |acc, (wi, hi)| acc + hi.scale(*wi)),
        }
    }

    fn square(self) -> Self {
        self * self
    }
}

macro_rules! float_scalar {
    ($t:ty) => {
        impl Scalar for $t {
            type Real = $t;
            const PARTS: usize = 1;

            #[inline]
            fn lift(c: f64) -> Self {
                c as $t
            }
            #[inline]
            fn from_real(r: $t) -> Self {
                r
            }
            #[inline]
            fn from_parts(parts: &[$t]) -> Self {
                parts[0]
            }
            #[inline]
            fn add_real(self, r: $t) -> Self {
                self + r
            }
            #[inline]
            fn scale(self, r: $t) -> Self {
                self * r
            }
            #[inline]
            fn tanh(self) -> Self {
                num_traits::Float::tanh(self)
            }
            #[inline]
            fn exp(self) -> Self {
                num_traits::Float::exp(self)
            }
            #[inline]
            fn sin(self) -> Self {
                num_traits::Float::sin(self)
            }
            #[inline]
            fn cos(self) -> Self {
                num_traits::Float::cos(self)
            }
            #[inline]
            fn powi(self, n: i32) -> Self {
                num_traits::Float::powi(self, n)
            }
        }
    };
}

float_scalar!(f32);
float_scalar!(f64);
