//! Physics-informed neural networks for nonlinear diffusivity and nonlinear
//! Biot poroelasticity, forward and inverse.
//!
//! The numerical core is generic over the floating-point type; the aliases
//! below fix it to `f64` or `f32`.

pub mod autodiff;
pub mod harness;
pub mod jet;
pub mod loss;
pub mod metrics;
pub mod network;
pub mod numeric;
pub mod optim;
pub mod problems;
pub mod sampling;

pub type Params = network::MlpParams<f64>;
pub type Params32 = network::MlpParams<f32>;
pub type Dual1 = autodiff::Dual<f64, 1>;
pub type Dual2 = autodiff::Dual<autodiff::Dual<f64, 2>, 2>;
pub type Dual1F32 = autodiff::Dual<f32, 1>;
