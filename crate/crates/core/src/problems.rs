//! Manufactured solutions, source terms and physics-informed residuals for the
//! nonlinear diffusivity equation (1D + time) and the nonlinear Biot system
//! (2D + time), forward and inverse.
//!
//! Every derivative inside a residual is produced by nested dual numbers run
//! through the field, so the same code evaluates networks and analytic
//! oracles. The θ vector enters linearly:
//!
//! * diffusivity: `θ = (φ c_t, κ₀)`
//! * Biot: `θ = (μ_l, λ_l, α, φ c_f + (α - φ)/K_s, κ₀)`

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{Dual, Expr, Scalar, ScalarFn};
use crate::network::{forward, NetLayout};

#[derive(Debug, Error, PartialEq)]
pub enum ProblemError {
    #[error("boundary normal must have unit length, got |n| = {0}")]
    NonUnitNormal(f64),
}

/// Physical constants. Every shipped experiment uses all ones and zero gravity.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhysicalParams {
    pub phi: f64,
    pub c_t: f64,
    pub c_f: f64,
    pub kappa0: f64,
    pub alpha: f64,
    pub mu_l: f64,
    pub lambda_l: f64,
    pub k_s: f64,
    pub rho: f64,
    pub g_vec: [f64; 2],
}

impl Default for PhysicalParams {
    fn default() -> Self {
        Self {
            phi: 1.0,
            c_t: 1.0,
            c_f: 1.0,
            kappa0: 1.0,
            alpha: 1.0,
            mu_l: 1.0,
            lambda_l: 1.0,
            k_s: 1.0,
            rho: 1.0,
            g_vec: [0.0, 0.0],
        }
    }
}

impl PhysicalParams {
    pub fn diffusivity_theta(&self) -> [f64; 2] {
        [self.phi * self.c_t, self.kappa0]
    }

    pub fn biot_theta(&self) -> [f64; 5] {
        [
            self.mu_l,
            self.lambda_l,
            self.alpha,
            self.phi * self.c_f + (self.alpha - self.phi) / self.k_s,
            self.kappa0,
        ]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProblemKind {
    Diffusivity,
    Biot,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Forward,
    Inverse,
}

impl ProblemKind {
    pub fn spatial_dims(self) -> usize {
        match self {
            ProblemKind::Diffusivity => 1,
            ProblemKind::Biot => 2,
        }
    }

    /// Spatial coordinates followed by time.
    pub fn n_inputs(self) -> usize {
        self.spatial_dims() + 1
    }

    pub fn n_outputs(self) -> usize {
        match self {
            ProblemKind::Diffusivity => 1,
            ProblemKind::Biot => 3,
        }
    }

    pub fn n_theta(self) -> usize {
        match self {
            ProblemKind::Diffusivity => 2,
            ProblemKind::Biot => 5,
        }
    }

    pub fn input_names(self) -> &'static [&'static str] {
        match self {
            ProblemKind::Diffusivity => &["x", "t"],
            ProblemKind::Biot => &["x", "y", "t"],
        }
    }

    pub fn output_names(self) -> &'static [&'static str] {
        match self {
            ProblemKind::Diffusivity => &["p"],
            ProblemKind::Biot => &["u", "v", "p"],
        }
    }

    pub fn true_theta(self, phys: &PhysicalParams) -> Vec<f64> {
        match self {
            ProblemKind::Diffusivity => phys.diffusivity_theta().to_vec(),
            ProblemKind::Biot => phys.biot_theta().to_vec(),
        }
    }

    /// Exact solution at one point given as `[x, t]` or `[x, y, t]`.
    pub fn exact(self, point: &[f64]) -> Vec<f64> {
        match self {
            ProblemKind::Diffusivity => vec![exact_diffusivity(point[0], point[1])],
            ProblemKind::Biot => exact_biot(point[0], point[1], point[2]).to_vec(),
        }
    }

    pub fn layout(self, n_hidden_layers: usize, neurons_per_layer: usize) -> NetLayout {
        NetLayout {
            n_inputs: self.n_inputs(),
            n_outputs: self.n_outputs(),
            n_hidden_layers,
            neurons_per_layer,
        }
    }
}

/// Something that maps `(x, t)` or `(x, y, t)` to `p` or `(u, v, p)`.
///
/// `R` is the innermost scalar the field's own parameters live at; inputs may
/// be any scalar nested over `R`.
pub trait Field<R: Scalar<Real = R>> {
    fn n_inputs(&self) -> usize;
    fn n_outputs(&self) -> usize;
    fn eval<T: Scalar<Real = R>>(&self, inputs: &[T]) -> Vec<T>;
}

/// A network with its parameters at scalar level `R`.
pub struct NetField<'a, R> {
    layout: NetLayout,
    params: &'a [R],
}

impl<'a, R: Scalar<Real = R>> NetField<'a, R> {
    pub fn new(layout: NetLayout, params: &'a [R]) -> Self {
        assert_eq!(params.len(), layout.n_params(), "parameter count does not match layout");
        Self { layout, params }
    }
}

impl<R: Scalar<Real = R>> Field<R> for NetField<'_, R> {
    fn n_inputs(&self) -> usize {
        self.layout.n_inputs
    }
    fn n_outputs(&self) -> usize {
        self.layout.n_outputs
    }
    fn eval<T: Scalar<Real = R>>(&self, inputs: &[T]) -> Vec<T> {
        forward(&self.layout, self.params, inputs).expect("input count checked by caller")
    }
}

/// `p = sin(x + t)`.
pub struct ExactDiffusivity;

impl<R: Scalar<Real = R>> Field<R> for ExactDiffusivity {
    fn n_inputs(&self) -> usize {
        2
    }
    fn n_outputs(&self) -> usize {
        1
    }
    fn eval<T: Scalar<Real = R>>(&self, x: &[T]) -> Vec<T> {
        vec![exact_diffusivity(x[0], x[1])]
    }
}

/// `(u, v, p) = (sin s, cos s, e^s)` with `s = x + y + t`.
pub struct ExactBiot;

impl<R: Scalar<Real = R>> Field<R> for ExactBiot {
    fn n_inputs(&self) -> usize {
        3
    }
    fn n_outputs(&self) -> usize {
        3
    }
    fn eval<T: Scalar<Real = R>>(&self, x: &[T]) -> Vec<T> {
        exact_biot(x[0], x[1], x[2]).to_vec()
    }
}

/// Analytic field given by one expression per output.
pub struct ExprField {
    pub n_inputs: usize,
    pub outputs: Vec<Expr>,
}

impl<R: Scalar<Real = R>> Field<R> for ExprField {
    fn n_inputs(&self) -> usize {
        self.n_inputs
    }
    fn n_outputs(&self) -> usize {
        self.outputs.len()
    }
    fn eval<T: Scalar<Real = R>>(&self, x: &[T]) -> Vec<T> {
        self.outputs.iter().map(|e| e.eval(x)).collect()
    }
}

pub fn exact_diffusivity<S: Scalar>(x: S, t: S) -> S {
    (x + t).sin()
}

/// `g = cos s + sin³ s - 2 cos² s sin s`, `s = x + t`.
pub fn source_diffusivity<S: Scalar>(x: S, t: S) -> S {
    let s = x + t;
    let (sn, cs) = (s.sin(), s.cos());
    cs + sn.powi(3) - S::lift(2.0) * cs.powi(2) * sn
}

pub fn exact_biot<S: Scalar>(x: S, y: S, t: S) -> [S; 3] {
    let s = x + y + t;
    [s.sin(), s.cos(), s.exp()]
}

/// `(f_u, f_v, g)` making [`exact_biot`] satisfy the Biot system with all
/// constants equal to one.
///
/// The mass source carries a factor 2 on its exponential term: the flux
/// divergence `∇·(e^{ε_v} ∇p)` picks up equal contributions from `x` and `y`.
pub fn sources_biot<S: Scalar>(x: S, y: S, t: S) -> [S; 3] {
    let s = x + y + t;
    let (sn, cs, es) = (s.sin(), s.cos(), s.exp());
    let four = S::lift(4.0);
    let two = S::lift(2.0);
    let f_u = -(four * sn) - two * cs - es;
    let f_v = -(four * cs) - two * sn - es;
    let g = two * (cs + sn - S::lift(1.0)) * (cs - sn + s).exp() - cs + es - sn;
    [f_u, f_v, g]
}

fn d2_inputs<R: Scalar<Real = R>>(x: R, t: R) -> [Dual<Dual<R, 2>, 1>; 2] {
    let (zero, one) = (R::lift(0.0), R::lift(1.0));
    [
        Dual::new(Dual::new(x, [one, zero]), [Dual::lift(1.0)]),
        Dual::new(Dual::new(t, [zero, one]), [Dual::lift(0.0)]),
    ]
}

/// `Π = θ₁ ∂p/∂t - θ₂ ∂/∂x(p² ∂p/∂x) - g`.
pub fn residual_diffusivity<R, F>(field: &F, theta: &[R; 2], x: R, t: R) -> R
where
    R: Scalar<Real = R>,
    F: Field<R>,
{
    let out = field.eval(&d2_inputs(x, t))[0];
    // out.v carries (p, p_x, p_t); out.d[0] carries (p_x, p_xx, p_xt)
    let p = out.v;
    let p_x = out.d[0];
    let flux = p * p * p_x;
    theta[0] * p.d[1] - theta[1] * flux.d[0] - source_diffusivity(x, t)
}

type BiotJet<R> = Dual<Dual<R, 2>, 3>;

/// Inputs seeded for first and second derivatives: inner directions `(x, y)`,
/// outer directions `(x, y, t)`.
fn biot_inputs<R: Scalar<Real = R>>(x: R, y: R, t: R) -> [BiotJet<R>; 3] {
    let (zero, one) = (R::lift(0.0), R::lift(1.0));
    let (dz, du) = (Dual::lift(0.0), Dual::lift(1.0));
    [
        Dual::new(Dual::new(x, [one, zero]), [du, dz, dz]),
        Dual::new(Dual::new(y, [zero, one]), [dz, du, dz]),
        Dual::new(Dual::new(t, [zero, zero]), [dz, dz, du]),
    ]
}

struct BiotResiduals<R> {
    momentum: [R; 2],
    mass: R,
}

fn biot_residuals<R, F>(field: &F, theta: &[R; 5], x: R, y: R, t: R, want_mass: bool) -> BiotResiduals<R>
where
    R: Scalar<Real = R>,
    F: Field<R>,
{
    let out = field.eval(&biot_inputs(x, y, t));
    let (u, v, p) = (out[0], out[1], out[2]);
    let [mu, lambda, alpha, storage, kappa] = *theta;
    let [f_u, f_v, g] = sources_biot(x, y, t);

    // first derivatives as functions of (x, y)
    let (u_x, u_y, v_x, v_y) = (u.d[0], u.d[1], v.d[0], v.d[1]);
    let eps_v = u_x + v_y;

    let two_mu = mu + mu;
    let pressure = p.v.scale(alpha);
    let s_xx = u_x.scale(two_mu) + eps_v.scale(lambda) - pressure;
    let s_yy = v_y.scale(two_mu) + eps_v.scale(lambda) - pressure;
    let s_xy = (u_y + v_x).scale(mu);
    let momentum = [s_xx.d[0] + s_xy.d[1] - f_u, s_xy.d[0] + s_yy.d[1] - f_v];

    let mass = if want_mass {
        let p_t = p.d[2].v;
        let eps_v_t = u.d[2].d[0] + v.d[2].d[1];
        let conductivity = eps_v.exp();
        let q_x = conductivity * p.d[0];
        let q_y = conductivity * p.d[1];
        storage * p_t + alpha * eps_v_t - kappa * (q_x.d[0] + q_y.d[1]) - g
    } else {
        R::lift(0.0)
    };
    BiotResiduals { momentum, mass }
}

/// `(Π_u, Π_v) = ∇·[2θ₁ ε(u) + θ₂ (∇·u) I] - θ₃ ∇p - f`.
pub fn residual_biot_momentum<R, F>(field: &F, theta: &[R; 5], x: R, y: R, t: R) -> [R; 2]
where
    R: Scalar<Real = R>,
    F: Field<R>,
{
    biot_residuals(field, theta, x, y, t, false).momentum
}

/// `Π_p = θ₄ ∂p/∂t + θ₃ ∂(∇·u)/∂t - θ₅ ∇·(e^{ε_v} ∇p) - g`.
pub fn residual_biot_mass<R, F>(field: &F, theta: &[R; 5], x: R, y: R, t: R) -> R
where
    R: Scalar<Real = R>,
    F: Field<R>,
{
    biot_residuals(field, theta, x, y, t, true).mass
}

/// `[Π_u, Π_v, Π_p]` from a single pass through the field.
pub fn residual_biot<R, F>(field: &F, theta: &[R; 5], x: R, y: R, t: R) -> [R; 3]
where
    R: Scalar<Real = R>,
    F: Field<R>,
{
    let r = biot_residuals(field, theta, x, y, t, true);
    [r.momentum[0], r.momentum[1], r.mass]
}

fn check_normal(n: [f64; 2]) -> Result<(), ProblemError> {
    let norm = (n[0] * n[0] + n[1] * n[1]).sqrt();
    if (norm - 1.0).abs() > 1e-12 {
        return Err(ProblemError::NonUnitNormal(norm));
    }
    Ok(())
}

struct FirstOrder<R> {
    u_x: R,
    u_y: R,
    v_x: R,
    v_y: R,
    p: R,
    p_x: R,
    p_y: R,
}

fn first_order<R: Scalar<Real = R>, F: Field<R>>(field: &F, x: R, y: R, t: R) -> FirstOrder<R> {
    let out = field.eval(&[Dual::<R, 2>::variable(x, 0), Dual::variable(y, 1), Dual::constant(t)]);
    FirstOrder {
        u_x: out[0].d[0],
        u_y: out[0].d[1],
        v_x: out[1].d[0],
        v_y: out[1].d[1],
        p: out[2].v,
        p_x: out[2].d[0],
        p_y: out[2].d[1],
    }
}

fn traction<R: Scalar<Real = R>>(g: &FirstOrder<R>, theta: &[R; 5], n: [f64; 2]) -> [R; 2] {
    let [mu, lambda, alpha, _, _] = *theta;
    let eps_v = g.u_x + g.v_y;
    let s_xx = (mu + mu) * g.u_x + lambda * eps_v - alpha * g.p;
    let s_yy = (mu + mu) * g.v_y + lambda * eps_v - alpha * g.p;
    let s_xy = mu * (g.u_y + g.v_x);
    let (nx, ny) = (R::lift(n[0]), R::lift(n[1]));
    [s_xx * nx + s_xy * ny, s_xy * nx + s_yy * ny]
}

fn normal_flux<R: Scalar<Real = R>>(g: &FirstOrder<R>, kappa: R, n: [f64; 2]) -> R {
    let k = kappa * (g.u_x + g.v_y).exp();
    -(k * (g.p_x * R::lift(n[0]) + g.p_y * R::lift(n[1])))
}

/// `σ·n - σ_D` on a traction boundary with unit outward normal `n`.
pub fn residual_traction<R, F>(
    field: &F,
    theta: &[R; 5],
    x: R,
    y: R,
    t: R,
    n: [f64; 2],
    sigma_d: [R; 2],
) -> Result<[R; 2], ProblemError>
where
    R: Scalar<Real = R>,
    F: Field<R>,
{
    check_normal(n)?;
    let s = traction(&first_order(field, x, y, t), theta, n);
    Ok([s[0] - sigma_d[0], s[1] - sigma_d[1]])
}

/// `-θ₅ e^{ε_v} ∇p·n - q_D` on a flux boundary (gravity inert).
pub fn residual_flux<R, F>(field: &F, theta: &[R; 5], x: R, y: R, t: R, n: [f64; 2], q_d: R) -> Result<R, ProblemError>
where
    R: Scalar<Real = R>,
    F: Field<R>,
{
    check_normal(n)?;
    Ok(normal_flux(&first_order(field, x, y, t), theta[4], n) - q_d)
}

/// Prescribed traction `σ_D = σ(exact)·n`, written out in closed form.
pub fn traction_exact<S: Scalar>(phys: &PhysicalParams, x: S, y: S, t: S, n: [f64; 2]) -> [S; 2] {
    let s = x + y + t;
    let (sn, cs, es) = (s.sin(), s.cos(), s.exp());
    let (mu, lambda, alpha) = (S::lift(phys.mu_l), S::lift(phys.lambda_l), S::lift(phys.alpha));
    // u_x = u_y = cos s, v_x = v_y = -sin s
    let eps_v = cs - sn;
    let s_xx = S::lift(2.0) * mu * cs + lambda * eps_v - alpha * es;
    let s_yy = -(S::lift(2.0) * mu * sn) + lambda * eps_v - alpha * es;
    let s_xy = mu * (cs - sn);
    let (nx, ny) = (S::lift(n[0]), S::lift(n[1]));
    [s_xx * nx + s_xy * ny, s_xy * nx + s_yy * ny]
}

/// Prescribed flux `q_D = -κ₀ e^{cos s - sin s} e^s (n_x + n_y)`.
pub fn flux_exact<S: Scalar>(phys: &PhysicalParams, x: S, y: S, t: S, n: [f64; 2]) -> S {
    let s = x + y + t;
    let k = S::lift(phys.kappa0) * (s.cos() - s.sin()).exp();
    -(k * s.exp() * S::lift(n[0] + n[1]))
}

/// Problem definition used by sampling and training.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProblemSpec {
    pub kind: ProblemKind,
    pub mode: Mode,
    pub physical: PhysicalParams,
}

impl ProblemSpec {
    pub fn new(kind: ProblemKind, mode: Mode) -> Self {
        Self {
            kind,
            mode,
            physical: PhysicalParams::default(),
        }
    }

    pub fn true_theta(&self) -> Vec<f64> {
        self.kind.true_theta(&self.physical)
    }

    /// Closed domain `[0,1]^d × [0,1]`, one `(lo, hi)` per input.
    pub fn bounds(&self) -> Vec<(f64, f64)> {
        vec![(0.0, 1.0); self.kind.n_inputs()]
    }
}
