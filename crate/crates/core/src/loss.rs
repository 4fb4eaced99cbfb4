//! The PINN objective `MSE = MSE_tr + MSE_Π` for forward and inverse
//! diffusivity and Biot problems.
//!
//! Every term is recorded on one lane-batched tape (one lane per point), so a
//! full-batch loss and its gradient with respect to network parameters and θ
//! cost one forward and one reverse sweep.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{AdError, DiffContext, Scalar, Var};
use crate::jet::{JetBatch, JetSpec};
use crate::network::{MlpParams, NetLayout};
use crate::problems::{residual_biot, residual_diffusivity, Field, Mode, NetField, PhysicalParams, ProblemKind};
use crate::sampling::{SampleSet, SetKind};

#[derive(Debug, Error, PartialEq)]
pub enum LossError {
    #[error("degenerate input: {0}")]
    Degenerate(&'static str),
    #[error("expected {expected} optimization variables, got {got}")]
    Shape { expected: usize, got: usize },
    #[error(transparent)]
    Ad(#[from] AdError),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub mse_tr: f64,
    pub mse_pi_u: f64,
    pub mse_pi_p: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn new(mse_tr: f64, mse_pi_u: f64, mse_pi_p: f64) -> Self {
        Self {
            mse_tr,
            mse_pi_u,
            mse_pi_p,
            total: mse_tr + mse_pi_u + mse_pi_p,
        }
    }
}

/// One line of a loss-history stream.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistoryRecord {
    pub iteration: usize,
    pub mse_tr: f64,
    pub mse_pi_u: f64,
    pub mse_pi_p: f64,
    pub total: f64,
}

impl HistoryRecord {
    pub fn new(iteration: usize, b: &LossBreakdown) -> Self {
        Self {
            iteration,
            mse_tr: b.mse_tr,
            mse_pi_u: b.mse_pi_u,
            mse_pi_p: b.mse_pi_p,
            total: b.total,
        }
    }
}

pub fn write_history(path: &Path, records: &[HistoryRecord]) -> std::io::Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

pub fn read_history(text: &str) -> Result<Vec<HistoryRecord>, serde_json::Error> {
    text.lines().filter(|l| !l.trim().is_empty()).map(serde_json::from_str).collect()
}

/// Data and configuration of one loss.
///
/// Forward: `data` is the boundary/initial set, `collocation` an LHS set and
/// θ is fixed at its true value. Inverse: the measurement points double as
/// collocation points and θ is optimized.
#[derive(Clone, Debug, PartialEq)]
pub struct LossProblem {
    pub kind: ProblemKind,
    pub mode: Mode,
    pub data: SampleSet,
    pub collocation: SampleSet,
    pub fixed_theta: Vec<f64>,
    /// `false` drops the Π terms (regularization ablation).
    pub physics: bool,
}

fn check_data(kind: ProblemKind, set: &SampleSet) -> Result<(), LossError> {
    if set.is_empty() {
        return Err(LossError::Degenerate("empty training set"));
    }
    if set.values.is_none() || set.n_values != kind.n_outputs() || set.dims != kind.n_inputs() {
        return Err(LossError::Degenerate("training set lacks solution values"));
    }
    Ok(())
}

impl LossProblem {
    pub fn forward(kind: ProblemKind, boundary: SampleSet, collocation: SampleSet) -> Result<Self, LossError> {
        check_data(kind, &boundary)?;
        if collocation.is_empty() {
            return Err(LossError::Degenerate("empty collocation set"));
        }
        if collocation.values.is_some() || collocation.dims != kind.n_inputs() {
            return Err(LossError::Degenerate("collocation set must carry coordinates only"));
        }
        Ok(Self {
            kind,
            mode: Mode::Forward,
            data: boundary,
            collocation,
            fixed_theta: kind.true_theta(&PhysicalParams::default()),
            physics: true,
        })
    }

    pub fn inverse(kind: ProblemKind, measurements: SampleSet) -> Result<Self, LossError> {
        check_data(kind, &measurements)?;
        let collocation = SampleSet::collocation(measurements.dims, measurements.points.clone());
        Ok(Self {
            kind,
            mode: Mode::Inverse,
            data: SampleSet {
                kind: SetKind::Measurement,
                ..measurements
            },
            collocation,
            fixed_theta: kind.true_theta(&PhysicalParams::default()),
            physics: true,
        })
    }

    pub fn without_physics(mut self) -> Self {
        self.physics = false;
        self
    }

    /// Number of θ components that are optimized.
    pub fn n_free_theta(&self) -> usize {
        match self.mode {
            Mode::Forward => 0,
            Mode::Inverse => self.kind.n_theta(),
        }
    }

    /// Records the three loss terms on `ctx` for an arbitrary field.
    pub fn record<F: Field<Var>>(&self, ctx: &DiffContext, field: &F, theta: &[Var]) -> [Var; 3] {
        let columns = |set: &SampleSet| -> Vec<Var> { (0..set.dims).map(|k| ctx.input(&set.coord_column(k))).collect() };
        let w = Var::constant(1.0 / self.data.len() as f64);
        let mut mse_tr = Var::constant(0.0);
        let prediction = field.eval(&columns(&self.data));
        for (k, out) in prediction.into_iter().enumerate() {
            let target = ctx.input(&self.data.value_column(k).unwrap());
            mse_tr = mse_tr + (out - target).square().sum() * w;
        }
        if !self.physics {
            return [mse_tr, Var::constant(0.0), Var::constant(0.0)];
        }
        let [pu, pp] = self.record_physics(field, theta, &columns(&self.collocation));
        [mse_tr, pu, pp]
    }

    fn record_physics<F: Field<Var>>(&self, field: &F, theta: &[Var], c: &[Var]) -> [Var; 2] {
        let w = Var::constant(1.0 / self.collocation.len() as f64);
        match self.kind {
            ProblemKind::Diffusivity => {
                let r = residual_diffusivity(field, &[theta[0], theta[1]], c[0], c[1]);
                [Var::constant(0.0), r.square().sum() * w]
            }
            ProblemKind::Biot => {
                let th = [theta[0], theta[1], theta[2], theta[3], theta[4]];
                let [ru, rv, rp] = residual_biot(field, &th, c[0], c[1], c[2]);
                [(ru.square() + rv.square()).sum() * w, rp.square().sum() * w]
            }
        }
    }

    /// Loss of an arbitrary field at the given θ.
    pub fn evaluate_field<F: Field<Var>>(&self, field: &F, theta: &[f64]) -> Result<LossBreakdown, LossError> {
        let ctx = DiffContext::new();
        let th: Vec<Var> = theta.iter().map(|&v| Var::constant(v)).collect();
        let terms = self.record(&ctx, field, &th);
        if let Some(e) = ctx.error() {
            return Err(e.into());
        }
        Ok(LossBreakdown::new(terms[0].value(), terms[1].value(), terms[2].value()))
    }
}

/// Directions whose derivatives the residual of `kind` reads.
fn jet_spec(kind: ProblemKind) -> JetSpec {
    match kind {
        ProblemKind::Diffusivity => JetSpec {
            inner: vec![0, 1],
            outer: vec![0],
        },
        ProblemKind::Biot => JetSpec {
            inner: vec![0, 1],
            outer: vec![0, 1, 2],
        },
    }
}

/// Network outputs already evaluated as flattened jets at every point; the
/// seeded inputs handed to `eval` must match the jet layout.
struct JetField<'a> {
    n_inputs: usize,
    parts: &'a [Vec<Var>],
}

impl Field<Var> for JetField<'_> {
    fn n_inputs(&self) -> usize {
        self.n_inputs
    }
    fn n_outputs(&self) -> usize {
        self.parts.len()
    }
    fn eval<T: Scalar<Real = Var>>(&self, _inputs: &[T]) -> Vec<T> {
        self.parts
            .iter()
            .map(|p| {
                assert_eq!(p.len(), T::PARTS, "jet layout mismatch");
                T::from_parts(p)
            })
            .collect()
    }
}

/// The loss as a differentiable function of `z = params ⊕ θ_free`.
#[derive(Clone, Debug)]
pub struct PinnObjective {
    pub layout: NetLayout,
    pub problem: LossProblem,
}

impl PinnObjective {
    pub fn new(layout: NetLayout, problem: LossProblem) -> Result<Self, LossError> {
        if layout.n_inputs != problem.kind.n_inputs() || layout.n_outputs != problem.kind.n_outputs() {
            return Err(LossError::Degenerate("network shape does not match problem"));
        }
        Ok(Self { layout, problem })
    }

    pub fn dim(&self) -> usize {
        self.layout.n_params() + self.problem.n_free_theta()
    }

    /// θ seen by the residuals for a given `z`.
    pub fn theta(&self, z: &[f64]) -> Vec<f64> {
        match self.problem.mode {
            Mode::Forward => self.problem.fixed_theta.clone(),
            Mode::Inverse => z[self.layout.n_params()..].to_vec(),
        }
    }

    fn check(&self, z: &[f64]) -> Result<(), LossError> {
        if z.len() != self.dim() {
            return Err(LossError::Shape {
                expected: self.dim(),
                got: z.len(),
            });
        }
        Ok(())
    }

    fn run(&self, z: &[f64], with_grad: bool) -> Result<(LossBreakdown, Vec<f64>), LossError> {
        self.check(z)?;
        let np = self.layout.n_params();
        let params = &z[..np];
        let problem = &self.problem;

        let data = JetBatch::forward(self.layout, params, JetSpec::values(), &problem.data.points);
        let nd = data.len();
        let w = 1.0 / nd as f64;
        let mut mse_tr = 0.0;
        let mut d_out = vec![0.0; self.layout.n_outputs * nd];
        for k in 0..self.layout.n_outputs {
            let target = problem.data.value_column(k).unwrap();
            let mut sum = 0.0;
            for (p, (y, t)) in data.output(k, 0).iter().zip(&target).enumerate() {
                let r = y - t;
                sum += r * r;
                d_out[k * nd + p] = 2.0 * r * w;
            }
            mse_tr += sum * w;
        }
        let mut grad = Vec::new();
        if with_grad {
            grad = data.backward(params, &d_out);
            grad.resize(self.dim(), 0.0);
        }
        if !problem.physics {
            return Ok((LossBreakdown::new(mse_tr, 0.0, 0.0), grad));
        }

        let spec = jet_spec(problem.kind);
        let nc = spec.n_components();
        let colloc = JetBatch::forward(self.layout, params, spec, &problem.collocation.points);
        let n = colloc.len();
        let ctx = DiffContext::new();
        let leaf = |v: &[f64]| if with_grad { ctx.variable_lanes(v) } else { ctx.input(v) };
        let parts: Vec<Vec<Var>> = (0..self.layout.n_outputs).map(|k| (0..nc).map(|c| leaf(colloc.output(k, c))).collect()).collect();
        let theta: Vec<Var> = match problem.mode {
            Mode::Forward => problem.fixed_theta.iter().map(|&v| Var::constant(v)).collect(),
            Mode::Inverse => z[np..].iter().map(|&v| leaf(&[v])).collect(),
        };
        let coords: Vec<Var> = (0..problem.collocation.dims).map(|k| ctx.input(&problem.collocation.coord_column(k))).collect();
        let field = JetField {
            n_inputs: self.layout.n_inputs,
            parts: &parts,
        };
        let [pu, pp] = problem.record_physics(&field, &theta, &coords);
        if let Some(e) = ctx.error() {
            return Err(e.into());
        }
        let breakdown = LossBreakdown::new(mse_tr, pu.value(), pp.value());
        if !with_grad {
            return Ok((breakdown, grad));
        }
        let g = ctx.backward(pu + pp);
        let mut d_out = vec![0.0; self.layout.n_outputs * nc * n];
        for (k, row) in parts.iter().enumerate() {
            for (c, &v) in row.iter().enumerate() {
                d_out[(k * nc + c) * n..][..n].copy_from_slice(&g.wrt(v));
            }
        }
        for (acc, d) in grad.iter_mut().zip(colloc.backward(params, &d_out)) {
            *acc += d;
        }
        for (acc, &v) in grad[np..].iter_mut().zip(&theta[..problem.n_free_theta()]) {
            *acc += g.scalar(v);
        }
        Ok((breakdown, grad))
    }

    /// Same value and gradient as [`PinnObjective::value_and_gradient`], with
    /// the whole network recorded on the tape. Slow; a cross-check.
    pub fn value_and_gradient_taped(&self, z: &[f64]) -> Result<(LossBreakdown, Vec<f64>), LossError> {
        self.check(z)?;
        let np = self.layout.n_params();
        let ctx = DiffContext::new();
        let params: Vec<Var> = z[..np].iter().map(|&v| ctx.variable(v)).collect();
        let theta: Vec<Var> = match self.problem.mode {
            Mode::Forward => self.problem.fixed_theta.iter().map(|&v| Var::constant(v)).collect(),
            Mode::Inverse => z[np..].iter().map(|&v| ctx.variable(v)).collect(),
        };
        let field = NetField::new(self.layout, &params);
        let [tr, pu, pp] = self.problem.record(&ctx, &field, &theta);
        if let Some(e) = ctx.error() {
            return Err(e.into());
        }
        let g = ctx.backward(tr + pu + pp);
        let grad = params.iter().chain(&theta[..self.problem.n_free_theta()]).map(|&v| g.scalar(v)).collect();
        Ok((LossBreakdown::new(tr.value(), pu.value(), pp.value()), grad))
    }

    pub fn value(&self, z: &[f64]) -> Result<LossBreakdown, LossError> {
        Ok(self.run(z, false)?.0)
    }

    pub fn value_and_gradient(&self, z: &[f64]) -> Result<(LossBreakdown, Vec<f64>), LossError> {
        self.run(z, true)
    }
}

fn objective(layout: NetLayout, problem: LossProblem, params: &[f64], theta: &[f64]) -> Result<LossBreakdown, LossError> {
    let obj = PinnObjective::new(layout, problem)?;
    let mut z = params.to_vec();
    if obj.problem.mode == Mode::Inverse {
        z.extend_from_slice(theta);
    }
    obj.value(&z)
}

pub fn loss_forward_diffusivity(
    params: &MlpParams<f64>,
    boundary: &SampleSet,
    collocation: &SampleSet,
) -> Result<LossBreakdown, LossError> {
    let kind = ProblemKind::Diffusivity;
    let p = LossProblem::forward(kind, boundary.clone(), collocation.clone())?;
    objective(params.layout, p, &params.values, &[])
}

pub fn loss_inverse_diffusivity(
    params: &MlpParams<f64>,
    theta: &[f64; 2],
    measurements: &SampleSet,
) -> Result<LossBreakdown, LossError> {
    let kind = ProblemKind::Diffusivity;
    let p = LossProblem::inverse(kind, measurements.clone())?;
    objective(params.layout, p, &params.values, theta)
}

pub fn loss_forward_biot(
    params: &MlpParams<f64>,
    boundary: &SampleSet,
    collocation: &SampleSet,
) -> Result<LossBreakdown, LossError> {
    let kind = ProblemKind::Biot;
    let p = LossProblem::forward(kind, boundary.clone(), collocation.clone())?;
    objective(params.layout, p, &params.values, &[])
}

pub fn loss_inverse_biot(
    params: &MlpParams<f64>,
    theta: &[f64; 5],
    measurements: &SampleSet,
) -> Result<LossBreakdown, LossError> {
    let kind = ProblemKind::Biot;
    let p = LossProblem::inverse(kind, measurements.clone())?;
    objective(params.layout, p, &params.values, theta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::relative_difference;
    use crate::autodiff::Expr;
    use crate::network::init_params;
    use crate::problems::{ExactBiot, ExactDiffusivity, ExprField, ProblemSpec};
    use crate::sampling::{boundary_initial_points, lhs_collocation};

    fn diff_sets(nb: usize, nc: usize) -> (SampleSet, SampleSet) {
        let spec = ProblemSpec::new(ProblemKind::Diffusivity, Mode::Forward);
        (boundary_initial_points(&spec, nb, 1).unwrap(), lhs_collocation(nc, &spec.bounds(), 2).unwrap())
    }

    fn biot_sets(nb: usize, nc: usize) -> (SampleSet, SampleSet) {
        let spec = ProblemSpec::new(ProblemKind::Biot, Mode::Forward);
        (boundary_initial_points(&spec, nb, 3).unwrap(), lhs_collocation(nc, &spec.bounds(), 4).unwrap())
    }

    fn measurements(kind: ProblemKind, n: usize) -> SampleSet {
        let c = lhs_collocation(n, &vec![(0.0, 1.0); kind.n_inputs()], 5).unwrap();
        SampleSet::labelled(SetKind::Measurement, kind, c.points)
    }

    fn fd_check(obj: &PinnObjective, z: &[f64]) -> f64 {
        let (_, g) = obj.value_and_gradient(z).unwrap();
        let mut worst: f64 = 0.0;
        let mut probe = z.to_vec();
        for i in 0..z.len() {
            let h = 1e-6 * z[i].abs().max(1.0);
            probe[i] = z[i] + h;
            let fp = obj.value(&probe).unwrap().total;
            probe[i] = z[i] - h;
            let fm = obj.value(&probe).unwrap().total;
            probe[i] = z[i];
            let fd = (fp - fm) / (2.0 * h);
            let scale = g.iter().map(|v| v.abs()).fold(0.0, f64::max);
            worst = worst.max((g[i] - fd).abs() / g[i].abs().max(fd.abs()).max(1e-3 * scale));
        }
        worst
    }

    #[test]
    fn exact_fields_give_zero_loss() {
        let (b, c) = diff_sets(40, 60);
        let p = LossProblem::forward(ProblemKind::Diffusivity, b, c).unwrap();
        assert!(p.evaluate_field(&ExactDiffusivity, &[1.0, 1.0]).unwrap().total < 1e-18);
        let m = measurements(ProblemKind::Diffusivity, 50);
        let p = LossProblem::inverse(ProblemKind::Diffusivity, m).unwrap();
        assert!(p.evaluate_field(&ExactDiffusivity, &[1.0, 1.0]).unwrap().total < 1e-18);

        let (b, c) = biot_sets(40, 60);
        let p = LossProblem::forward(ProblemKind::Biot, b, c).unwrap();
        assert!(p.evaluate_field(&ExactBiot, &[1.0; 5]).unwrap().total < 1e-16);
        let p = LossProblem::inverse(ProblemKind::Biot, measurements(ProblemKind::Biot, 50)).unwrap();
        assert!(p.evaluate_field(&ExactBiot, &[1.0; 5]).unwrap().total < 1e-16);
    }

    #[test]
    fn zero_field_data_term_is_mean_square_of_values() {
        let (b, c) = diff_sets(30, 10);
        let zero = ExprField {
            n_inputs: 2,
            outputs: vec![Expr::constant(0.0)],
        };
        let want = (0..b.len()).map(|i| b.value(i).unwrap()[0].powi(2)).sum::<f64>() / b.len() as f64;
        let p = LossProblem::forward(ProblemKind::Diffusivity, b, c).unwrap();
        let got = p.evaluate_field(&zero, &[1.0, 1.0]).unwrap();
        assert!(relative_difference(got.mse_tr, want) < 1e-14);
        assert_eq!(got.mse_pi_u, 0.0);
        assert_eq!(got.total, got.mse_tr + got.mse_pi_u + got.mse_pi_p);
    }

    #[test]
    fn shifted_predictions_scale_quadratically() {
        let (b, c) = diff_sets(30, 10);
        let p = LossProblem::forward(ProblemKind::Diffusivity, b, c).unwrap();
        let shifted = |d: f64| ExprField {
            n_inputs: 2,
            outputs: vec![(Expr::var(0) + Expr::var(1)).sin() + Expr::constant(d)],
        };
        let a = p.evaluate_field(&shifted(0.1), &[1.0, 1.0]).unwrap().mse_tr;
        let b = p.evaluate_field(&shifted(0.2), &[1.0, 1.0]).unwrap().mse_tr;
        assert!(relative_difference(b, 4.0 * a) < 1e-12);
    }

    #[test]
    fn inverse_diffusivity_theta_substitution() {
        // θ = (2, 1): residual picks up an extra p_t = cos(x + t)
        let m = measurements(ProblemKind::Diffusivity, 64);
        let want = (0..m.len()).map(|i| (m.point(i)[0] + m.point(i)[1]).cos().powi(2)).sum::<f64>() / 64.0;
        let p = LossProblem::inverse(ProblemKind::Diffusivity, m).unwrap();
        let got = p.evaluate_field(&ExactDiffusivity, &[2.0, 1.0]).unwrap();
        assert_eq!(got.mse_tr, 0.0);
        assert!(relative_difference(got.mse_pi_p, want) < 1e-12);
    }

    #[test]
    fn biot_zero_field_at_origin() {
        let spec = ProblemSpec::new(ProblemKind::Biot, Mode::Forward);
        let origin = SampleSet::labelled(SetKind::BoundaryInitial, ProblemKind::Biot, vec![0.0, 0.0, 0.0]);
        let zero = ExprField {
            n_inputs: 3,
            outputs: vec![Expr::constant(0.0); 3],
        };
        let c = lhs_collocation(5, &spec.bounds(), 0).unwrap();
        let p = LossProblem::forward(ProblemKind::Biot, origin, c).unwrap();
        assert_eq!(p.evaluate_field(&zero, &[1.0; 5]).unwrap().mse_tr, 2.0);
    }

    #[test]
    fn biot_data_term_is_additive_over_components() {
        let (b, c) = biot_sets(20, 10);
        let field = ExprField {
            n_inputs: 3,
            outputs: vec![Expr::var(0), Expr::var(1) * Expr::var(2), Expr::constant(1.5)],
        };
        let full = LossProblem::forward(ProblemKind::Biot, b.clone(), c).unwrap();
        let total = full.evaluate_field(&field, &[1.0; 5]).unwrap().mse_tr;
        let p_term = (0..b.len()).map(|i| (1.5 - b.value(i).unwrap()[2]).powi(2)).sum::<f64>() / b.len() as f64;
        let uv_only = ExprField {
            n_inputs: 3,
            outputs: vec![Expr::var(0), Expr::var(1) * Expr::var(2), (Expr::var(0) + Expr::var(1) + Expr::var(2)).exp()],
        };
        let rest = full.evaluate_field(&uv_only, &[1.0; 5]).unwrap().mse_tr;
        assert!((total - rest - p_term).abs() < 1e-13);
    }

    #[test]
    fn degenerate_inputs_are_rejected() {
        let (b, c) = diff_sets(5, 5);
        let empty = SampleSet::collocation(2, vec![]);
        assert!(matches!(LossProblem::forward(ProblemKind::Diffusivity, b.clone(), empty), Err(LossError::Degenerate(_))));
        assert!(LossProblem::forward(ProblemKind::Diffusivity, c.clone(), c.clone()).is_err());
        assert!(LossProblem::forward(ProblemKind::Diffusivity, b.clone(), b.clone()).is_err());
        let none = SampleSet::with_values(SetKind::Measurement, 2, vec![], 1, vec![]);
        assert!(LossProblem::inverse(ProblemKind::Diffusivity, none).is_err());
        let obj = PinnObjective::new(NetLayout::new(2, 1, 1, 3).unwrap(), LossProblem::forward(ProblemKind::Diffusivity, b, c).unwrap()).unwrap();
        assert!(matches!(obj.value(&[0.0; 3]), Err(LossError::Shape { .. })));
    }

    #[test]
    fn gradients_match_finite_differences() {
        let small = |kind: ProblemKind| NetLayout::new(kind.n_inputs(), kind.n_outputs(), 2, 3).unwrap();
        let (b, c) = diff_sets(12, 15);
        let cases = vec![
            LossProblem::forward(ProblemKind::Diffusivity, b, c).unwrap(),
            LossProblem::inverse(ProblemKind::Diffusivity, measurements(ProblemKind::Diffusivity, 20)).unwrap(),
            {
                let (b, c) = biot_sets(12, 15);
                LossProblem::forward(ProblemKind::Biot, b, c).unwrap()
            },
            LossProblem::inverse(ProblemKind::Biot, measurements(ProblemKind::Biot, 20)).unwrap(),
        ];
        for (k, p) in cases.into_iter().enumerate() {
            let layout = small(p.kind);
            let obj = PinnObjective::new(layout, p).unwrap();
            assert!(obj.dim() <= 50);
            let mut z = init_params(layout, k as u64).unwrap().values;
            z.extend((0..obj.problem.n_free_theta()).map(|i| 0.5 + 0.1 * i as f64));
            let err = fd_check(&obj, &z);
            assert!(err < 1e-5, "case {k}: {err}");
        }
    }

    #[test]
    fn batched_and_taped_paths_agree() {
        let (b, c) = diff_sets(30, 40);
        let (bb, bc) = biot_sets(30, 40);
        let cases = vec![
            LossProblem::forward(ProblemKind::Diffusivity, b.clone(), c.clone()).unwrap(),
            LossProblem::forward(ProblemKind::Diffusivity, b, c).unwrap().without_physics(),
            LossProblem::inverse(ProblemKind::Diffusivity, measurements(ProblemKind::Diffusivity, 50)).unwrap(),
            LossProblem::forward(ProblemKind::Biot, bb, bc).unwrap(),
            LossProblem::inverse(ProblemKind::Biot, measurements(ProblemKind::Biot, 50)).unwrap(),
        ];
        for (k, p) in cases.into_iter().enumerate() {
            let layout = NetLayout::new(p.kind.n_inputs(), p.kind.n_outputs(), 3, 6).unwrap();
            let obj = PinnObjective::new(layout, p).unwrap();
            let mut z = init_params(layout, 11 + k as u64).unwrap().values;
            z.extend((0..obj.problem.n_free_theta()).map(|i| 0.6 + 0.1 * i as f64));
            let (fa, ga) = obj.value_and_gradient(&z).unwrap();
            let (fb, gb) = obj.value_and_gradient_taped(&z).unwrap();
            for (x, y) in [(fa.mse_tr, fb.mse_tr), (fa.mse_pi_u, fb.mse_pi_u), (fa.mse_pi_p, fb.mse_pi_p)] {
                assert!(relative_difference(x, y) < 1e-12, "case {k}: {x} vs {y}");
            }
            let scale = gb.iter().map(|v| v.abs()).fold(0.0, f64::max);
            for (x, y) in ga.iter().zip(&gb) {
                assert!((x - y).abs() <= 1e-11 * scale, "case {k}: {x} vs {y}");
            }
        }
    }

    #[test]
    fn named_wrappers_agree_with_objective() {
        let layout = NetLayout::new(2, 1, 2, 4).unwrap();
        let params: MlpParams<f64> = init_params(layout, 3).unwrap();
        let m = measurements(ProblemKind::Diffusivity, 30);
        let a = loss_inverse_diffusivity(&params, &[0.5, 0.7], &m).unwrap();
        let obj = PinnObjective::new(layout, LossProblem::inverse(ProblemKind::Diffusivity, m).unwrap()).unwrap();
        let mut z = params.values.clone();
        z.extend([0.5, 0.7]);
        assert_eq!(a, obj.value(&z).unwrap());
        let (vb, g) = obj.value_and_gradient(&z).unwrap();
        assert_eq!(vb, a);
        assert_eq!(g.len(), obj.dim());

        let (b, c) = diff_sets(10, 10);
        assert!(loss_forward_diffusivity(&params, &b, &c).unwrap().total > 0.0);
        let bl = NetLayout::new(3, 3, 1, 4).unwrap();
        let bp = init_params(bl, 1).unwrap();
        let (b, c) = biot_sets(10, 10);
        assert!(loss_forward_biot(&bp, &b, &c).unwrap().total > 0.0);
        assert!(loss_inverse_biot(&bp, &[1.0; 5], &measurements(ProblemKind::Biot, 10)).unwrap().total > 0.0);
    }

    #[test]
    fn permuted_points_agree() {
        let layout = NetLayout::new(3, 3, 2, 4).unwrap();
        let params = init_params(layout, 8).unwrap();
        let m = measurements(ProblemKind::Biot, 40);
        let mut rev: Vec<usize> = (0..40).collect();
        rev.reverse();
        let a = loss_inverse_biot(&params, &[0.9, 1.1, 1.0, 0.8, 1.2], &m).unwrap().total;
        let b = loss_inverse_biot(&params, &[0.9, 1.1, 1.0, 0.8, 1.2], &m.subset(&rev, SetKind::Measurement)).unwrap().total;
        assert!(relative_difference(a, b) < 1e-12);
    }

    #[test]
    fn ablation_drops_physics_terms() {
        let (b, c) = diff_sets(10, 10);
        let p = LossProblem::forward(ProblemKind::Diffusivity, b, c).unwrap().without_physics();
        let zero = ExprField {
            n_inputs: 2,
            outputs: vec![Expr::constant(0.0)],
        };
        let l = p.evaluate_field(&zero, &[1.0, 1.0]).unwrap();
        assert_eq!((l.mse_pi_u, l.mse_pi_p), (0.0, 0.0));
        assert!(l.mse_tr > 0.0);
    }

    #[test]
    fn history_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("loss.jsonl");
        let recs = vec![
            HistoryRecord::new(0, &LossBreakdown::new(1.0, 0.5, 0.25)),
            HistoryRecord::new(1, &LossBreakdown::new(0.1, 0.0, 1e-17)),
        ];
        write_history(&path, &recs).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 2);
        assert_eq!(read_history(&text).unwrap(), recs);
    }
}
