//! Solution grids, train/validation/test splits, boundary and initial data,
//! Latin-hypercube collocation points and measurement noise.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::population_sd;
use crate::problems::{ProblemKind, ProblemSpec};

#[derive(Debug, Error)]
pub enum SamplingError {
    #[error("requested {requested} training points from a grid of {available}")]
    Size { requested: usize, available: usize },
    #[error("interval counts and sample sizes must be >= 1")]
    Empty,
    #[error("noise level must be non-negative, got {0}")]
    NegativeNoise(f64),
    #[error("csv: {0}")]
    Csv(String),
    #[error("csv: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SetKind {
    BoundaryInitial,
    Collocation,
    Measurement,
    Validation,
    Test,
}

/// Points stored row-major (`dims` coordinates each, time last), values
/// likewise with `n_values` components per point.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleSet {
    pub kind: SetKind,
    pub dims: usize,
    pub points: Vec<f64>,
    pub n_values: usize,
    pub values: Option<Vec<f64>>,
}

impl SampleSet {
    pub fn collocation(dims: usize, points: Vec<f64>) -> Self {
        assert_eq!(points.len() % dims, 0);
        Self {
            kind: SetKind::Collocation,
            dims,
            points,
            n_values: 0,
            values: None,
        }
    }

    pub fn with_values(kind: SetKind, dims: usize, points: Vec<f64>, n_values: usize, values: Vec<f64>) -> Self {
        assert!(kind != SetKind::Collocation, "collocation sets carry no values");
        assert_eq!(points.len() % dims, 0);
        assert_eq!(values.len(), points.len() / dims * n_values);
        Self {
            kind,
            dims,
            points,
            n_values,
            values: Some(values),
        }
    }

    /// Attaches exact-solution values to every point.
    pub fn labelled(kind: SetKind, problem: ProblemKind, points: Vec<f64>) -> Self {
        let dims = problem.n_inputs();
        let values = points.chunks(dims).flat_map(|p| problem.exact(p)).collect();
        Self::with_values(kind, dims, points, problem.n_outputs(), values)
    }

    pub fn len(&self) -> usize {
        self.points.len() / self.dims
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dims..(i + 1) * self.dims]
    }

    pub fn value(&self, i: usize) -> Option<&[f64]> {
        self.values.as_ref().map(|v| &v[i * self.n_values..(i + 1) * self.n_values])
    }

    /// One coordinate across all points.
    pub fn coord_column(&self, k: usize) -> Vec<f64> {
        self.points.iter().skip(k).step_by(self.dims).copied().collect()
    }

    /// One value component across all points.
    pub fn value_column(&self, k: usize) -> Option<Vec<f64>> {
        let v = self.values.as_ref()?;
        Some(v.iter().skip(k).step_by(self.n_values).copied().collect())
    }

    pub fn subset(&self, indices: &[usize], kind: SetKind) -> Self {
        let mut points = Vec::with_capacity(indices.len() * self.dims);
        for &i in indices {
            points.extend_from_slice(self.point(i));
        }
        match &self.values {
            Some(v) if kind != SetKind::Collocation => {
                let mut values = Vec::with_capacity(indices.len() * self.n_values);
                for &i in indices {
                    values.extend_from_slice(&v[i * self.n_values..(i + 1) * self.n_values]);
                }
                Self::with_values(kind, self.dims, points, self.n_values, values)
            }
            _ => Self::collocation(self.dims, points),
        }
    }

    pub fn in_unit_domain(&self) -> bool {
        self.points.iter().all(|c| (0.0..=1.0).contains(c))
    }

    pub fn to_csv(&self, coord_names: &[&str], value_names: &[&str]) -> String {
        let mut s = String::new();
        let header: Vec<&str> = coord_names.iter().chain(if self.values.is_some() { value_names } else { &[] }).copied().collect();
        s.push_str(&header.join(","));
        s.push('\n');
        for i in 0..self.len() {
            let row: Vec<String> = self
                .point(i)
                .iter()
                .chain(self.value(i).unwrap_or(&[]))
                .map(|v| format!("{v:e}"))
                .collect();
            let _ = writeln!(s, "{}", row.join(","));
        }
        s
    }

    pub fn write_csv(&self, path: &Path, coord_names: &[&str], value_names: &[&str]) -> Result<(), SamplingError> {
        fs::write(path, self.to_csv(coord_names, value_names))?;
        Ok(())
    }

    /// Parses the format written by [`SampleSet::to_csv`].
    pub fn from_csv(text: &str, kind: SetKind, dims: usize) -> Result<Self, SamplingError> {
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| SamplingError::Csv("missing header".into()))?;
        let cols = header.split(',').count();
        if cols < dims {
            return Err(SamplingError::Csv(format!("{cols} columns for {dims} coordinates")));
        }
        let n_values = cols - dims;
        let (mut points, mut values) = (Vec::new(), Vec::new());
        for (ln, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let row: Vec<f64> = line
                .split(',')
                .map(|f| f.trim().parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|e| SamplingError::Csv(format!("line {}: {e}", ln + 2)))?;
            if row.len() != cols {
                return Err(SamplingError::Csv(format!("line {}: expected {cols} fields", ln + 2)));
            }
            points.extend_from_slice(&row[..dims]);
            values.extend_from_slice(&row[dims..]);
        }
        if n_values == 0 {
            Ok(Self::collocation(dims, points))
        } else {
            Ok(Self::with_values(kind, dims, points, n_values, values))
        }
    }
}

/// Equidistant tensor-product grid over the closed domain.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub spatial_intervals: Vec<usize>,
    pub temporal_intervals: usize,
    /// `(lo, hi)` per input, spatial axes first.
    pub bounds: Vec<(f64, f64)>,
}

impl GridSpec {
    pub fn default_for(kind: ProblemKind) -> Self {
        match kind {
            ProblemKind::Diffusivity => Self::unit(vec![2559], 99),
            ProblemKind::Biot => Self::unit(vec![99, 99], 49),
        }
    }

    pub fn unit(spatial_intervals: Vec<usize>, temporal_intervals: usize) -> Self {
        let n = spatial_intervals.len() + 1;
        Self {
            spatial_intervals,
            temporal_intervals,
            bounds: vec![(0.0, 1.0); n],
        }
    }

    pub fn n_points(&self) -> usize {
        self.intervals().iter().map(|n| n + 1).product()
    }

    fn intervals(&self) -> Vec<usize> {
        let mut v = self.spatial_intervals.clone();
        v.push(self.temporal_intervals);
        v
    }
}

/// Grid with exact-solution values; time varies slowest, the first spatial
/// axis fastest.
pub fn build_grid(spec: &GridSpec, problem: &ProblemSpec) -> Result<SampleSet, SamplingError> {
    let intervals = spec.intervals();
    let dims = problem.kind.n_inputs();
    if intervals.len() != dims || spec.bounds.len() != dims || intervals.contains(&0) {
        return Err(SamplingError::Empty);
    }
    let axes: Vec<Vec<f64>> = intervals
        .iter()
        .zip(&spec.bounds)
        .map(|(&n, &(lo, hi))| (0..=n).map(|i| lo + (hi - lo) * (i as f64 / n as f64)).collect())
        .collect();
    let total = spec.n_points();
    let mut points = Vec::with_capacity(total * dims);
    let mut idx = vec![0usize; dims];
    for _ in 0..total {
        points.extend(idx.iter().zip(&axes).map(|(&i, a)| a[i]));
        for (k, i) in idx.iter_mut().enumerate() {
            *i += 1;
            if *i < axes[k].len() {
                break;
            }
            *i = 0;
        }
    }
    Ok(SampleSet::labelled(SetKind::Measurement, problem.kind, points))
}

/// Splits a grid into `n_train` measurement points, then halves the rest into
/// validation and test (validation takes the odd point). Each part keeps grid
/// order.
pub fn split(grid: &SampleSet, n_train: usize, seed: u64) -> Result<(SampleSet, SampleSet, SampleSet), SamplingError> {
    let n = grid.len();
    if n_train > n {
        return Err(SamplingError::Size {
            requested: n_train,
            available: n,
        });
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_val = (n - n_train).div_ceil(2);
    let (train, rest) = idx.split_at_mut(n_train);
    let (val, test) = rest.split_at_mut(n_val);
    for part in [&mut *train, &mut *val, &mut *test] {
        part.sort_unstable();
    }
    Ok((
        grid.subset(train, SetKind::Measurement),
        grid.subset(val, SetKind::Validation),
        grid.subset(test, SetKind::Test),
    ))
}

/// Pieces of the initial/Dirichlet boundary as (fixed axis, fixed value);
/// the time axis at 0 is the initial slab.
fn boundary_pieces(kind: ProblemKind) -> Vec<(usize, f64)> {
    let d = kind.spatial_dims();
    let mut v = vec![(d, 0.0)];
    for axis in 0..d {
        v.push((axis, 0.0));
        v.push((axis, 1.0));
    }
    v
}

/// Measure-proportional allocation with randomized rounding of the remainder.
fn allocate(n: usize, measures: &[f64], rng: &mut ChaCha8Rng) -> Vec<usize> {
    let total: f64 = measures.iter().sum();
    let exact: Vec<f64> = measures.iter().map(|m| n as f64 * m / total).collect();
    let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut frac: Vec<f64> = exact.iter().zip(&counts).map(|(e, &c)| e - c as f64).collect();
    let mut left = n - counts.iter().sum::<usize>();
    while left > 0 {
        let w: f64 = frac.iter().sum();
        let mut r = rng.random::<f64>() * w;
        let mut pick = frac.iter().rposition(|&f| f > 0.0).unwrap_or(0);
        for (i, &f) in frac.iter().enumerate() {
            if f > 0.0 && r < f {
                pick = i;
                break;
            }
            r -= f;
        }
        counts[pick] += 1;
        frac[pick] = 0.0;
        left -= 1;
    }
    counts
}

/// Uniform points on the initial slab and the Dirichlet boundary, with
/// exact-solution values. Boundary times lie in `(0, 1]`.
pub fn boundary_initial_points(problem: &ProblemSpec, n_b: usize, seed: u64) -> Result<SampleSet, SamplingError> {
    if n_b == 0 {
        return Err(SamplingError::Empty);
    }
    let kind = problem.kind;
    let dims = kind.n_inputs();
    let pieces = boundary_pieces(kind);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut counts = allocate(n_b, &vec![1.0; pieces.len()], &mut rng);
    if n_b >= 2 && counts[0] == 0 {
        let donor = (1..counts.len()).max_by_key(|&i| counts[i]).unwrap();
        counts[donor] -= 1;
        counts[0] += 1;
    }
    let mut points = Vec::with_capacity(n_b * dims);
    for (&(axis, fixed), &count) in pieces.iter().zip(&counts) {
        for _ in 0..count {
            for k in 0..dims {
                points.push(if k == axis {
                    fixed
                } else if k == dims - 1 {
                    1.0 - rng.random::<f64>()
                } else {
                    rng.random::<f64>()
                });
            }
        }
    }
    Ok(SampleSet::labelled(SetKind::BoundaryInitial, kind, points))
}

/// Latin-hypercube sample of `n` points: every axis is cut into `n` equal
/// strata holding exactly one point each, jittered uniformly inside.
pub fn lhs_collocation(n: usize, bounds: &[(f64, f64)], seed: u64) -> Result<SampleSet, SamplingError> {
    if n == 0 || bounds.is_empty() {
        return Err(SamplingError::Empty);
    }
    let dims = bounds.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = vec![0.0; n * dims];
    let mut strata: Vec<usize> = (0..n).collect();
    for (k, &(lo, hi)) in bounds.iter().enumerate() {
        strata.shuffle(&mut rng);
        for (i, &s) in strata.iter().enumerate() {
            let u = (s as f64 + rng.random::<f64>()) / n as f64;
            points[i * dims + k] = (lo + (hi - lo) * u).min(hi);
        }
    }
    Ok(SampleSet::collocation(dims, points))
}

/// `x + ε·SD(x)·z` with `z ~ N(0, 1)` and SD the population SD of the whole
/// vector.
pub fn add_noise(values: &[f64], epsilon: f64, seed: u64) -> Result<Vec<f64>, SamplingError> {
    noise_with(values, epsilon, &mut ChaCha8Rng::seed_from_u64(seed))
}

fn noise_with(values: &[f64], epsilon: f64, rng: &mut ChaCha8Rng) -> Result<Vec<f64>, SamplingError> {
    if epsilon.is_nan() || epsilon < 0.0 {
        return Err(SamplingError::NegativeNoise(epsilon));
    }
    let scale = epsilon * population_sd(values);
    if scale == 0.0 {
        return Ok(values.to_vec());
    }
    Ok(values
        .iter()
        .map(|&x| {
            let z: f64 = rng.sample(StandardNormal);
            x + scale * z
        })
        .collect())
}

/// Corrupts each value component of a set independently, each with its own SD
/// and its own random stream.
pub fn add_noise_to_set(set: &SampleSet, epsilon: f64, seed: u64) -> Result<SampleSet, SamplingError> {
    let Some(values) = &set.values else {
        return Ok(set.clone());
    };
    let mut out = values.clone();
    for k in 0..set.n_values {
        let column = set.value_column(k).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(k as u64);
        let noisy = noise_with(&column, epsilon, &mut rng)?;
        for (i, v) in noisy.into_iter().enumerate() {
            out[i * set.n_values + k] = v;
        }
    }
    Ok(SampleSet {
        values: Some(out),
        ..set.clone()
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::{exact_diffusivity, Mode};
    use proptest::prelude::{any, prop_assert, prop_assert_eq, prop_assert_ne, proptest};

    fn diffusivity() -> ProblemSpec {
        ProblemSpec::new(ProblemKind::Diffusivity, Mode::Forward)
    }

    fn biot() -> ProblemSpec {
        ProblemSpec::new(ProblemKind::Biot, Mode::Forward)
    }

    fn strata_ok(set: &SampleSet, n: usize) -> bool {
        (0..set.dims).all(|k| {
            let mut hit = vec![0; n];
            for c in set.coord_column(k) {
                hit[((c * n as f64).floor() as usize).min(n - 1)] += 1;
            }
            hit.iter().all(|&h| h == 1)
        })
    }

    #[test]
    fn default_grid_sizes() {
        let g = build_grid(&GridSpec::default_for(ProblemKind::Diffusivity), &diffusivity()).unwrap();
        assert_eq!(g.len(), 256000);
        let (tr, va, te) = split(&g, 100, 1).unwrap();
        assert_eq!((tr.len(), va.len(), te.len()), (100, 127950, 127950));
        assert_eq!(GridSpec::default_for(ProblemKind::Biot).n_points(), 500000);
    }

    #[test]
    fn biot_grid_split_sizes() {
        let g = build_grid(&GridSpec::default_for(ProblemKind::Biot), &biot()).unwrap();
        assert_eq!(g.len(), 500000);
        assert_eq!(g.value(0).unwrap(), &[0.0, 1.0, 1.0]);
        let (_, va, te) = split(&g, 100, 2).unwrap();
        assert_eq!((va.len(), te.len()), (249950, 249950));
    }

    #[test]
    fn trivial_grid_is_the_four_corners() {
        let g = build_grid(&GridSpec::unit(vec![1], 1), &diffusivity()).unwrap();
        assert_eq!(g.points, vec![0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
        assert_eq!(g.value(3).unwrap()[0], 2f64.sin());
        assert!(build_grid(&GridSpec::unit(vec![0], 1), &diffusivity()).is_err());
    }

    #[test]
    fn split_rejects_oversized_train_and_is_deterministic() {
        let g = build_grid(&GridSpec::unit(vec![3], 2), &diffusivity()).unwrap();
        assert!(matches!(split(&g, 13, 0), Err(SamplingError::Size { .. })));
        let a = split(&g, 5, 9).unwrap();
        let b = split(&g, 5, 9).unwrap();
        assert_eq!(a, b);
        // 12 - 5 = 7 leftover points: validation gets 4
        assert_eq!((a.1.len(), a.2.len()), (4, 3));
        assert_ne!(split(&g, 5, 10).unwrap().0, a.0);
    }

    #[test]
    fn boundary_points_lie_on_the_boundary() {
        let set = boundary_initial_points(&diffusivity(), 96, 4).unwrap();
        assert_eq!(set.len(), 96);
        for i in 0..set.len() {
            let p = set.point(i);
            assert!(p[1] == 0.0 || p[0] == 0.0 || p[0] == 1.0);
            assert!((set.value(i).unwrap()[0] - exact_diffusivity(p[0], p[1])).abs() < 1e-15);
        }
        let initial = (0..96).filter(|&i| set.point(i)[1] == 0.0).count();
        assert_eq!(initial, 32);
        assert_eq!(set, boundary_initial_points(&diffusivity(), 96, 4).unwrap());
        assert!(set.in_unit_domain());
    }

    #[test]
    fn biot_boundary_points_and_allocation() {
        let set = boundary_initial_points(&biot(), 97, 5).unwrap();
        assert_eq!(set.len(), 97);
        for i in 0..set.len() {
            let p = set.point(i);
            assert!(p[2] == 0.0 || p[0] == 0.0 || p[0] == 1.0 || p[1] == 0.0 || p[1] == 1.0);
            assert_eq!(set.value(i).unwrap(), &ProblemKind::Biot.exact(p)[..]);
        }
        let two = boundary_initial_points(&biot(), 2, 0).unwrap();
        assert!((0..2).any(|i| two.point(i)[2] == 0.0));
        assert!(boundary_initial_points(&biot(), 0, 0).is_err());
    }

    #[test]
    fn lhs_examples() {
        let s = lhs_collocation(10, &[(0.0, 1.0); 2], 3).unwrap();
        assert!(strata_ok(&s, 10));
        let one = lhs_collocation(1, &[(0.0, 1.0); 2], 3).unwrap();
        assert!(one.len() == 1 && one.in_unit_domain());
        let s = lhs_collocation(160, &[(0.0, 1.0); 2], 7).unwrap();
        assert_eq!(s.len(), 160);
        assert!(strata_ok(&s, 160));
        assert!(s.values.is_none() && s.kind == SetKind::Collocation);
    }

    #[test]
    fn noise_examples() {
        let v = vec![0.1, 0.5, -0.3];
        assert_eq!(add_noise(&v, 0.0, 1).unwrap(), v);
        assert_eq!(add_noise(&[2.0; 5], 0.3, 1).unwrap(), vec![2.0; 5]);
        assert!(add_noise(&v, -0.1, 1).is_err());
    }

    #[test]
    fn noise_has_requested_spread_and_no_bias() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let truth: Vec<f64> = (0..10000).map(|_| (rng.random::<f64>() + rng.random::<f64>()).sin()).collect();
        let eps = 0.05;
        let noisy = add_noise(&truth, eps, 11).unwrap();
        let diff: Vec<f64> = noisy.iter().zip(&truth).map(|(a, b)| a - b).collect();
        let target = eps * population_sd(&truth);
        assert!((population_sd(&diff) - target).abs() < 0.05 * target);
        let mean = diff.iter().sum::<f64>() / diff.len() as f64;
        assert!(mean.abs() < 3.0 * target / 100.0);
    }

    #[test]
    fn set_noise_is_per_component() {
        let g = build_grid(&GridSpec::unit(vec![9, 9], 4), &biot()).unwrap();
        let noisy = add_noise_to_set(&g, 0.1, 3).unwrap();
        assert_eq!(noisy.points, g.points);
        for k in 0..3 {
            let t = g.value_column(k).unwrap();
            let n = noisy.value_column(k).unwrap();
            let d: Vec<f64> = n.iter().zip(&t).map(|(a, b)| a - b).collect();
            let ratio = population_sd(&d) / (0.1 * population_sd(&t));
            assert!((ratio - 1.0).abs() < 0.15, "component {k}: {ratio}");
        }
    }

    #[test]
    fn csv_round_trip() {
        let g = build_grid(&GridSpec::unit(vec![2, 2], 1), &biot()).unwrap();
        let text = g.to_csv(&["x", "y", "t"], &["u", "v", "p"]);
        assert!(text.starts_with("x,y,t,u,v,p\n"));
        assert_eq!(SampleSet::from_csv(&text, SetKind::Measurement, 3).unwrap(), g);
        let c = lhs_collocation(5, &[(0.0, 1.0); 2], 1).unwrap();
        let text = c.to_csv(&["x", "t"], &["p"]);
        assert_eq!(SampleSet::from_csv(&text, SetKind::Collocation, 2).unwrap(), c);
        assert!(SampleSet::from_csv("x,t\n1,zz\n", SetKind::Collocation, 2).is_err());
    }

    proptest! {
        #[test]
        fn split_is_disjoint_and_exhaustive(nx in 1usize..12, nt in 1usize..6, frac in 0.0f64..=1.0, seed in any::<u64>()) {
            let g = build_grid(&GridSpec::unit(vec![nx], nt), &diffusivity()).unwrap();
            let n_train = (frac * g.len() as f64) as usize;
            let (tr, va, te) = split(&g, n_train, seed).unwrap();
            prop_assert_eq!(tr.len(), n_train);
            prop_assert!(va.len() == te.len() || va.len() == te.len() + 1);
            let mut all: Vec<(u64, u64)> = [&tr, &va, &te]
                .iter()
                .flat_map(|s| (0..s.len()).map(|i| (s.point(i)[0].to_bits(), s.point(i)[1].to_bits())).collect::<Vec<_>>())
                .collect();
            all.sort_unstable();
            let mut want: Vec<(u64, u64)> = (0..g.len()).map(|i| (g.point(i)[0].to_bits(), g.point(i)[1].to_bits())).collect();
            want.sort_unstable();
            prop_assert_eq!(all, want);
        }

        #[test]
        fn lhs_is_stratified(n in 1usize..200, d in 1usize..4, seed in any::<u64>()) {
            let s = lhs_collocation(n, &vec![(0.0, 1.0); d], seed).unwrap();
            prop_assert_eq!(s.len(), n);
            prop_assert!(s.in_unit_domain());
            prop_assert!(strata_ok(&s, n));
        }

        #[test]
        fn boundary_sets_have_requested_size(n in 1usize..300, seed in any::<u64>()) {
            let s = boundary_initial_points(&biot(), n, seed).unwrap();
            prop_assert_eq!(s.len(), n);
            prop_assert!(s.in_unit_domain());
            if n >= 2 {
                prop_assert!((0..n).any(|i| s.point(i)[2] == 0.0));
            }
        }

        #[test]
        fn distinct_seeds_give_distinct_draws(seed in any::<u64>()) {
            let a = lhs_collocation(20, &[(0.0, 1.0); 2], seed).unwrap();
            let b = lhs_collocation(20, &[(0.0, 1.0); 2], seed.wrapping_add(1)).unwrap();
            prop_assert_ne!(a, b);
        }
    }
}
