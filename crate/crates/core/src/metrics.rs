//! Error metrics and cross-realization statistics.

use num_traits::Float;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numeric::{pairwise_mean, pairwise_sum};

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("reference vector has zero norm")]
    ZeroReference,
    #[error("length mismatch: {0} vs {1}")]
    Length(usize, usize),
    #[error("true value of component {0} is zero")]
    ZeroTrueComponent(usize),
    #[error("no values to aggregate")]
    Empty,
}

/// Mean, population SD and extremes over a set of realizations.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RealizationStats {
    pub mean: f64,
    pub sd: f64,
    pub min: f64,
    pub max: f64,
    pub count: usize,
}

/// `‖predicted - exact‖₂ / ‖exact‖₂`.
pub fn relative_l2<F: Float>(predicted: &[F], exact: &[F]) -> Result<F, MetricError> {
    if predicted.len() != exact.len() {
        return Err(MetricError::Length(predicted.len(), exact.len()));
    }
    let diff: Vec<F> = predicted.iter().zip(exact).map(|(&p, &e)| (p - e) * (p - e)).collect();
    let norm: Vec<F> = exact.iter().map(|&e| e * e).collect();
    let den = pairwise_sum(&norm);
    if den == F::zero() {
        return Err(MetricError::ZeroReference);
    }
    Ok((pairwise_sum(&diff) / den).sqrt())
}

/// Sum of per-component relative L² errors, components given column-wise.
pub fn sum_relative_l2<F: Float>(predicted: &[Vec<F>], exact: &[Vec<F>]) -> Result<F, MetricError> {
    if predicted.len() != exact.len() {
        return Err(MetricError::Length(predicted.len(), exact.len()));
    }
    predicted
        .iter()
        .zip(exact)
        .try_fold(F::zero(), |acc, (p, e)| Ok(acc + relative_l2(p, e)?))
}

/// `100·|est - true| / |true|` per component.
pub fn percent_error(estimate: &[f64], truth: &[f64]) -> Result<Vec<f64>, MetricError> {
    if estimate.len() != truth.len() {
        return Err(MetricError::Length(estimate.len(), truth.len()));
    }
    estimate
        .iter()
        .zip(truth)
        .enumerate()
        .map(|(i, (&e, &t))| {
            if t == 0.0 {
                Err(MetricError::ZeroTrueComponent(i))
            } else {
                Ok(100.0 * (e - t).abs() / t.abs())
            }
        })
        .collect()
}

/// Population standard deviation; zero for an empty slice.
pub fn population_sd<F: Float>(values: &[F]) -> F {
    let Some(mean) = pairwise_mean(values) else {
        return F::zero();
    };
    if values.iter().all(|&v| v == values[0]) {
        return F::zero();
    }
    let sq: Vec<F> = values.iter().map(|&v| (v - mean) * (v - mean)).collect();
    pairwise_mean(&sq).unwrap_or(F::zero()).sqrt()
}

pub fn aggregate(values: &[f64]) -> Result<RealizationStats, MetricError> {
    let mean = pairwise_mean(values).ok_or(MetricError::Empty)?;
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(RealizationStats {
        // rounding can push the mean of identical values a hair outside [min, max]
        mean: mean.clamp(min, max),
        sd: population_sd(values),
        min,
        max,
        count: values.len(),
    })
}

/// Median of a non-empty slice; mean of the middle pair for even lengths.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 { v[m] } else { 0.5 * (v[m - 1] + v[m]) })
}
