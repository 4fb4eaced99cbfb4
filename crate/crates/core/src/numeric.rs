//! Small numeric helpers shared across modules.

use num_traits::Float;

const PAIRWISE_BLOCK: usize = 32;

/// Pairwise (cascade) summation: error grows as O(log n) instead of O(n).
pub fn pairwise_sum<F: Float>(xs: &[F]) -> F {
    if xs.len() <= PAIRWISE_BLOCK {
        return xs.iter().fold(F::zero(), |acc, &x| acc + x);
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

/// Pairwise mean; `None` for an empty slice.
pub fn pairwise_mean<F: Float>(xs: &[F]) -> Option<F> {
    if xs.is_empty() {
        None
    } else {
        Some(pairwise_sum(xs) / F::from(xs.len()).unwrap())
    }
}
