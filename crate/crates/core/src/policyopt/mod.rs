//! Learning deterministic linear policies by maximizing `sum_i Gamma_{i, pi(x_i)}`.
//!
//! [`solve_binary_linear`] searches halfplanes `cos(theta) x1 + sin(theta) x2 > b`
//! over a grid of angles and every distinct intercept. [`solve_multi_linear`]
//! runs multi-start coordinate ascent over argmax-of-affine policies with an
//! exact line search per coordinate, then on small problems a branch and
//! bound that proves the result optimal.
//!
//! Objectives are compared with a tolerance proportional to the total score
//! range, and near-ties go to the earlier candidate. This keeps the returned
//! parameters unchanged when the scores are rescaled or shifted per record.

mod binary;
mod exact;
mod multi;

pub use binary::{solve_binary_linear, solve_binary_linear_many, BinarySolution, GridSearchConfig};
pub use multi::{solve_multi_linear, MultiSearchConfig, MultiSolution};

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::scores::ScoreMatrix;

/// Relative tolerance for treating two objective values as equal.
pub const TIE_TOLERANCE: f64 = 1e-9;

/// Absolute tie tolerance for `scores`: [`TIE_TOLERANCE`] times the summed
/// per-record score range.
pub(crate) fn tie_tolerance(scores: &ScoreMatrix) -> f64 {
    let total: f64 = scores
        .gamma()
        .outer_iter()
        .map(|r| {
            let (lo, hi) = r.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            });
            hi - lo
        })
        .sum();
    TIE_TOLERANCE * total
}

pub(crate) fn check_inputs(scores: &ScoreMatrix, xs: &Array2<f64>) -> Result<()> {
    if scores.is_empty() || xs.nrows() == 0 {
        return Err(Error::Input("no records to learn from".into()));
    }
    if scores.len() != xs.nrows() {
        return Err(Error::Contract(format!(
            "{} score rows for {} covariate rows",
            scores.len(),
            xs.nrows()
        )));
    }
    if let Some(v) = xs.iter().find(|v| !v.is_finite()) {
        return Err(Error::Input(format!("non-finite covariate {v}")));
    }
    Ok(())
}
