//! Oracle policy value and regret, given the true outcome means.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::model::OutcomeModel;
use crate::policy::Policy;

/// `(sum_i w_i sum_a pi(a|x_i) mu(a|x_i)) / sum_i w_i`; unit weights by default.
pub fn policy_value(
    policy: &dyn Policy,
    mu: &dyn OutcomeModel,
    xs: &Array2<f64>,
    weights: Option<&[f64]>,
) -> Result<f64> {
    check_dims(policy, mu.n_actions(), xs)?;
    policy_value_tabulated(policy, xs, &mu.tabulate_mean(xs), weights)
}

/// Same as [`policy_value`] with `mu` already evaluated at the rows of `xs`.
pub fn policy_value_tabulated(
    policy: &dyn Policy,
    xs: &Array2<f64>,
    mu: &Array2<f64>,
    weights: Option<&[f64]>,
) -> Result<f64> {
    check_dims(policy, mu.ncols(), xs)?;
    if mu.nrows() != xs.nrows() {
        return Err(Error::Input(format!(
            "{} outcome rows for {} test points",
            mu.nrows(),
            xs.nrows()
        )));
    }
    if let Some(w) = weights {
        if w.len() != xs.nrows() {
            return Err(Error::Input(format!("{} weights for {} points", w.len(), xs.nrows())));
        }
        if w.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(Error::Input("weights must be positive".into()));
        }
    }
    let m = mu.ncols();
    let mut p = vec![0.0; m];
    let mut x = vec![0.0; xs.ncols()];
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..xs.nrows() {
        copy_row(xs, i, &mut x);
        policy.probs_into(&x, &mut p);
        let v: f64 = p.iter().zip(mu.row(i)).map(|(pa, ma)| pa * ma).sum();
        let wi = weights.map_or(1.0, |w| w[i]);
        num += wi * v;
        den += wi;
    }
    Ok(num / den)
}

/// `(1/n) sum_i (max_a mu(a|x_i) - sum_a pi(a|x_i) mu(a|x_i))`.
pub fn regret(policy: &dyn Policy, mu: &dyn OutcomeModel, xs: &Array2<f64>) -> Result<f64> {
    check_dims(policy, mu.n_actions(), xs)?;
    regret_tabulated(policy, xs, &mu.tabulate_mean(xs))
}

pub fn regret_tabulated(policy: &dyn Policy, xs: &Array2<f64>, mu: &Array2<f64>) -> Result<f64> {
    check_dims(policy, mu.ncols(), xs)?;
    if mu.nrows() != xs.nrows() {
        return Err(Error::Input("outcome table does not match test points".into()));
    }
    let mut p = vec![0.0; mu.ncols()];
    let mut x = vec![0.0; xs.ncols()];
    let mut total = 0.0;
    for i in 0..xs.nrows() {
        copy_row(xs, i, &mut x);
        policy.probs_into(&x, &mut p);
        let row = mu.row(i);
        let best = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let got: f64 = p.iter().zip(row).map(|(pa, ma)| pa * ma).sum();
        total += best - got;
    }
    Ok(total / xs.nrows() as f64)
}

fn check_dims(policy: &dyn Policy, m: usize, xs: &Array2<f64>) -> Result<()> {
    if xs.nrows() == 0 {
        return Err(Error::Input("no test points".into()));
    }
    if policy.n_actions() != m {
        return Err(Error::Input(format!(
            "policy has {} actions, outcome model {}",
            policy.n_actions(),
            m
        )));
    }
    Ok(())
}

fn copy_row(xs: &Array2<f64>, i: usize, out: &mut [f64]) {
    for (dst, src) in out.iter_mut().zip(xs.row(i)) {
        *dst = *src;
    }
}
