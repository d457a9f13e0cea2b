//! Optimal retargeting weights and reference policies.
//!
//! Everything here works on a [`NuisanceTable`], i.e. the nuisance functions
//! evaluated on a finite covariate sample. Expectations over `X` become sample
//! means over the rows and weights are normalized to have sample mean one.
//!
//! With `zeta(a|x) = sigma^2(a|x) / phi(a|x)`, the policy-uniform efficiency
//! objective is
//!
//! ```text
//! Omega(w, rho) = E[ w(X)^2 ( sum_a zeta rho^2 + max_a zeta (1 - 2 rho) ) ]
//! ```
//!
//! For fixed `x` the bracket is a convex function of `rho(.|x)`. Its minimizer
//! is `rho0(a|x) = (1 - y/zeta_a)/2` on the active set of actions, zero
//! elsewhere, where `y = (k - 2) / sum_{a active} 1/zeta_a` and `k` is the size
//! of the active set. All actions are active unless one action's `1/zeta` holds
//! more than a `1/(m-2)` share of the total, which cannot happen for `m <= 3`.
//! The minimum value is `kappa(x)/4` with
//! `kappa = sum_{active} zeta - (k - 2) y`, and `w0 ∝ 1/kappa`.

use std::io::Write;

use ndarray::{Array2, ArrayView1};

use crate::error::{Error, Result};
use crate::model::{NuisanceTable, PROPENSITY_FLOOR};

/// Counters surfaced alongside a [`Retargeting`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Diagnostics {
    /// Propensities raised to [`PROPENSITY_FLOOR`] before inversion.
    pub clipped_propensities: usize,
    /// Points where the all-active closed form for `rho0` went negative and the
    /// reduced active set was used instead.
    pub active_set_corrections: usize,
}

/// Weights, reference policy and the resulting `Omega` on a covariate sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Retargeting {
    /// `w(x_i)`, sample mean one.
    pub weights: Vec<f64>,
    /// `rho(.|x_i)`, one row per point.
    pub reference: Array2<f64>,
    pub kappa: Vec<f64>,
    pub xi: Vec<f64>,
    /// `Omega(w, rho)` as a sample mean.
    pub omega: f64,
    pub diagnostics: Diagnostics,
}

/// `zeta = sigma^2 / max(phi, floor)`; zero or negative propensities are an error.
pub fn variance_ratio(table: &NuisanceTable) -> Result<(Array2<f64>, usize)> {
    let phi = table.propensity();
    let var = table.outcome_variance();
    let mut clipped = 0;
    let mut zeta = Array2::zeros(phi.dim());
    for ((i, a), z) in zeta.indexed_iter_mut() {
        let p = phi[[i, a]];
        if !(p > 0.0) {
            return Err(Error::Singularity {
                index: i,
                detail: format!("phi(action {} | x) = {p}", a + 1),
            });
        }
        let p = if p < PROPENSITY_FLOOR {
            clipped += 1;
            PROPENSITY_FLOOR
        } else {
            p
        };
        *z = var[[i, a]] / p;
    }
    if clipped > 0 {
        log::warn!("{clipped} propensities clipped to {PROPENSITY_FLOOR}");
    }
    Ok((zeta, clipped))
}

/// Sample-mean evaluation of `Omega(w, rho)` in its closed (max) form.
pub fn omega_closed_form(table: &NuisanceTable, weights: &[f64], reference: &Array2<f64>) -> Result<f64> {
    let (zeta, _) = variance_ratio(table)?;
    omega_from_ratio(&zeta, weights, reference)
}

fn omega_from_ratio(zeta: &Array2<f64>, weights: &[f64], reference: &Array2<f64>) -> Result<f64> {
    let n = zeta.nrows();
    if weights.len() != n || reference.dim() != zeta.dim() {
        return Err(Error::Input(format!(
            "omega: {} weights and {:?} reference rows for {:?} table",
            weights.len(),
            reference.dim(),
            zeta.dim()
        )));
    }
    let mut total = 0.0;
    for i in 0..n {
        total += weights[i] * weights[i] * pointwise_bound(zeta.row(i), reference.row(i));
    }
    Ok(total / n as f64)
}

/// `sum_a zeta rho^2 + max_a zeta (1 - 2 rho)` at one point.
pub fn pointwise_bound(zeta: ArrayView1<'_, f64>, rho: ArrayView1<'_, f64>) -> f64 {
    let mut quad = 0.0;
    let mut worst = f64::NEG_INFINITY;
    for (z, r) in zeta.iter().zip(rho) {
        quad += z * r * r;
        worst = worst.max(z * (1.0 - 2.0 * r));
    }
    quad + worst
}

/// Minimizer of [`pointwise_bound`] over `rho` at one point.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferencePoint {
    pub rho: Vec<f64>,
    /// Multiplier `y` of the epigraph constraint; `(m-2)/sum 1/zeta` when all
    /// actions are active.
    pub xi: f64,
    /// Four times the minimum value.
    pub kappa: f64,
    pub corrected: bool,
}

/// Exact minimizer for strictly positive `zeta` and `m >= 2`.
pub fn reference_point(zeta: &[f64]) -> ReferencePoint {
    let m = zeta.len();
    debug_assert!(m >= 2 && zeta.iter().all(|z| *z > 0.0));
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| zeta[b].total_cmp(&zeta[a]).then(a.cmp(&b)));

    // Largest active set whose KKT point is primal and dual feasible.
    let mut inv_sum: f64 = zeta.iter().map(|z| 1.0 / z).sum();
    let mut chosen = None;
    for k in (2..=m).rev() {
        if k < m {
            inv_sum -= 1.0 / zeta[order[k]];
        }
        let y = (k as f64 - 2.0) / inv_sum;
        let inside_ok = zeta[order[k - 1]] >= y;
        let outside_ok = k == m || zeta[order[k]] <= y;
        if inside_ok && outside_ok {
            chosen = Some((k, y));
            break;
        }
    }
    // Unreachable for positive zeta; keep the all-active point as a fallback.
    let (k, y) = chosen.unwrap_or_else(|| {
        let s: f64 = zeta.iter().map(|z| 1.0 / z).sum();
        (m, (m as f64 - 2.0) / s)
    });

    let mut rho = vec![0.0; m];
    let mut active_zeta = 0.0;
    for &a in &order[..k] {
        rho[a] = 0.5 * (1.0 - y / zeta[a]);
        active_zeta += zeta[a];
    }
    ReferencePoint {
        rho,
        xi: y,
        kappa: active_zeta - (k as f64 - 2.0) * y,
        corrected: k < m,
    }
}

/// Binary-action optimum: `rho0 = (1/2, 1/2)` and
/// `w0 ∝ (sigma^2(+)/(1+phi) + sigma^2(-)/(1-phi))^-1` with `phi = 2 phi(+) - 1`.
pub fn optimal_binary(table: &NuisanceTable) -> Result<Retargeting> {
    if table.n_actions() != 2 {
        return Err(Error::Contract(format!(
            "optimal_binary needs 2 actions, got {}",
            table.n_actions()
        )));
    }
    let (zeta, clipped) = variance_ratio(table)?;
    let n = table.len();
    // 1 + phi(x) = 2 phi(+|x) and 1 - phi(x) = 2 phi(-|x).
    let bracket: Vec<f64> = zeta.outer_iter().map(|z| 0.5 * (z[0] + z[1])).collect();
    let inv: Vec<f64> = bracket.iter().map(|b| 1.0 / b).collect();
    let mean_inv = inv.iter().sum::<f64>() / n as f64;
    let weights = normalize_mean_one(inv)?;
    Ok(Retargeting {
        weights,
        reference: Array2::from_elem((n, 2), 0.5),
        kappa: bracket.iter().map(|b| 2.0 * b).collect(),
        xi: vec![0.0; n],
        omega: 0.5 / mean_inv,
        diagnostics: Diagnostics {
            clipped_propensities: clipped,
            active_set_corrections: 0,
        },
    })
}

/// Multi-action optimum: `w0 ∝ 1/kappa` with the exact reference policy.
pub fn optimal_multi(table: &NuisanceTable) -> Result<Retargeting> {
    padded(table, 0.0)
}

/// Bias-regularized weights `w ∝ (kappa + 4 lambda^2)^-1`, reference fixed at `rho0`.
pub fn bias_regularized(table: &NuisanceTable, lambda: f64) -> Result<Retargeting> {
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::Input(format!("lambda must be finite and >= 0, got {lambda}")));
    }
    padded(table, 4.0 * lambda * lambda)
}

fn padded(table: &NuisanceTable, pad: f64) -> Result<Retargeting> {
    let m = table.n_actions();
    if m < 2 {
        return Err(Error::Contract("retargeting needs at least 2 actions".into()));
    }
    let (zeta, clipped) = variance_ratio(table)?;
    let n = table.len();
    let mut reference = Array2::zeros((n, m));
    let mut kappa = Vec::with_capacity(n);
    let mut xi = Vec::with_capacity(n);
    let mut corrections = 0;
    for (i, z) in zeta.outer_iter().enumerate() {
        let z = z.as_slice().expect("standard layout");
        if z.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::Singularity {
                index: i,
                detail: "zero outcome variance makes the reference policy undefined".into(),
            });
        }
        let pt = reference_point(z);
        if pt.corrected {
            corrections += 1;
        }
        for (dst, src) in reference.row_mut(i).iter_mut().zip(&pt.rho) {
            *dst = *src;
        }
        kappa.push(pt.kappa);
        xi.push(pt.xi);
    }
    if corrections > 0 {
        log::warn!("{corrections} points needed a reduced active set for the reference policy");
    }
    let inv: Vec<f64> = kappa.iter().map(|k| 1.0 / (k + pad)).collect();
    let mean_inv = inv.iter().sum::<f64>() / n as f64;
    let weights = normalize_mean_one(inv)?;
    let omega = if pad == 0.0 {
        0.25 / mean_inv
    } else {
        let s: f64 = weights.iter().zip(&kappa).map(|(w, k)| w * w * k).sum();
        0.25 * s / n as f64
    };
    Ok(Retargeting {
        weights,
        reference,
        kappa,
        xi,
        omega,
        diagnostics: Diagnostics {
            clipped_propensities: clipped,
            active_set_corrections: corrections,
        },
    })
}

/// `sqrt(mean (w - 1)^2)`: worst-case bias of `w`-weighted values under a unit
/// `L2` bound on the largest absolute outcome mean.
pub fn worst_case_bias(weights: &[f64]) -> Result<f64> {
    if weights.is_empty() {
        return Err(Error::Input("no weights".into()));
    }
    let s: f64 = weights.iter().map(|w| (w - 1.0) * (w - 1.0)).sum();
    Ok((s / weights.len() as f64).sqrt())
}

/// Scales positive values to sample mean one.
pub fn normalize_mean_one(mut w: Vec<f64>) -> Result<Vec<f64>> {
    if w.is_empty() {
        return Err(Error::Input("no weights".into()));
    }
    if let Some(i) = w.iter().position(|v| !(*v > 0.0) || !v.is_finite()) {
        return Err(Error::Singularity {
            index: i,
            detail: format!("weight {} is not a positive number", w[i]),
        });
    }
    let mean = w.iter().sum::<f64>() / w.len() as f64;
    for v in &mut w {
        *v /= mean;
    }
    Ok(w)
}

/// Writes `x1..xd, w, rho_1..rho_m, kappa, xi` per point and a trailing
/// `# omega=.. worst_case_bias=..` summary line.
pub fn write_diagnostics<W: Write>(xs: &Array2<f64>, rt: &Retargeting, mut out: W) -> Result<()> {
    let n = rt.weights.len();
    if xs.nrows() != n {
        return Err(Error::Input(format!("{} points for {} weights", xs.nrows(), n)));
    }
    let m = rt.reference.ncols();
    let mut header: Vec<String> = (1..=xs.ncols()).map(|j| format!("x{j}")).collect();
    header.push("w".into());
    header.extend((1..=m).map(|a| format!("rho_{a}")));
    header.push("kappa".into());
    header.push("xi".into());
    writeln!(out, "{}", header.join(","))?;
    for i in 0..n {
        let mut row: Vec<String> = xs.row(i).iter().map(|v| v.to_string()).collect();
        row.push(rt.weights[i].to_string());
        row.extend(rt.reference.row(i).iter().map(|v| v.to_string()));
        row.push(rt.kappa[i].to_string());
        row.push(rt.xi[i].to_string());
        writeln!(out, "{}", row.join(","))?;
    }
    writeln!(
        out,
        "# omega={} worst_case_bias={}",
        rt.omega,
        worst_case_bias(&rt.weights)?
    )?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn table(phi: Array2<f64>) -> NuisanceTable {
        let mu = Array2::zeros(phi.dim());
        NuisanceTable::homoskedastic(phi, mu).unwrap()
    }

    #[test]
    fn single_action_one_hot_reference_has_zero_omega() {
        let t = table(array![[1.0], [1.0]]);
        let rho = array![[1.0], [1.0]];
        assert_eq!(omega_closed_form(&t, &[1.0, 1.0], &rho).unwrap(), 0.0);
    }

    #[test]
    fn balanced_binary_point() {
        let t = table(array![[0.5, 0.5]]);
        let rho = array![[0.5, 0.5]];
        assert_eq!(omega_closed_form(&t, &[1.0], &rho).unwrap(), 1.0);
    }

    #[test]
    fn zero_propensity_is_singular() {
        let t = table(array![[0.5, 0.5], [0.0, 1.0]]);
        match omega_closed_form(&t, &[1.0, 1.0], &Array2::from_elem((2, 2), 0.5)) {
            Err(Error::Singularity { index, .. }) => assert_eq!(index, 1),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn tiny_propensities_are_clipped_and_counted() {
        let t = table(array![[1e-9, 1.0 - 1e-9]]);
        let rt = optimal_binary(&t).unwrap();
        assert_eq!(rt.diagnostics.clipped_propensities, 1);
        assert!(rt.omega.is_finite());
    }

    #[test]
    fn perfect_overlap_binary() {
        let t = table(Array2::from_elem((4, 2), 0.5));
        let rt = optimal_binary(&t).unwrap();
        assert!(rt.weights.iter().all(|w| *w == 1.0));
        assert_eq!(rt.omega, 1.0);
        assert!(rt.reference.iter().all(|r| *r == 0.5));
    }

    #[test]
    fn binary_homoskedastic_weight_ratio() {
        let t = table(array![[0.1, 0.9], [0.5, 0.5]]);
        let rt = optimal_binary(&t).unwrap();
        assert!((rt.weights[0] / rt.weights[1] - 0.36).abs() < 1e-14);
    }

    #[test]
    fn binary_requires_two_actions() {
        let t = table(array![[0.2, 0.3, 0.5]]);
        assert!(matches!(optimal_binary(&t), Err(Error::Contract(_))));
    }

    #[test]
    fn uniform_three_action_point() {
        let t = table(array![[1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0]]);
        let rt = optimal_multi(&t).unwrap();
        for r in rt.reference.row(0) {
            assert!((r - 1.0 / 3.0).abs() < 1e-15);
        }
        assert!((rt.xi[0] - 1.0).abs() < 1e-14);
        assert!((rt.kappa[0] - 8.0).abs() < 1e-13);
        assert!((rt.omega - 2.0).abs() < 1e-13);
    }

    #[test]
    fn two_action_multi_reduces_to_binary() {
        let t = table(array![[0.2, 0.8], [0.6, 0.4], [0.5, 0.5]]);
        let b = optimal_binary(&t).unwrap();
        let m = optimal_multi(&t).unwrap();
        assert!(m.xi.iter().all(|x| *x == 0.0));
        assert!(m.reference.iter().all(|r| *r == 0.5));
        for (x, y) in b.weights.iter().zip(&m.weights) {
            assert!((x - y).abs() < 1e-12);
        }
        assert!((b.omega - m.omega).abs() < 1e-12);
    }

    #[test]
    fn reduced_active_set_when_one_action_dominates() {
        // 1/zeta = (1, .01, .01, .01): the all-active formula would give rho_1 < 0.
        let pt = reference_point(&[1.0, 100.0, 100.0, 100.0]);
        assert!(pt.corrected);
        assert_eq!(pt.rho[0], 0.0);
        for r in &pt.rho[1..] {
            assert!((r - 1.0 / 3.0).abs() < 1e-12);
        }
        let f = pointwise_bound(array![1.0, 100.0, 100.0, 100.0].view(), ndarray::aview1(&pt.rho));
        assert!((f - pt.kappa / 4.0).abs() < 1e-12);
    }

    #[test]
    fn padding_limits() {
        let t = table(array![[0.1, 0.9], [0.3, 0.7], [0.5, 0.5]]);
        let base = optimal_multi(&t).unwrap();
        let zero = bias_regularized(&t, 0.0).unwrap();
        assert_eq!(base.weights, zero.weights);
        let huge = bias_regularized(&t, 1e6).unwrap();
        assert!(huge.weights.iter().all(|w| (w - 1.0).abs() < 1e-6));
        assert!(bias_regularized(&t, -1.0).is_err());
    }

    #[test]
    fn worst_case_bias_values() {
        assert_eq!(worst_case_bias(&[1.0, 1.0, 1.0]).unwrap(), 0.0);
        assert_eq!(worst_case_bias(&[0.5, 1.5]).unwrap(), 0.5);
    }

    #[test]
    fn diagnostics_layout() {
        let t = table(array![[0.5, 0.5], [0.5, 0.5]]);
        let rt = optimal_binary(&t).unwrap();
        let mut buf = Vec::new();
        write_diagnostics(&array![[0.0], [1.0]], &rt, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text,
            "x1,w,rho_1,rho_2,kappa,xi\n0,1,0.5,0.5,4,0\n1,1,0.5,0.5,4,0\n# omega=1 worst_case_bias=0\n"
        );
    }
}
