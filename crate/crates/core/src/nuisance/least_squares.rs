use nalgebra::{DMatrix, DVector};

/// Ordinary least squares with an intercept. Returns `[b, beta_1..beta_d]`.
pub(crate) fn fit(rows: &[&[f64]], y: &[f64]) -> std::result::Result<Vec<f64>, String> {
    let n = rows.len();
    let d = rows.first().map_or(0, |r| r.len());
    let p = d + 1;
    if n < p {
        return Err(format!("{n} observations for {p} coefficients"));
    }
    let design = DMatrix::from_fn(n, p, |i, j| if j == 0 { 1.0 } else { rows[i][j - 1] });
    let target = DVector::from_column_slice(y);
    let svd = design.svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if !(smin > 1e-10 * smax) {
        return Err(format!("rank-deficient design (singular values {smin:e} .. {smax:e})"));
    }
    let coef = svd.solve(&target, 0.0)?;
    Ok(coef.iter().copied().collect())
}

pub(crate) fn predict(coef: &[f64], x: &[f64]) -> f64 {
    coef[0] + coef[1..].iter().zip(x).map(|(b, v)| b * v).sum::<f64>()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recovers_a_line() {
        let xs: Vec<[f64; 1]> = (0..10).map(|i| [i as f64]).collect();
        let rows: Vec<&[f64]> = xs.iter().map(|r| &r[..]).collect();
        let y: Vec<f64> = xs.iter().map(|r| 1.0 + 2.0 * r[0]).collect();
        let c = fit(&rows, &y).unwrap();
        assert!((c[0] - 1.0).abs() < 1e-10 && (c[1] - 2.0).abs() < 1e-10);
        assert!((predict(&c, &[3.0]) - 7.0).abs() < 1e-10);
    }

    #[test]
    fn rejects_collinear_and_short_designs() {
        let xs = [[1.0, 2.0], [2.0, 4.0], [3.0, 6.0], [4.0, 8.0]];
        let rows: Vec<&[f64]> = xs.iter().map(|r| &r[..]).collect();
        assert!(fit(&rows, &[1.0, 2.0, 3.0, 4.0]).is_err());
        assert!(fit(&rows[..2], &[1.0, 2.0]).is_err());
    }
}
