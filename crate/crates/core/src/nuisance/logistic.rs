//! Multinomial logistic regression by iteratively reweighted least squares
//! (Newton's method), class 0 as the reference.

use nalgebra::{DMatrix, DVector};

pub(crate) const MAX_ITER: usize = 100;
pub(crate) const TOL: f64 = 1e-8;
const RIDGE: f64 = 1e-10;

#[derive(Debug, Clone)]
pub(crate) struct Multinomial {
    m: usize,
    /// `(m-1) x (d+1)` row-major, row `k` for class `k+1`.
    coef: Vec<f64>,
}

impl Multinomial {
    pub(crate) fn fit(rows: &[&[f64]], labels: &[usize], m: usize) -> Self {
        let d = rows.first().map_or(0, |r| r.len());
        let p = d + 1;
        let k = m.saturating_sub(1);
        let mut model = Self {
            m,
            coef: vec![0.0; k * p],
        };
        if k == 0 {
            return model;
        }
        let dim = k * p;
        let mut probs = vec![0.0; m];
        let mut ll = model.log_likelihood(rows, labels);
        for _ in 0..MAX_ITER {
            let mut grad = DVector::<f64>::zeros(dim);
            let mut hess = DMatrix::<f64>::zeros(dim, dim);
            for (x, &y) in rows.iter().zip(labels) {
                model.probs_into(x, &mut probs);
                for c in 0..k {
                    let resid = f64::from(u8::from(y == c + 1)) - probs[c + 1];
                    for j in 0..p {
                        grad[c * p + j] += feature(x, j) * resid;
                    }
                    for c2 in 0..k {
                        let w = probs[c + 1] * (f64::from(u8::from(c == c2)) - probs[c2 + 1]);
                        if w == 0.0 {
                            continue;
                        }
                        for j in 0..p {
                            let fj = feature(x, j) * w;
                            for j2 in 0..p {
                                hess[(c * p + j, c2 * p + j2)] += fj * feature(x, j2);
                            }
                        }
                    }
                }
            }
            let scale = (0..dim).map(|i| hess[(i, i)]).fold(0.0, f64::max).max(1.0);
            for i in 0..dim {
                hess[(i, i)] += RIDGE * scale;
            }
            let Some(chol) = hess.cholesky() else { break };
            let step = chol.solve(&grad);
            if step.iter().any(|v| !v.is_finite()) {
                break;
            }
            // Halve until the likelihood does not decrease.
            let old = model.coef.clone();
            let mut t = 1.0;
            let mut accepted = false;
            for _ in 0..30 {
                for (c, s) in model.coef.iter_mut().zip(old.iter().zip(step.iter())) {
                    *c = s.0 + t * s.1;
                }
                let new_ll = model.log_likelihood(rows, labels);
                if new_ll >= ll - 1e-12 * ll.abs().max(1.0) {
                    ll = new_ll;
                    accepted = true;
                    break;
                }
                t *= 0.5;
            }
            if !accepted {
                model.coef = old;
                break;
            }
            let change = step.iter().map(|v| (t * v).abs()).fold(0.0, f64::max);
            if change < TOL {
                break;
            }
        }
        model
    }

    pub(crate) fn probs_into(&self, x: &[f64], out: &mut [f64]) {
        let p = x.len() + 1;
        out[0] = 0.0;
        for c in 1..self.m {
            let row = &self.coef[(c - 1) * p..c * p];
            out[c] = row[0] + row[1..].iter().zip(x).map(|(b, v)| b * v).sum::<f64>();
        }
        let top = out.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut s = 0.0;
        for v in out.iter_mut() {
            *v = (*v - top).exp();
            s += *v;
        }
        for v in out.iter_mut() {
            *v /= s;
        }
    }

    fn log_likelihood(&self, rows: &[&[f64]], labels: &[usize]) -> f64 {
        let mut probs = vec![0.0; self.m];
        rows.iter()
            .zip(labels)
            .map(|(x, &y)| {
                self.probs_into(x, &mut probs);
                probs[y].max(f64::MIN_POSITIVE).ln()
            })
            .sum()
    }
}

fn feature(x: &[f64], j: usize) -> f64 {
    if j == 0 {
        1.0
    } else {
        x[j - 1]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn recovers_binary_logit() {
        let mut rng = crate::seed::stream(3);
        let xs: Vec<[f64; 1]> = (0..4000).map(|_| [rng.random_range(-2.0..2.0)]).collect();
        let labels: Vec<usize> = xs
            .iter()
            .map(|x| {
                let p = 1.0 / (1.0 + (-(0.5 + 1.5 * x[0])).exp());
                usize::from(rng.random::<f64>() < p)
            })
            .collect();
        let rows: Vec<&[f64]> = xs.iter().map(|r| &r[..]).collect();
        let fit = Multinomial::fit(&rows, &labels, 2);
        assert!((fit.coef[0] - 0.5).abs() < 0.15, "{:?}", fit.coef);
        assert!((fit.coef[1] - 1.5).abs() < 0.2, "{:?}", fit.coef);
    }

    #[test]
    fn separable_data_saturates_without_nan() {
        let xs: Vec<[f64; 1]> = (0..40).map(|i| [i as f64 - 19.5]).collect();
        let labels: Vec<usize> = xs.iter().map(|x| usize::from(x[0] > 0.0)).collect();
        let rows: Vec<&[f64]> = xs.iter().map(|r| &r[..]).collect();
        let fit = Multinomial::fit(&rows, &labels, 2);
        let mut p = [0.0; 2];
        fit.probs_into(&[10.0], &mut p);
        assert!(p.iter().all(|v| v.is_finite()));
        assert!(p[1] > 0.99);
    }
}
