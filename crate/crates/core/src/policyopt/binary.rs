//! Exact intercept search over a grid of halfplane directions.

use std::f64::consts::TAU;

use ndarray::Array2;

use super::{check_inputs, tie_tolerance};
use crate::error::{Error, Result};
use crate::policy::LinearPolicy;
use crate::scores::ScoreMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GridSearchConfig {
    /// Angles `2 pi j / theta_steps`, `j = 0..theta_steps`.
    pub theta_steps: usize,
    /// Also try `b = -inf` (everyone gets action 2) and `b = +inf` (nobody does).
    pub include_infinite_intercepts: bool,
    /// Adds one angle inside every cell of the arrangement of directions at
    /// which two records swap order. The search is then exact over all
    /// halfplanes, at a cost quadratic in `n`.
    pub arrangement_angles: bool,
}

impl Default for GridSearchConfig {
    fn default() -> Self {
        Self {
            theta_steps: 720,
            include_infinite_intercepts: true,
            arrangement_angles: false,
        }
    }
}

impl GridSearchConfig {
    pub fn exact() -> Self {
        Self {
            arrangement_angles: true,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BinarySolution {
    pub policy: LinearPolicy,
    pub theta: f64,
    pub b: f64,
    /// `sum_i Gamma_{i, pi(x_i)}`.
    pub objective: f64,
    /// Position of `theta` in the searched angle list.
    pub theta_index: usize,
    /// Intercept candidate: 0 is `-inf`, `k` lies between the `k`-th and
    /// `k+1`-th smallest projections, `n` is `+inf`.
    pub candidate_index: usize,
}

/// `cos(theta) x1 + sin(theta) x2`, evaluated exactly as
/// [`LinearPolicy::scores_into`] does.
fn project(c: f64, s: f64, x: &[f64]) -> f64 {
    let mut v = 0.0;
    v += c * x[0];
    v += s * x[1];
    v
}

fn angles(xs: &Array2<f64>, cfg: &GridSearchConfig) -> Vec<f64> {
    let steps = cfg.theta_steps;
    let mut out: Vec<f64> = (0..steps).map(|j| TAU * j as f64 / steps as f64).collect();
    if cfg.arrangement_angles {
        let n = xs.nrows();
        let mut critical = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                let (dx, dy) = (xs[[j, 0]] - xs[[i, 0]], xs[[j, 1]] - xs[[i, 1]]);
                if dx == 0.0 && dy == 0.0 {
                    continue;
                }
                // Directions orthogonal to x_j - x_i.
                let base = dy.atan2(dx) + TAU / 4.0;
                for t in [base, base + TAU / 2.0] {
                    critical.push(t.rem_euclid(TAU));
                }
            }
        }
        critical.sort_by(f64::total_cmp);
        critical.dedup();
        let k = critical.len();
        for (idx, &t) in critical.iter().enumerate() {
            let next = if idx + 1 < k {
                critical[idx + 1]
            } else {
                critical[0] + TAU
            };
            out.push((0.5 * (t + next)).rem_euclid(TAU));
        }
        out.sort_by(f64::total_cmp);
        out.dedup();
    }
    out
}

fn before(a: &(f64, usize), b: &(f64, usize)) -> std::cmp::Ordering {
    a.0.total_cmp(&b.0).then(a.1.cmp(&b.1))
}

/// Linear in `n` plus the number of inversions.
fn insertion_sort(v: &mut [(f64, usize)]) {
    for i in 1..v.len() {
        let mut j = i;
        while j > 0 && before(&v[j - 1], &v[j]).is_gt() {
            v.swap(j - 1, j);
            j -= 1;
        }
    }
}

/// Best halfplane rule for `scores` (two actions, two covariates).
pub fn solve_binary_linear(scores: &ScoreMatrix, xs: &Array2<f64>, cfg: &GridSearchConfig) -> Result<BinarySolution> {
    Ok(solve_binary_linear_many(&[scores], xs, cfg)?.remove(0))
}

struct Best {
    gain: f64,
    theta_index: usize,
    candidate_index: usize,
    b: f64,
}

/// Solves several score matrices on the same covariates, sharing the sort of
/// projections at each angle. Each result equals what [`solve_binary_linear`]
/// returns for that matrix alone.
pub fn solve_binary_linear_many(
    scores: &[&ScoreMatrix],
    xs: &Array2<f64>,
    cfg: &GridSearchConfig,
) -> Result<Vec<BinarySolution>> {
    if cfg.theta_steps < 4 {
        return Err(Error::Input(format!(
            "theta_steps must be at least 4, got {}",
            cfg.theta_steps
        )));
    }
    if xs.ncols() != 2 {
        return Err(Error::Contract(format!(
            "halfplane search needs 2 covariates, got {}",
            xs.ncols()
        )));
    }
    for s in scores {
        check_inputs(s, xs)?;
        if s.n_actions() != 2 {
            return Err(Error::Contract(format!(
                "halfplane search needs 2 actions, got {}",
                s.n_actions()
            )));
        }
    }
    let n = xs.nrows();
    let rows: Vec<[f64; 2]> = xs.outer_iter().map(|r| [r[0], r[1]]).collect();
    let deltas: Vec<Vec<f64>> = scores
        .iter()
        .map(|s| s.gamma().outer_iter().map(|r| r[1] - r[0]).collect())
        .collect();
    let tols: Vec<f64> = scores.iter().map(|s| tie_tolerance(s)).collect();
    let thetas = angles(xs, cfg);

    let mut best: Vec<Option<Best>> = scores.iter().map(|_| None).collect();
    // (projection, record) kept in the previous angle's order, which is
    // nearly sorted for the next angle.
    let mut sorted: Vec<(f64, usize)> = (0..n).map(|i| (0.0, i)).collect();
    let mut suffix = vec![0.0; n + 1];
    for (ti, &theta) in thetas.iter().enumerate() {
        let (c, s) = (theta.cos(), theta.sin());
        for e in sorted.iter_mut() {
            e.0 = project(c, s, &rows[e.1]);
        }
        if ti == 0 {
            sorted.sort_by(|a, b| before(a, b));
        } else {
            insertion_sort(&mut sorted);
        }
        for (k, delta) in deltas.iter().enumerate() {
            // suffix[j] = gain of giving action 2 to the records at sorted positions j..n.
            suffix[n] = 0.0;
            for j in (0..n).rev() {
                suffix[j] = suffix[j + 1] + delta[sorted[j].1];
            }
            let mut consider = |gain: f64, cand: usize, b: f64| {
                let better = match &best[k] {
                    None => true,
                    Some(cur) => gain > cur.gain + tols[k],
                };
                if better {
                    best[k] = Some(Best {
                        gain,
                        theta_index: ti,
                        candidate_index: cand,
                        b,
                    });
                }
            };
            if cfg.include_infinite_intercepts {
                consider(suffix[0], 0, f64::NEG_INFINITY);
            }
            for j in 1..n {
                let (lo, hi) = (sorted[j - 1].0, sorted[j].0);
                if lo < hi {
                    let mid = lo + 0.5 * (hi - lo);
                    let b = if lo < mid && mid < hi { mid } else { lo };
                    consider(suffix[j], j, b);
                }
            }
            if cfg.include_infinite_intercepts {
                consider(0.0, n, f64::INFINITY);
            }
        }
    }
    scores
        .iter()
        .zip(best)
        .map(|(s, b)| {
            let b = b.ok_or_else(|| {
                Error::Degenerate("no finite intercept separates any records; allow infinite intercepts".into())
            })?;
            let theta = thetas[b.theta_index];
            let policy = LinearPolicy::from_angle(theta, b.b);
            let assignment: Vec<usize> = rows.iter().map(|x| policy.action(x)).collect();
            Ok(BinarySolution {
                objective: s.assignment_objective(&assignment),
                policy,
                theta,
                b: b.b,
                theta_index: b.theta_index,
                candidate_index: b.candidate_index,
            })
        })
        .collect()
}
