//! Branch and bound over per-record actions for small multi-action problems.
//!
//! A node fixes the actions of records `0..k`. It survives only if some
//! argmax-of-affine rule with slopes in the box realizes those actions with a
//! positive margin, which a small LP decides. Branches whose optimistic
//! completion `sum_{i >= k} max_a Gamma_ia` cannot beat the incumbent are cut.

use minilp::{ComparisonOp, OptimizationDirection, Problem};

use crate::scores::ScoreMatrix;

/// Smallest LP margin accepted as strict separation.
const MIN_MARGIN: f64 = 1e-9;

/// Max-margin rule that gives `labels[i]` to `rows[i]`, as intercept then
/// slopes per action, or `None` if the best margin is not positive.
pub(super) fn realize(rows: &[&[f64]], labels: &[usize], m: usize, slope_bound: f64) -> Option<Vec<f64>> {
    let d = rows.first().map_or(0, |r| r.len());
    let p = d + 1;
    let mut lp = Problem::new(OptimizationDirection::Maximize);
    let vars: Vec<_> = (0..m * p)
        .map(|k| {
            let range = if k % p == 0 {
                (f64::NEG_INFINITY, f64::INFINITY)
            } else {
                (-slope_bound, slope_bound)
            };
            lp.add_var(0.0, range)
        })
        .collect();
    let t = lp.add_var(1.0, (f64::NEG_INFINITY, 1.0));
    let mut expr = Vec::with_capacity(2 * p + 1);
    for (x, &z) in rows.iter().zip(labels) {
        for a in (0..m).filter(|&a| a != z) {
            expr.clear();
            expr.push((vars[z * p], 1.0));
            expr.push((vars[a * p], -1.0));
            for j in 0..d {
                expr.push((vars[z * p + j + 1], x[j]));
                expr.push((vars[a * p + j + 1], -x[j]));
            }
            expr.push((t, -1.0));
            lp.add_constraint(expr.as_slice(), ComparisonOp::Ge, 0.0);
        }
    }
    let sol = lp.solve().ok()?;
    (sol[t] > MIN_MARGIN).then(|| vars.iter().map(|v| sol[*v]).collect())
}

pub(super) struct Search<'a> {
    pub scores: &'a ScoreMatrix,
    pub rows: &'a [&'a [f64]],
    pub slope_bound: f64,
    pub tol: f64,
}

/// Improvement found by [`Search::run`].
pub(super) struct Found {
    pub labels: Vec<usize>,
    pub params: Vec<f64>,
}

impl Search<'_> {
    /// Best realizable assignment beating `incumbent` by more than the
    /// tolerance, or `None` if the incumbent is optimal.
    pub fn run(&self, incumbent: f64) -> Option<Found> {
        let g = self.scores.gamma();
        let n = self.rows.len();
        let mut rest = vec![0.0; n + 1];
        for i in (0..n).rev() {
            rest[i] = rest[i + 1] + g.row(i).iter().copied().fold(f64::NEG_INFINITY, f64::max);
        }
        let mut state = State {
            best: incumbent,
            found: None,
            labels: Vec::with_capacity(n),
            rest,
        };
        self.descend(&mut state, 0.0, None);
        state.found
    }

    fn descend(&self, st: &mut State, partial: f64, params: Option<Vec<f64>>) {
        let i = st.labels.len();
        if i == self.rows.len() {
            if partial > st.best + self.tol {
                st.best = partial;
                st.found = Some(Found {
                    labels: st.labels.clone(),
                    params: params.expect("leaf below a realized node"),
                });
            }
            return;
        }
        if partial + st.rest[i] <= st.best + self.tol {
            return;
        }
        let m = self.scores.n_actions();
        let row = self.scores.row(i);
        let mut order: Vec<usize> = (0..m).collect();
        order.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
        for a in order {
            st.labels.push(a);
            if let Some(r) = realize(&self.rows[..=i], &st.labels, m, self.slope_bound) {
                self.descend(st, partial + row[a], Some(r));
            }
            st.labels.pop();
        }
    }
}

struct State {
    best: f64,
    found: Option<Found>,
    labels: Vec<usize>,
    rest: Vec<f64>,
}
