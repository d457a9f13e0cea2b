//! Multi-start coordinate ascent for argmax-of-affine policies
//! `pi(x) = argmax_a b_a + beta_a . x` with slopes in `[-bound, bound]`.

use ndarray::Array2;
use rand::Rng;
use rayon::prelude::*;

use super::binary::{solve_binary_linear, GridSearchConfig};
use super::exact;
use super::{check_inputs, tie_tolerance};
use crate::error::{Error, Result};
use crate::policy::{argmax, LinearPolicy};
use crate::scores::ScoreMatrix;
use crate::seed::{derive, stream};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MultiSearchConfig {
    /// Random parameter draws used as starting points, on top of the constant
    /// policies and, with two covariates, the lifted pairwise halfplane solutions.
    pub random_starts: usize,
    pub seed: u64,
    /// Upper limit on full passes over all coordinates per start.
    pub max_sweeps: usize,
    /// Box for slope entries. Any strictly separable assignment stays reachable
    /// because parameters can be scaled down together.
    pub slope_bound: f64,
    /// Angle grid for the pairwise starts; `None` skips them.
    pub pairwise: Option<GridSearchConfig>,
    /// Problems with at most this many records finish with an exhaustive
    /// branch and bound, which proves the result optimal.
    pub exact_max_records: usize,
}

impl Default for MultiSearchConfig {
    fn default() -> Self {
        Self {
            random_starts: 50,
            seed: 0,
            max_sweeps: 100,
            slope_bound: 1.0,
            pairwise: Some(GridSearchConfig::default()),
            exact_max_records: 12,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultiSolution {
    pub policy: LinearPolicy,
    /// `sum_i Gamma_{i, pi(x_i)}`.
    pub objective: f64,
    /// `sum_i max_a Gamma_ia`.
    pub upper_bound: f64,
    /// The objective reaches the upper bound, so no policy of any kind does better.
    pub certified: bool,
    /// No policy in the class does better, by exhaustive search.
    pub proven_optimal: bool,
    pub starts: usize,
}

/// Parameters as an `m x (d+1)` table: column 0 intercepts, then slopes.
#[derive(Debug, Clone, PartialEq)]
struct Params {
    m: usize,
    p: usize,
    v: Vec<f64>,
}

impl Params {
    fn zeros(m: usize, d: usize) -> Self {
        Self {
            m,
            p: d + 1,
            v: vec![0.0; m * (d + 1)],
        }
    }

    fn get(&self, a: usize, j: usize) -> f64 {
        self.v[a * self.p + j]
    }

    fn set(&mut self, a: usize, j: usize, value: f64) {
        self.v[a * self.p + j] = value;
    }

    /// Same arithmetic order as [`LinearPolicy::scores_into`].
    fn score(&self, a: usize, x: &[f64]) -> f64 {
        let row = &self.v[a * self.p..(a + 1) * self.p];
        let mut s = 0.0;
        for (b, xj) in row[1..].iter().zip(x) {
            s += b * xj;
        }
        s + row[0]
    }

    fn policy(&self) -> Result<LinearPolicy> {
        let d = self.p - 1;
        let intercepts = (0..self.m).map(|a| self.get(a, 0)).collect();
        let slopes = Array2::from_shape_fn((self.m, d), |(a, j)| self.get(a, j + 1));
        LinearPolicy::new(intercepts, slopes)
    }
}

struct Problem<'a> {
    scores: &'a ScoreMatrix,
    rows: Vec<&'a [f64]>,
    tol: f64,
    bound: f64,
}

impl Problem<'_> {
    fn assignment(&self, params: &Params) -> Vec<usize> {
        let mut buf = vec![0.0; params.m];
        self.rows
            .iter()
            .map(|x| {
                for (a, b) in buf.iter_mut().enumerate() {
                    *b = params.score(a, x);
                }
                argmax(&buf)
            })
            .collect()
    }

    fn objective(&self, params: &Params) -> f64 {
        self.scores.assignment_objective(&self.assignment(params))
    }

    /// Best value of coordinate `(a, j)` with everything else fixed; `None`
    /// if no value beats the current objective by more than the tolerance.
    fn line_search(&self, params: &Params, a: usize, j: usize, current: f64) -> Option<(f64, f64)> {
        let m = params.m;
        let n = self.rows.len();
        let g = self.scores.gamma();
        // Record i picks `a` iff t * f_i > cut_i (or == when `a` wins the index tie).
        let mut events: Vec<(f64, f64)> = Vec::new();
        let mut base = 0.0;
        let mut always = 0.0;
        let t0 = params.get(a, j);
        for i in 0..n {
            let x = self.rows[i];
            let mut rival = usize::MAX;
            let mut rival_score = f64::NEG_INFINITY;
            for b in (0..m).filter(|&b| b != a) {
                let s = params.score(b, x);
                if rival == usize::MAX || s > rival_score {
                    rival = b;
                    rival_score = s;
                }
            }
            let f = if j == 0 { 1.0 } else { x[j - 1] };
            let gain = g[[i, a]] - g[[i, rival]];
            base += g[[i, rival]];
            let rest = params.score(a, x) - t0 * f;
            if f == 0.0 {
                if rest > rival_score || (rest == rival_score && a < rival) {
                    always += gain;
                }
                continue;
            }
            // a wins for t beyond the breakpoint on the side given by sign(f).
            events.push(((rival_score - rest) / f, if f > 0.0 { gain } else { -gain }));
            if f < 0.0 {
                always += gain;
            }
        }
        events.sort_by(|x, y| x.0.total_cmp(&y.0));
        let (lo_bound, hi_bound) = if j == 0 {
            (f64::NEG_INFINITY, f64::INFINITY)
        } else {
            (-self.bound, self.bound)
        };
        // Sweep intervals between distinct breakpoints, left to right.
        let mut level = always;
        let mut best: Option<(f64, f64)> = None;
        let mut left = f64::NEG_INFINITY;
        let mut k = 0;
        loop {
            let right = if k < events.len() { events[k].0 } else { f64::INFINITY };
            let (lo, hi) = (left.max(lo_bound), right.min(hi_bound));
            if lo < hi || (lo == hi && lo_bound == hi_bound) {
                let t = pick(lo, hi);
                let value = base + level;
                if value > best.map_or(f64::NEG_INFINITY, |b| b.1) + self.tol {
                    best = Some((t, value));
                }
            }
            if k == events.len() {
                break;
            }
            let at = events[k].0;
            while k < events.len() && events[k].0 == at {
                level += events[k].1;
                k += 1;
            }
            left = at;
        }
        let (t, _) = best?;
        let mut trial = params.clone();
        trial.set(a, j, t);
        let actual = self.objective(&trial);
        (actual > current + self.tol).then_some((t, actual))
    }

    fn ascend(&self, mut params: Params, max_sweeps: usize) -> (Params, f64) {
        let mut current = self.objective(&params);
        for _ in 0..max_sweeps {
            let mut improved = false;
            for a in 0..params.m {
                for j in 0..params.p {
                    if let Some((t, value)) = self.line_search(&params, a, j, current) {
                        params.set(a, j, t);
                        current = value;
                        improved = true;
                    }
                }
            }
            if !improved {
                break;
            }
        }
        (params, current)
    }
}

/// A point strictly inside `(lo, hi)`, preferring round values.
fn pick(lo: f64, hi: f64) -> f64 {
    match (lo.is_finite(), hi.is_finite()) {
        (false, false) => 0.0,
        (true, false) => lo.max(0.0) + lo.abs().max(1.0),
        (false, true) => hi.min(0.0) - hi.abs().max(1.0),
        (true, true) => {
            let mid = lo + 0.5 * (hi - lo);
            if lo < mid && mid < hi {
                mid
            } else {
                lo
            }
        }
    }
}

fn starts(scores: &ScoreMatrix, xs: &Array2<f64>, cfg: &MultiSearchConfig) -> Result<Vec<Params>> {
    let (m, d) = (scores.n_actions(), xs.ncols());
    let mut out = Vec::new();
    for a in 0..m {
        let mut p = Params::zeros(m, d);
        p.set(a, 0, 1.0);
        out.push(p);
    }
    if let (Some(grid), 2) = (cfg.pairwise, d) {
        // Halfplane `a` versus `r`, every other action pushed below both.
        let reach: f64 = (0..d)
            .map(|j| xs.column(j).iter().fold(0.0_f64, |acc, v| acc.max(v.abs())))
            .sum();
        for a in 0..m {
            for r in a + 1..m {
                let pair = Array2::from_shape_fn((scores.len(), 2), |(i, k)| {
                    scores.gamma()[[i, if k == 0 { a } else { r }]]
                });
                let pair = ScoreMatrix::from_gamma(pair, scores.method())?;
                let sol = solve_binary_linear(&pair, xs, &grid)?;
                if !sol.b.is_finite() {
                    continue;
                }
                let mut p = Params::zeros(m, d);
                p.set(r, 0, -sol.b);
                p.set(r, 1, sol.theta.cos());
                p.set(r, 2, sol.theta.sin());
                let floor = -(sol.b.abs() + reach + 1.0);
                for other in (0..m).filter(|&o| o != a && o != r) {
                    p.set(other, 0, floor);
                }
                out.push(p);
            }
        }
    }
    let mut rng = stream(derive(cfg.seed, &[m as u64, d as u64]));
    for _ in 0..cfg.random_starts {
        let mut p = Params::zeros(m, d);
        for a in 0..m {
            p.set(a, 0, rng.random_range(-1.0..=1.0));
            for j in 1..=d {
                p.set(a, j, rng.random_range(-cfg.slope_bound..=cfg.slope_bound));
            }
        }
        out.push(p);
    }
    Ok(out)
}

/// Best argmax-of-affine policy found from all starts.
pub fn solve_multi_linear(scores: &ScoreMatrix, xs: &Array2<f64>, cfg: &MultiSearchConfig) -> Result<MultiSolution> {
    check_inputs(scores, xs)?;
    if !(cfg.slope_bound > 0.0) || !cfg.slope_bound.is_finite() {
        return Err(Error::Input(format!(
            "slope bound must be positive, got {}",
            cfg.slope_bound
        )));
    }
    let problem = Problem {
        scores,
        rows: (0..xs.nrows())
            .map(|i| xs.row(i).to_slice().expect("standard layout"))
            .collect(),
        tol: tie_tolerance(scores),
        bound: cfg.slope_bound,
    };
    let starts = starts(scores, xs, cfg)?;
    let results: Vec<(Params, f64)> = starts
        .par_iter()
        .map(|p| problem.ascend(p.clone(), cfg.max_sweeps))
        .collect();
    let mut best = 0;
    for (k, r) in results.iter().enumerate() {
        if r.1 > results[best].1 + problem.tol {
            best = k;
        }
    }
    let (mut params, mut objective) = results[best].clone();
    let upper_bound = scores.upper_bound();
    let certified = objective >= upper_bound - problem.tol;
    let exhaustive = !certified && xs.nrows() <= cfg.exact_max_records;
    if exhaustive {
        let search = exact::Search {
            scores,
            rows: &problem.rows,
            slope_bound: cfg.slope_bound,
            tol: problem.tol,
        };
        if let Some(found) = search.run(objective) {
            let candidate = Params {
                m: params.m,
                p: params.p,
                v: found.params,
            };
            if problem.assignment(&candidate) == found.labels {
                objective = problem.objective(&candidate);
                params = candidate;
            } else {
                log::warn!("exhaustive search found a better assignment that did not survive rounding");
            }
        }
    }
    Ok(MultiSolution {
        policy: params.policy()?,
        objective,
        upper_bound,
        certified: objective >= upper_bound - problem.tol,
        proven_optimal: certified || exhaustive,
        starts: results.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scores::ScoreMethod;
    use ndarray::array;

    #[test]
    fn dominant_column_gives_constant_policy() {
        let xs = array![[0.1, 0.4], [-0.3, 0.9], [0.8, -0.2]];
        let g = array![[0.0, 2.0, 1.0], [0.5, 3.0, -1.0], [1.0, 1.5, 0.0]];
        let s = ScoreMatrix::from_gamma(g, ScoreMethod::Direct).unwrap();
        let sol = solve_multi_linear(&s, &xs, &MultiSearchConfig::default()).unwrap();
        assert_eq!(sol.objective, 6.5);
        assert!(sol.certified);
        for x in xs.outer_iter() {
            assert_eq!(sol.policy.action(x.as_slice().unwrap()), 1);
        }
    }

    #[test]
    fn recovers_a_separable_three_way_split() {
        let xs = Array2::from_shape_fn((30, 1), |(i, _)| i as f64 / 29.0 * 2.0 - 1.0);
        let g = Array2::from_shape_fn((30, 3), |(i, a)| {
            let x = xs[[i, 0]];
            let target = if x < -0.3 {
                0
            } else if x < 0.4 {
                1
            } else {
                2
            };
            f64::from(u8::from(a == target))
        });
        let s = ScoreMatrix::from_gamma(g, ScoreMethod::Direct).unwrap();
        let sol = solve_multi_linear(&s, &xs, &MultiSearchConfig::default()).unwrap();
        assert_eq!(sol.objective, 30.0);
        assert!(sol.certified);
    }

    #[test]
    fn line_search_pick_stays_inside() {
        assert_eq!(pick(f64::NEG_INFINITY, f64::INFINITY), 0.0);
        assert!(pick(2.0, f64::INFINITY) > 2.0);
        assert!(pick(f64::NEG_INFINITY, -3.0) < -3.0);
        let (lo, hi) = (1.0, f64::from_bits(1.0f64.to_bits() + 1));
        assert_eq!(pick(lo, hi), lo);
    }
}
