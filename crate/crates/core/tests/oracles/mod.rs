//! Brute-force references shared by the integration and acceptance tests.
//! Nothing here calls into the solvers or closed forms under test.
#![allow(dead_code)]

use minilp::{ComparisonOp, OptimizationDirection, Problem};
use ndarray::Array2;
use rand::Rng;
use retarget_core::seed::Stream;

/// Whether some rule `argmax_a b_a + beta_a . x` gives `labels[i]` to `xs[i]`
/// with every competing action strictly behind, decided by an LP with margin 1.
pub fn strictly_separable(xs: &[Vec<f64>], labels: &[usize], m: usize) -> bool {
    if labels.is_empty() {
        return true;
    }
    let d = xs[0].len();
    let mut lp = Problem::new(OptimizationDirection::Minimize);
    let vars: Vec<Vec<_>> = (0..m)
        .map(|_| {
            (0..=d)
                .map(|_| lp.add_var(0.0, (f64::NEG_INFINITY, f64::INFINITY)))
                .collect()
        })
        .collect();
    for (x, &z) in xs.iter().zip(labels) {
        for a in (0..m).filter(|&a| a != z) {
            let mut expr = vec![(vars[z][0], 1.0), (vars[a][0], -1.0)];
            for j in 0..d {
                expr.push((vars[z][j + 1], x[j]));
                expr.push((vars[a][j + 1], -x[j]));
            }
            lp.add_constraint(expr.as_slice(), ComparisonOp::Ge, 1.0);
        }
    }
    lp.solve().is_ok()
}

/// Result of exhaustive search over linearly realizable assignments.
#[derive(Debug, Clone)]
pub struct Enumeration {
    pub best: f64,
    /// Every realizable assignment within `tol` of `best`, in discovery order.
    pub argmax: Vec<Vec<usize>>,
}

/// Depth-first search over assignments of `gamma`'s actions to the points,
/// pruning partial assignments that no linear rule realizes and branches whose
/// optimistic completion falls below the incumbent by more than `tol`.
pub fn enumerate_linear(gamma: &Array2<f64>, xs: &[Vec<f64>], tol: f64) -> Enumeration {
    let (n, m) = gamma.dim();
    let mut rest = vec![0.0; n + 1];
    for i in (0..n).rev() {
        rest[i] = rest[i + 1] + gamma.row(i).iter().copied().fold(f64::NEG_INFINITY, f64::max);
    }
    let mut st = Search {
        gamma,
        xs,
        m,
        tol,
        rest,
        best: f64::NEG_INFINITY,
        found: Vec::new(),
        labels: Vec::with_capacity(n),
    };
    st.dfs(0.0);
    let best = st.best;
    let argmax = st
        .found
        .into_iter()
        .filter(|(v, _)| *v >= best - tol)
        .map(|(_, a)| a)
        .collect();
    Enumeration { best, argmax }
}

struct Search<'a> {
    gamma: &'a Array2<f64>,
    xs: &'a [Vec<f64>],
    m: usize,
    tol: f64,
    rest: Vec<f64>,
    best: f64,
    found: Vec<(f64, Vec<usize>)>,
    labels: Vec<usize>,
}

impl Search<'_> {
    fn dfs(&mut self, partial: f64) {
        let i = self.labels.len();
        if i == self.xs.len() {
            if partial > self.best {
                self.best = partial;
            }
            if partial >= self.best - self.tol {
                self.found.push((partial, self.labels.clone()));
            }
            return;
        }
        if partial + self.rest[i] < self.best - self.tol {
            return;
        }
        let mut order: Vec<usize> = (0..self.m).collect();
        order.sort_by(|&a, &b| self.gamma[[i, b]].total_cmp(&self.gamma[[i, a]]));
        for a in order {
            self.labels.push(a);
            if strictly_separable(&self.xs[..=i], &self.labels, self.m) {
                self.dfs(partial + self.gamma[[i, a]]);
            }
            self.labels.pop();
        }
    }
}

/// `sup_p mean_i w_i^2 sum_a zeta_ia (p_ia - rho_ia)^2` over all joint choices
/// of one-hot `p` per support point.
pub fn omega_vertex_sup(zeta: &Array2<f64>, w: &[f64], rho: &Array2<f64>) -> f64 {
    let (k, m) = zeta.dim();
    let total = m.pow(k as u32);
    let mut best = f64::NEG_INFINITY;
    for code in 0..total {
        let mut c = code;
        let mut s = 0.0;
        for i in 0..k {
            let pick = c % m;
            c /= m;
            let mut v = 0.0;
            for a in 0..m {
                let p = if a == pick { 1.0 } else { 0.0 };
                v += zeta[[i, a]] * (p - rho[[i, a]]).powi(2);
            }
            s += w[i] * w[i] * v;
        }
        best = best.max(s / k as f64);
    }
    best
}

/// `sum_a zeta z^2 + max_a zeta (1 - 2 z)`.
pub fn bracket(zeta: &[f64], z: &[f64]) -> f64 {
    let mut quad = 0.0;
    let mut worst = f64::NEG_INFINITY;
    for (a, &za) in zeta.iter().zip(z) {
        quad += a * za * za;
        worst = worst.max(a * (1.0 - 2.0 * za));
    }
    quad + worst
}

/// Minimum of [`bracket`] over the three-dimensional lattice `1e-3 * Z^3`
/// inside `[-0.5, 1]^3`: a scan at spacing `1e-2`, then every lattice point
/// within `0.05` of the coarse winner.
pub fn bracket_grid_min3(zeta: &[f64; 3]) -> f64 {
    let coarse = |k: i64| k as f64 * 1e-2;
    let mut best = (f64::INFINITY, [0i64; 3]);
    for i in -50..=100 {
        for j in -50..=100 {
            for l in -50..=100 {
                let v = bracket(zeta, &[coarse(i), coarse(j), coarse(l)]);
                if v < best.0 {
                    best = (v, [i * 10, j * 10, l * 10]);
                }
            }
        }
    }
    let c = best.1;
    let fine = |k: i64| k as f64 * 1e-3;
    let mut min = best.0;
    for i in c[0] - 50..=c[0] + 50 {
        for j in c[1] - 50..=c[1] + 50 {
            for l in c[2] - 50..=c[2] + 50 {
                min = min.min(bracket(zeta, &[fine(i), fine(j), fine(l)]));
            }
        }
    }
    min
}

/// A probability vector with every entry at least `floor`.
pub fn random_simplex(rng: &mut Stream, m: usize, floor: f64) -> Vec<f64> {
    let raw: Vec<f64> = (0..m).map(|_| -rng.random::<f64>().max(1e-300).ln()).collect();
    let s: f64 = raw.iter().sum();
    let spare = 1.0 - floor * m as f64;
    raw.iter().map(|r| floor + spare * r / s).collect()
}

/// `n` points uniform on `[-1, 1]^d`.
pub fn random_points(rng: &mut Stream, n: usize, d: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect()
}

pub fn to_array(points: &[Vec<f64>]) -> Array2<f64> {
    let d = points.first().map_or(0, Vec::len);
    Array2::from_shape_fn((points.len(), d), |(i, j)| points[i][j])
}

/// `n x m` scores uniform on `[-1, 1]`.
pub fn random_gamma(rng: &mut Stream, n: usize, m: usize) -> Array2<f64> {
    Array2::from_shape_fn((n, m), |_| rng.random_range(-1.0..1.0))
}
