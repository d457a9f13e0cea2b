//! Policies: maps from covariates to distributions over actions.

use std::fmt::Write as _;
use std::io::Write;

use ndarray::Array2;

use crate::error::{Error, Result};

/// A (possibly stochastic) policy over `n_actions` actions.
pub trait Policy: Sync {
    fn n_actions(&self) -> usize;

    /// Writes `pi(.|x)` into `out` (length `n_actions`).
    fn probs_into(&self, x: &[f64], out: &mut [f64]);

    fn probs(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n_actions()];
        self.probs_into(x, &mut out);
        out
    }
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (a, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = a;
        }
    }
    best
}

/// Deterministic rule `argmax_a (b_a + beta_a . x)`, ties to the lowest action.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearPolicy {
    intercepts: Vec<f64>,
    slopes: Array2<f64>,
    angle: Option<(f64, f64)>,
}

impl LinearPolicy {
    pub fn new(intercepts: Vec<f64>, slopes: Array2<f64>) -> Result<Self> {
        if intercepts.is_empty() || intercepts.len() != slopes.nrows() {
            return Err(Error::Input(format!(
                "{} intercepts for {} slope rows",
                intercepts.len(),
                slopes.nrows()
            )));
        }
        if intercepts.iter().any(|b| b.is_nan()) || slopes.iter().any(|v| !v.is_finite()) {
            return Err(Error::Input("policy parameters must be numbers".into()));
        }
        Ok(Self {
            intercepts,
            slopes: slopes.as_standard_layout().into_owned(),
            angle: None,
        })
    }

    /// Always picks `action`.
    pub fn constant(n_actions: usize, dim: usize, action: usize) -> Self {
        let mut intercepts = vec![0.0; n_actions];
        intercepts[action] = 1.0;
        Self {
            intercepts,
            slopes: Array2::zeros((n_actions, dim)),
            angle: None,
        }
    }

    /// Two-action halfplane rule in the plane: action 2 iff
    /// `cos(theta) x1 + sin(theta) x2 - b > 0`. `b` may be infinite.
    pub fn from_angle(theta: f64, b: f64) -> Self {
        let mut slopes = Array2::zeros((2, 2));
        slopes[[1, 0]] = theta.cos();
        slopes[[1, 1]] = theta.sin();
        Self {
            intercepts: vec![0.0, -b],
            slopes,
            angle: Some((theta, b)),
        }
    }

    pub fn intercepts(&self) -> &[f64] {
        &self.intercepts
    }

    pub fn slopes(&self) -> &Array2<f64> {
        &self.slopes
    }

    /// `(theta, b)` when built by [`LinearPolicy::from_angle`].
    pub fn angle(&self) -> Option<(f64, f64)> {
        self.angle
    }

    pub fn dim(&self) -> usize {
        self.slopes.ncols()
    }

    pub fn scores_into(&self, x: &[f64], out: &mut [f64]) {
        let d = self.dim();
        let s = self.slopes.as_slice().expect("standard layout");
        for (a, o) in out.iter_mut().enumerate() {
            let row = &s[a * d..(a + 1) * d];
            let mut v = 0.0;
            for (b, xj) in row.iter().zip(x) {
                v += b * xj;
            }
            *o = v + self.intercepts[a];
        }
    }

    pub fn action(&self, x: &[f64]) -> usize {
        let m = self.intercepts.len();
        if m <= 8 {
            let mut buf = [0.0; 8];
            self.scores_into(x, &mut buf[..m]);
            argmax(&buf[..m])
        } else {
            let mut buf = vec![0.0; m];
            self.scores_into(x, &mut buf);
            argmax(&buf)
        }
    }

    /// Lines of `action, intercept, slope_1..slope_d` (1-based actions).
    pub fn to_text(&self) -> String {
        let mut s = String::from("action,intercept");
        for j in 1..=self.dim() {
            let _ = write!(s, ",slope_{j}");
        }
        s.push('\n');
        for (a, b) in self.intercepts.iter().enumerate() {
            let _ = write!(s, "{},{}", a + 1, b);
            for v in self.slopes.row(a) {
                let _ = write!(s, ",{v}");
            }
            s.push('\n');
        }
        s
    }

    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(self.to_text().as_bytes())?;
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines.next().ok_or(Error::Parse {
            line: 1,
            msg: "empty policy file".into(),
        })?;
        let cols = header.split(',').count();
        if cols < 2 {
            return Err(Error::Parse {
                line: 1,
                msg: "bad policy header".into(),
            });
        }
        let d = cols - 2;
        let mut intercepts = Vec::new();
        let mut slopes = Vec::new();
        for (k, line) in lines {
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            let bad = |msg: String| Error::Parse { line: k + 1, msg };
            if fields.len() != cols {
                return Err(bad(format!("expected {cols} fields")));
            }
            let a: usize = fields[0].parse().map_err(|_| bad("bad action".into()))?;
            if a != intercepts.len() + 1 {
                return Err(bad(format!("actions must be listed in order, got {a}")));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|_| bad(format!("bad number {s:?}")));
            intercepts.push(num(fields[1])?);
            for f in &fields[2..] {
                slopes.push(num(f)?);
            }
        }
        let m = intercepts.len();
        let slopes = Array2::from_shape_vec((m, d), slopes).map_err(|e| Error::Input(e.to_string()))?;
        Self::new(intercepts, slopes)
    }
}

impl Policy for LinearPolicy {
    fn n_actions(&self) -> usize {
        self.intercepts.len()
    }

    fn probs_into(&self, x: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        out[self.action(x)] = 1.0;
    }
}

/// Policy backed by a closure.
pub struct FnPolicy<F> {
    n_actions: usize,
    f: F,
}

impl<F> FnPolicy<F>
where
    F: Fn(&[f64], &mut [f64]) + Sync,
{
    pub fn new(n_actions: usize, f: F) -> Self {
        Self { n_actions, f }
    }
}

impl<F> Policy for FnPolicy<F>
where
    F: Fn(&[f64], &mut [f64]) + Sync,
{
    fn n_actions(&self) -> usize {
        self.n_actions
    }

    fn probs_into(&self, x: &[f64], out: &mut [f64]) {
        (self.f)(x, out)
    }
}

/// One-hot distribution on `action`.
pub fn one_hot(n_actions: usize, action: usize) -> Vec<f64> {
    let mut p = vec![0.0; n_actions];
    p[action] = 1.0;
    p
}
