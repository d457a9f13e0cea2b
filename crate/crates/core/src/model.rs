//! Nuisance functions: propensity `phi(a|x)`, outcome mean `mu(a|x)` and
//! outcome variance `sigma^2(a|x)`.

use std::io::Read;

use ndarray::Array2;

use crate::error::{Error, Result};

/// Tolerance on `sum_a phi(a|x) = 1`.
pub const PROPENSITY_SUM_TOL: f64 = 1e-10;

/// Propensities below this are clipped up to it before being inverted.
pub const PROPENSITY_FLOOR: f64 = 1e-6;

/// Conditional mean reward per action.
pub trait OutcomeModel: Sync {
    fn n_actions(&self) -> usize;
    fn outcome_mean_into(&self, x: &[f64], out: &mut [f64]);

    /// `mu(.|x_i)` for every row of `xs`.
    fn tabulate_mean(&self, xs: &Array2<f64>) -> Array2<f64> {
        let m = self.n_actions();
        let mut out = Array2::zeros((xs.nrows(), m));
        let mut x = vec![0.0; xs.ncols()];
        for (i, mut row) in out.outer_iter_mut().enumerate() {
            for (dst, src) in x.iter_mut().zip(xs.row(i)) {
                *dst = *src;
            }
            self.outcome_mean_into(&x, row.as_slice_mut().expect("standard layout"));
        }
        out
    }
}

/// Closed-form nuisance functions of `x`.
pub trait NuisanceModel: OutcomeModel {
    fn propensity_into(&self, x: &[f64], out: &mut [f64]);

    /// Homoskedastic unit variance unless overridden.
    fn outcome_variance_into(&self, _x: &[f64], out: &mut [f64]) {
        out.fill(1.0);
    }

    /// Evaluates all three functions at the rows of `xs`.
    fn tabulate(&self, xs: &Array2<f64>) -> Result<NuisanceTable> {
        let (n, m) = (xs.nrows(), self.n_actions());
        let mut phi = Array2::zeros((n, m));
        let mut var = Array2::zeros((n, m));
        let mut x = vec![0.0; xs.ncols()];
        for i in 0..n {
            for (dst, src) in x.iter_mut().zip(xs.row(i)) {
                *dst = *src;
            }
            self.propensity_into(&x, phi.row_mut(i).as_slice_mut().expect("standard layout"));
            self.outcome_variance_into(&x, var.row_mut(i).as_slice_mut().expect("standard layout"));
        }
        NuisanceTable::new(phi, self.tabulate_mean(xs), var)
    }
}

/// Nuisance values at a finite set of points (rows), e.g. the training records.
#[derive(Debug, Clone, PartialEq)]
pub struct NuisanceTable {
    propensity: Array2<f64>,
    outcome_mean: Array2<f64>,
    outcome_variance: Array2<f64>,
}

impl NuisanceTable {
    /// Propensity rows must be nonnegative and sum to one; variances nonnegative.
    /// Zero propensities are accepted here and rejected where they are inverted.
    pub fn new(propensity: Array2<f64>, outcome_mean: Array2<f64>, outcome_variance: Array2<f64>) -> Result<Self> {
        let shape = propensity.dim();
        if shape.0 == 0 || shape.1 == 0 {
            return Err(Error::Input("empty nuisance table".into()));
        }
        if outcome_mean.dim() != shape || outcome_variance.dim() != shape {
            return Err(Error::Input(format!(
                "nuisance shapes differ: {:?}, {:?}, {:?}",
                shape,
                outcome_mean.dim(),
                outcome_variance.dim()
            )));
        }
        for (i, row) in propensity.outer_iter().enumerate() {
            if row.iter().any(|p| !(0.0..=1.0).contains(p)) {
                return Err(Error::Input(format!("record {i}: propensity outside [0,1]")));
            }
            let s: f64 = row.sum();
            if (s - 1.0).abs() > PROPENSITY_SUM_TOL {
                return Err(Error::Input(format!("record {i}: propensities sum to {s}")));
            }
        }
        if outcome_variance.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::Input("outcome variances must be finite and >= 0".into()));
        }
        if outcome_mean.iter().any(|v| !v.is_finite()) {
            return Err(Error::Input("outcome means must be finite".into()));
        }
        Ok(Self {
            propensity: propensity.as_standard_layout().into_owned(),
            outcome_mean: outcome_mean.as_standard_layout().into_owned(),
            outcome_variance: outcome_variance.as_standard_layout().into_owned(),
        })
    }

    /// Unit variance for every record and action.
    pub fn homoskedastic(propensity: Array2<f64>, outcome_mean: Array2<f64>) -> Result<Self> {
        let var = Array2::ones(propensity.dim());
        Self::new(propensity, outcome_mean, var)
    }

    pub fn len(&self) -> usize {
        self.propensity.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn n_actions(&self) -> usize {
        self.propensity.ncols()
    }

    pub fn propensity(&self) -> &Array2<f64> {
        &self.propensity
    }

    pub fn outcome_mean(&self) -> &Array2<f64> {
        &self.outcome_mean
    }

    pub fn outcome_variance(&self) -> &Array2<f64> {
        &self.outcome_variance
    }

    /// Replaces the variance column block, keeping the other two.
    pub fn with_variance(self, outcome_variance: Array2<f64>) -> Result<Self> {
        Self::new(self.propensity, self.outcome_mean, outcome_variance)
    }
}

/// Row sums in a propensity file may be off by this much; rows are rescaled.
pub const FILE_SUM_TOL: f64 = 1e-6;

/// Parses `x1..xd, phi_1..phi_m[, sigma2_1..sigma2_m]` into covariates and a
/// table with zero outcome means (unit variances when the `sigma2` block is absent).
pub fn read_propensity_csv<R: Read>(reader: R) -> Result<(Array2<f64>, NuisanceTable)> {
    let parse_err = |line: usize, msg: String| Error::Parse { line, msg };
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers().map_err(|e| parse_err(1, e.to_string()))?.clone();
    let count = |prefix: &str| {
        headers
            .iter()
            .enumerate()
            .filter(|(_, h)| h.starts_with(prefix))
            .map(|(j, _)| j)
            .collect::<Vec<_>>()
    };
    let d = count("x").len();
    let m = count("phi_").len();
    let v = count("sigma2_").len();
    let expected: Vec<String> = (1..=d)
        .map(|j| format!("x{j}"))
        .chain((1..=m).map(|a| format!("phi_{a}")))
        .chain((1..=v).map(|a| format!("sigma2_{a}")))
        .collect();
    if m < 2 || (v != 0 && v != m) || headers.iter().ne(expected.iter().map(String::as_str)) {
        return Err(parse_err(
            1,
            "header must be x1..xd,phi_1..phi_m[,sigma2_1..sigma2_m] with m >= 2".into(),
        ));
    }
    let (mut xs, mut phi, mut var) = (Vec::new(), Vec::new(), Vec::new());
    for rec in rdr.records() {
        let rec = rec.map_err(|e| parse_err(e.position().map_or(0, |p| p.line() as usize), e.to_string()))?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if rec.len() != expected.len() {
            return Err(parse_err(
                line,
                format!("expected {} fields, found {}", expected.len(), rec.len()),
            ));
        }
        let mut vals = Vec::with_capacity(rec.len());
        for (j, f) in rec.iter().enumerate() {
            let x: f64 = f
                .parse()
                .ok()
                .filter(|x: &f64| x.is_finite())
                .ok_or_else(|| parse_err(line, format!("field {} is not a finite number: {f:?}", j + 1)))?;
            vals.push(x);
        }
        let p = &vals[d..d + m];
        let sum: f64 = p.iter().sum();
        if p.iter().any(|x| !(0.0..=1.0).contains(x)) || (sum - 1.0).abs() > FILE_SUM_TOL {
            return Err(parse_err(
                line,
                format!("propensities must lie in [0,1] and sum to 1 (sum {sum})"),
            ));
        }
        if vals[d + m..].iter().any(|x| *x < 0.0) {
            return Err(parse_err(line, "variances must be >= 0".into()));
        }
        xs.extend_from_slice(&vals[..d]);
        phi.extend(p.iter().map(|x| x / sum));
        if v == m {
            var.extend_from_slice(&vals[d + m..]);
        } else {
            var.extend(std::iter::repeat_n(1.0, m));
        }
    }
    let n = phi.len() / m;
    if n == 0 {
        return Err(parse_err(2, "no records".into()));
    }
    let shape =
        |v: Vec<f64>, cols: usize| Array2::from_shape_vec((n, cols), v).map_err(|e| Error::Input(e.to_string()));
    let table = NuisanceTable::new(shape(phi, m)?, Array2::zeros((n, m)), shape(var, m)?)?;
    Ok((shape(xs, d)?, table))
}
