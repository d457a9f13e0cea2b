//! Per-record, per-action score matrices `Gamma`. A policy's estimated value is
//! `(1/n) sum_i sum_a pi(a|x_i) Gamma_ia`, so learning a policy means
//! maximizing that sum over the policy class.

use std::fmt;
use std::io::Write;

use ndarray::Array2;

use crate::data::{csv_io, ObservationSet};
use crate::error::{Error, Result};
use crate::model::{NuisanceTable, PROPENSITY_FLOOR};
use crate::policy::Policy;
use crate::retarget;

/// Score construction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ScoreMethod {
    /// `1{A_i = a} Y_i`; two actions only.
    Unweighted,
    /// `1{A_i = a} Y_i / phi(a|x_i)`.
    Ipw,
    /// `mu(a|x_i)`.
    Direct,
    /// `mu(a|x_i) + 1{A_i = a} (Y_i - mu(a|x_i)) / phi(a|x_i)`.
    Dr,
}

impl ScoreMethod {
    pub const ALL: [ScoreMethod; 4] = [Self::Unweighted, Self::Ipw, Self::Direct, Self::Dr];

    pub fn name(self) -> &'static str {
        match self {
            Self::Unweighted => "unweighted",
            Self::Ipw => "ipw",
            Self::Direct => "dm",
            Self::Dr => "dr",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.name() == s)
    }

    fn uses_propensity(self) -> bool {
        matches!(self, Self::Ipw | Self::Dr)
    }
}

impl fmt::Display for ScoreMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Strength of bias-regularized retargeting.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Padding {
    /// Two actions: `(1 - phi^2) / (c + 1 - phi^2)` with `phi = phi(+) - phi(-)`.
    /// `c = 0` leaves scores unchanged, `c -> inf` approaches full retargeting.
    C(f64),
    /// `(kappa + 4 lambda^2)^-1` from [`retarget::bias_regularized`].
    Lambda(f64),
}

/// Row multipliers applied by [`apply_retargeting`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RetargetMode {
    /// `1 - phi^2 = 4 phi(+) phi(-)`.
    BinaryHomoskedastic,
    /// `(sum_a 1/phi(a|x) + m/2 - 1)^-1`.
    MultiHomoskedastic,
    /// Plug-in optimal weights of [`retarget::optimal_multi`].
    Optimal,
    BiasRegularized(Padding),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix {
    gamma: Array2<f64>,
    method: ScoreMethod,
    retargeted: bool,
    padding_c: Option<f64>,
    multipliers: Vec<f64>,
    scale: f64,
    clipped: usize,
}

impl ScoreMatrix {
    /// Wraps raw scores, e.g. oracle `mu(a|x_i)`.
    pub fn from_gamma(gamma: Array2<f64>, method: ScoreMethod) -> Result<Self> {
        if let Some(v) = gamma.iter().find(|v| !v.is_finite()) {
            return Err(Error::Input(format!("non-finite score {v}")));
        }
        if gamma.ncols() < 2 {
            return Err(Error::Input("scores need at least 2 actions".into()));
        }
        let n = gamma.nrows();
        Ok(Self {
            gamma: gamma.as_standard_layout().into_owned(),
            method,
            retargeted: false,
            padding_c: None,
            multipliers: vec![1.0; n],
            scale: 1.0,
            clipped: 0,
        })
    }

    pub fn gamma(&self) -> &Array2<f64> {
        &self.gamma
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let m = self.n_actions();
        &self.gamma.as_slice().expect("standard layout")[i * m..(i + 1) * m]
    }

    pub fn method(&self) -> ScoreMethod {
        self.method
    }

    pub fn retargeted(&self) -> bool {
        self.retargeted
    }

    pub fn padding_c(&self) -> Option<f64> {
        self.padding_c
    }

    /// Row multipliers from retargeting (all one otherwise).
    pub fn multipliers(&self) -> &[f64] {
        &self.multipliers
    }

    /// Divisor applied by [`normalize`] (one if never normalized).
    pub fn scale(&self) -> f64 {
        self.scale
    }

    /// Propensities raised to the floor while building.
    pub fn clipped(&self) -> usize {
        self.clipped
    }

    pub fn len(&self) -> usize {
        self.gamma.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.gamma.nrows() == 0
    }

    pub fn n_actions(&self) -> usize {
        self.gamma.ncols()
    }

    /// `sum_i Gamma_{i, a_i}` for a deterministic assignment.
    pub fn assignment_objective(&self, assignment: &[usize]) -> f64 {
        assignment.iter().enumerate().map(|(i, &a)| self.gamma[[i, a]]).sum()
    }

    /// `sum_i max_a Gamma_ia`, an upper bound for any policy class.
    pub fn upper_bound(&self) -> f64 {
        self.gamma
            .outer_iter()
            .map(|r| r.iter().copied().fold(f64::NEG_INFINITY, f64::max))
            .sum()
    }

    /// Export `i, gamma_1..gamma_m, weight_multiplier` with 1-based `i`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["i".to_string()];
        header.extend((1..=self.n_actions()).map(|a| format!("gamma_{a}")));
        header.push("weight_multiplier".into());
        w.write_record(&header).map_err(csv_io)?;
        for (i, row) in self.gamma.outer_iter().enumerate() {
            let mut rec = vec![(i + 1).to_string()];
            rec.extend(row.iter().map(|v| v.to_string()));
            rec.push(self.multipliers[i].to_string());
            w.write_record(&rec).map_err(csv_io)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn check_rows(data: &ObservationSet, table: &NuisanceTable) -> Result<()> {
    if table.len() != data.len() || table.n_actions() != data.n_actions() {
        return Err(Error::Contract(format!(
            "nuisance table is {}x{}, data has {} records and {} actions",
            table.len(),
            table.n_actions(),
            data.len(),
            data.n_actions()
        )));
    }
    Ok(())
}

/// Scores of `method` from nuisance values at the data records.
/// Propensities below [`PROPENSITY_FLOOR`] are raised to it and counted.
pub fn build_scores(data: &ObservationSet, table: &NuisanceTable, method: ScoreMethod) -> Result<ScoreMatrix> {
    check_rows(data, table)?;
    let m = data.n_actions();
    if method == ScoreMethod::Unweighted && m != 2 {
        return Err(Error::Contract(format!("unweighted scores need 2 actions, got {m}")));
    }
    let n = data.len();
    let mut gamma = Array2::zeros((n, m));
    let mut clipped = 0;
    let phi = table.propensity();
    let mu = table.outcome_mean();
    for i in 0..n {
        let (a, y) = (data.actions()[i], data.rewards()[i]);
        let mut p = phi[[i, a]];
        if method.uses_propensity() && p < PROPENSITY_FLOOR {
            p = PROPENSITY_FLOOR;
            clipped += 1;
        }
        match method {
            ScoreMethod::Unweighted => gamma[[i, a]] = y,
            ScoreMethod::Ipw => gamma[[i, a]] = y / p,
            ScoreMethod::Direct => {
                for b in 0..m {
                    gamma[[i, b]] = mu[[i, b]];
                }
            }
            ScoreMethod::Dr => {
                for b in 0..m {
                    gamma[[i, b]] = mu[[i, b]];
                }
                gamma[[i, a]] += (y - mu[[i, a]]) / p;
            }
        }
    }
    if clipped > 0 {
        log::warn!("{clipped} propensities raised to {PROPENSITY_FLOOR} while building {method} scores");
    }
    let mut s = ScoreMatrix::from_gamma(gamma, method)?;
    s.clipped = clipped;
    Ok(s)
}

/// Per-record multipliers `w(x_i)` of `mode` (not normalized).
pub fn retargeting_multipliers(table: &NuisanceTable, mode: RetargetMode) -> Result<Vec<f64>> {
    let m = table.n_actions();
    let phi = table.propensity();
    let floor = |p: f64| p.max(PROPENSITY_FLOOR);
    let need_binary = |what: &str| {
        if m == 2 {
            Ok(())
        } else {
            Err(Error::Contract(format!("{what} retargeting needs 2 actions, got {m}")))
        }
    };
    match mode {
        RetargetMode::BinaryHomoskedastic => {
            need_binary("binary-homoskedastic")?;
            Ok(phi.outer_iter().map(|r| 4.0 * floor(r[0]) * floor(r[1])).collect())
        }
        RetargetMode::MultiHomoskedastic => {
            let extra = m as f64 / 2.0 - 1.0;
            Ok(phi
                .outer_iter()
                .map(|r| 1.0 / (r.iter().map(|&p| 1.0 / floor(p)).sum::<f64>() + extra))
                .collect())
        }
        RetargetMode::Optimal => Ok(retarget::optimal_multi(table)?.weights),
        RetargetMode::BiasRegularized(Padding::C(c)) => {
            need_binary("c-padded")?;
            if !(c >= 0.0) || !c.is_finite() {
                return Err(Error::Input(format!("c must be finite and >= 0, got {c}")));
            }
            Ok(phi
                .outer_iter()
                .map(|r| {
                    let overlap = 4.0 * floor(r[0]) * floor(r[1]);
                    overlap / (c + overlap)
                })
                .collect())
        }
        RetargetMode::BiasRegularized(Padding::Lambda(lambda)) => {
            Ok(retarget::bias_regularized(table, lambda)?.weights)
        }
    }
}

/// Scales row `i` of the scores by `w(x_i)` computed from `table`.
pub fn apply_retargeting(scores: &ScoreMatrix, table: &NuisanceTable, mode: RetargetMode) -> Result<ScoreMatrix> {
    if scores.retargeted {
        return Err(Error::Contract("scores are already retargeted".into()));
    }
    if table.len() != scores.len() || table.n_actions() != scores.n_actions() {
        return Err(Error::Contract("nuisance table does not match the scores".into()));
    }
    let w = retargeting_multipliers(table, mode)?;
    let mut out = scores.clone();
    for (mut row, &wi) in out.gamma.outer_iter_mut().zip(&w) {
        row.mapv_inplace(|v| v * wi);
    }
    out.retargeted = true;
    out.padding_c = match mode {
        RetargetMode::BiasRegularized(Padding::C(c)) => Some(c),
        _ => None,
    };
    out.multipliers = w;
    Ok(out)
}

/// Divides by the mean per-record score range `mean_i (max_a Gamma_ia - min_a Gamma_ia)`,
/// which for two actions is `mean_i |Gamma_i+ - Gamma_i-|`.
pub fn normalize(scores: &ScoreMatrix) -> Result<ScoreMatrix> {
    if scores.is_empty() {
        return Err(Error::Degenerate("no scores to normalize".into()));
    }
    let total: f64 = scores
        .gamma
        .outer_iter()
        .map(|r| {
            let (lo, hi) = r.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            });
            hi - lo
        })
        .sum();
    let divisor = total / scores.len() as f64;
    if !(divisor > 0.0) || !divisor.is_finite() {
        return Err(Error::Degenerate(
            "scores do not distinguish actions at any record".into(),
        ));
    }
    let mut out = scores.clone();
    out.gamma.mapv_inplace(|v| v / divisor);
    out.scale *= divisor;
    Ok(out)
}

/// `(1/n) sum_i sum_a pi(a|x_i) Gamma_ia`.
pub fn estimate_value(scores: &ScoreMatrix, policy: &dyn Policy, data: &ObservationSet) -> Result<f64> {
    let (n, m) = (scores.len(), scores.n_actions());
    if data.len() != n || policy.n_actions() != m {
        return Err(Error::Contract("scores, policy and data disagree in size".into()));
    }
    if n == 0 {
        return Err(Error::Input("no records".into()));
    }
    let mut probs = vec![0.0; m];
    let mut total = 0.0;
    for i in 0..n {
        policy.probs_into(data.x_slice(i), &mut probs);
        total += probs.iter().zip(scores.row(i)).map(|(p, g)| p * g).sum::<f64>();
    }
    Ok(total / n as f64)
}
