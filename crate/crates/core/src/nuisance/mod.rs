//! Cross-fitted nuisance estimation and the closed-form oracle for the
//! synthetic design.
//!
//! Every fitter returns out-of-fold values: record `i` is predicted by a model
//! trained on the folds that do not contain `i`.

mod crossfit;
mod least_squares;
mod logistic;
pub(crate) mod oracle;
mod stumps;

use std::io::Write;

use ndarray::Array2;
use rayon::prelude::*;

use crate::data::ObservationSet;
use crate::error::{Error, Result};
use crate::model::{NuisanceTable, PROPENSITY_FLOOR};
use crate::seed::{derive, stream};

pub use crossfit::{CrossFitPlan, DEFAULT_FOLDS};
pub use oracle::{oracle_nuisance, OracleNuisance};
pub use stumps::StumpConfig;

/// Propensity model family.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PropensityMethod {
    /// Binary logistic regression (two actions only).
    Logistic,
    MultinomialLogistic,
    BoostedStumps(StumpConfig),
}

/// Per-arm outcome regression family.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OutcomeMethod {
    LeastSquares,
    BoostedStumps(StumpConfig),
}

/// Least-squares needs `d + 1` records per arm; stumps need this many.
pub const MIN_STUMP_RECORDS: usize = 10;

fn rows_of<'a>(data: &'a ObservationSet, idx: &[usize]) -> Vec<&'a [f64]> {
    idx.iter().map(|&i| data.x_slice(i)).collect()
}

fn check_plan(data: &ObservationSet, plan: &CrossFitPlan) -> Result<()> {
    if plan.len() != data.len() {
        return Err(Error::Contract(format!(
            "plan covers {} records, data has {}",
            plan.len(),
            data.len()
        )));
    }
    Ok(())
}

/// Clips each component to at least the floor and rescales the rest so the
/// row still sums to one.
pub fn floor_and_renormalize(row: &mut [f64], floor: f64) {
    let mut pinned = vec![false; row.len()];
    for v in row.iter_mut() {
        if !v.is_finite() || *v < 0.0 {
            *v = 0.0;
        }
    }
    loop {
        let fixed: f64 = pinned.iter().filter(|&&p| p).count() as f64 * floor;
        let free: f64 = row.iter().zip(&pinned).filter(|(_, &p)| !p).map(|(v, _)| v).sum();
        let scale = if free > 0.0 { (1.0 - fixed) / free } else { 0.0 };
        let mut changed = false;
        for (v, p) in row.iter_mut().zip(pinned.iter_mut()) {
            if *p {
                *v = floor;
            } else if *v * scale < floor {
                *p = true;
                *v = floor;
                changed = true;
            }
        }
        if !changed {
            for (v, p) in row.iter_mut().zip(&pinned) {
                if !p {
                    *v *= scale;
                }
            }
            return;
        }
    }
}

/// Out-of-fold propensity rows, each with components at least
/// [`PROPENSITY_FLOOR`] summing to one.
pub fn fit_propensity(
    data: &ObservationSet,
    plan: &CrossFitPlan,
    method: PropensityMethod,
    seed: u64,
) -> Result<Array2<f64>> {
    check_plan(data, plan)?;
    let m = data.n_actions();
    if method == PropensityMethod::Logistic && m != 2 {
        return Err(Error::Contract(format!("binary logistic propensity with {m} actions")));
    }
    let fold_preds: Vec<(Vec<usize>, Vec<f64>)> = (0..plan.folds())
        .into_par_iter()
        .map(|k| {
            let train = plan.training(k);
            let labels: Vec<usize> = train.iter().map(|&i| data.actions()[i]).collect();
            let mut seen = vec![false; m];
            for &a in &labels {
                seen[a] = true;
            }
            if let Some(a) = seen.iter().position(|s| !s) {
                return Err(Error::Fit {
                    fold: k + 1,
                    action: a + 1,
                    detail: "action absent from the training folds".into(),
                });
            }
            let rows = rows_of(data, &train);
            let test = plan.held_out(k);
            let mut out = vec![0.0; test.len() * m];
            match method {
                PropensityMethod::Logistic | PropensityMethod::MultinomialLogistic => {
                    let model = logistic::Multinomial::fit(&rows, &labels, m);
                    for (j, &i) in test.iter().enumerate() {
                        model.probs_into(data.x_slice(i), &mut out[j * m..(j + 1) * m]);
                    }
                }
                PropensityMethod::BoostedStumps(cfg) => {
                    let mut rng = stream(derive(seed, &[0, k as u64]));
                    let model = stumps::Classifier::fit(&rows, &labels, m, &cfg, &mut rng);
                    for (j, &i) in test.iter().enumerate() {
                        model.probs_into(data.x_slice(i), &mut out[j * m..(j + 1) * m]);
                    }
                }
            }
            Ok((test, out))
        })
        .collect::<Result<_>>()?;
    let mut phi = Array2::zeros((data.len(), m));
    for (test, out) in fold_preds {
        for (j, &i) in test.iter().enumerate() {
            let mut row = phi.row_mut(i);
            let row = row.as_slice_mut().expect("standard layout");
            row.copy_from_slice(&out[j * m..(j + 1) * m]);
            floor_and_renormalize(row, PROPENSITY_FLOOR);
        }
    }
    Ok(phi)
}

/// Out-of-fold `mu_hat(a|x_i)` for every record and action, one regression per
/// arm per fold.
pub fn fit_outcome(
    data: &ObservationSet,
    plan: &CrossFitPlan,
    method: OutcomeMethod,
    seed: u64,
) -> Result<Array2<f64>> {
    check_plan(data, plan)?;
    let m = data.n_actions();
    let need = match method {
        OutcomeMethod::LeastSquares => data.dim() + 1,
        OutcomeMethod::BoostedStumps(_) => MIN_STUMP_RECORDS,
    };
    let tasks: Vec<(usize, usize)> = (0..plan.folds()).flat_map(|k| (0..m).map(move |a| (k, a))).collect();
    let preds: Vec<(usize, usize, Vec<f64>)> = tasks
        .into_par_iter()
        .map(|(k, a)| {
            let train: Vec<usize> = plan
                .training(k)
                .into_iter()
                .filter(|&i| data.actions()[i] == a)
                .collect();
            let fit_err = |detail: String| Error::Fit {
                fold: k + 1,
                action: a + 1,
                detail,
            };
            if train.len() < need {
                return Err(fit_err(format!(
                    "{} training records for this arm, need {need}",
                    train.len()
                )));
            }
            let rows = rows_of(data, &train);
            let y: Vec<f64> = train.iter().map(|&i| data.rewards()[i]).collect();
            let test = plan.held_out(k);
            let out = match method {
                OutcomeMethod::LeastSquares => {
                    let coef = least_squares::fit(&rows, &y).map_err(fit_err)?;
                    test.iter()
                        .map(|&i| least_squares::predict(&coef, data.x_slice(i)))
                        .collect()
                }
                OutcomeMethod::BoostedStumps(cfg) => {
                    let mut rng = stream(derive(seed, &[1, k as u64, a as u64]));
                    let model = stumps::fit_regression(&rows, &y, &cfg, &mut rng);
                    test.iter().map(|&i| model.predict(data.x_slice(i))).collect()
                }
            };
            Ok((k, a, out))
        })
        .collect::<Result<_>>()?;
    let mut mu = Array2::zeros((data.len(), m));
    for (k, a, out) in preds {
        for (&i, v) in plan.held_out(k).iter().zip(out) {
            mu[[i, a]] = v;
        }
    }
    Ok(mu)
}

/// Propensity and outcome fits sharing one fold plan.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossFitted {
    pub propensity: Array2<f64>,
    pub outcome_mean: Array2<f64>,
}

impl CrossFitted {
    pub fn fit(
        data: &ObservationSet,
        plan: &CrossFitPlan,
        propensity: PropensityMethod,
        outcome: OutcomeMethod,
        seed: u64,
    ) -> Result<Self> {
        Ok(Self {
            propensity: fit_propensity(data, plan, propensity, derive(seed, &[0]))?,
            outcome_mean: fit_outcome(data, plan, outcome, derive(seed, &[1]))?,
        })
    }

    /// Table with unit outcome variance.
    pub fn table(&self) -> Result<NuisanceTable> {
        NuisanceTable::homoskedastic(self.propensity.clone(), self.outcome_mean.clone())
    }

    /// Audit CSV `i, phi_1..phi_m, mu_1..mu_m` with 1-based record index.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let m = self.propensity.ncols();
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["i".to_string()];
        header.extend((1..=m).map(|a| format!("phi_{a}")));
        header.extend((1..=m).map(|a| format!("mu_{a}")));
        w.write_record(&header).map_err(crate::data::csv_io)?;
        for (i, (p, mu)) in self
            .propensity
            .outer_iter()
            .zip(self.outcome_mean.outer_iter())
            .enumerate()
        {
            let mut rec = vec![(i + 1).to_string()];
            rec.extend(p.iter().chain(mu.iter()).map(|v| v.to_string()));
            w.write_record(&rec).map_err(crate::data::csv_io)?;
        }
        w.flush()?;
        Ok(())
    }
}
