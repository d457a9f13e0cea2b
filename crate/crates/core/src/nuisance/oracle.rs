//! True nuisance functions of the two-covariate, two-action design in
//! [`crate::simulate`].

use statrs::distribution::{ContinuousCDF, Normal};

use crate::model::{NuisanceModel, OutcomeModel};
use crate::simulate::DgpConfig;

/// Closed-form `phi`, `mu` and unit variance. Action 0 is `-`, action 1 is `+`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleNuisance {
    pub q2: f64,
    pub beta: f64,
}

pub fn oracle_nuisance(dgp: &DgpConfig) -> OracleNuisance {
    OracleNuisance {
        q2: dgp.q2,
        beta: dgp.beta,
    }
}

pub(crate) fn std_normal_cdf(z: f64) -> f64 {
    Normal::standard().cdf(z)
}

/// `sign(v) |v|^p`.
pub(crate) fn signed_pow(v: f64, p: f64) -> f64 {
    if p == 1.0 {
        v
    } else {
        v.signum() * v.abs().powf(p)
    }
}

impl OracleNuisance {
    /// Latent `x'` recovered from observed `x`.
    pub fn latent(&self, x: &[f64]) -> [f64; 2] {
        let p = 1.0 / self.q2;
        [signed_pow(x[0], p), signed_pow(x[1], p)]
    }

    /// `mu(+|x) - mu(-|x)`.
    pub fn cate(&self, x: &[f64]) -> f64 {
        let [a, b] = self.latent(x);
        a + b + 0.25
    }
}

impl OutcomeModel for OracleNuisance {
    fn n_actions(&self) -> usize {
        2
    }

    fn outcome_mean_into(&self, x: &[f64], out: &mut [f64]) {
        let [a, b] = self.latent(x);
        out[0] = a;
        out[1] = a + a + b + 0.25;
    }
}

impl NuisanceModel for OracleNuisance {
    fn propensity_into(&self, x: &[f64], out: &mut [f64]) {
        let a = self.latent(x)[0];
        out[1] = std_normal_cdf(self.beta * a);
        out[0] = std_normal_cdf(-self.beta * a);
    }
}
