//! The two-covariate, two-action synthetic design, the scenario grid and the
//! replication engine that measures test regret of learned policies.

use std::fmt;
use std::io::Write;
use std::sync::atomic::{AtomicUsize, Ordering};

use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::data::{csv_io, ObservationSet};
use crate::error::{Error, Result};
use crate::model::{NuisanceModel, NuisanceTable, OutcomeModel};
use crate::nuisance::oracle::{signed_pow, std_normal_cdf};
use crate::nuisance::{
    oracle_nuisance, CrossFitPlan, CrossFitted, OutcomeMethod, PropensityMethod, StumpConfig, DEFAULT_FOLDS,
};
use crate::policyopt::{solve_binary_linear_many, GridSearchConfig};
use crate::scores::{apply_retargeting, build_scores, normalize, Padding, RetargetMode, ScoreMatrix, ScoreMethod};
use crate::seed::{derive, real, stream, Stream};
use crate::value::regret_tabulated;

/// Parameters of the synthetic design.
///
/// Latent `X''` is uniform on `[-1,1]^2`, `X' = sign(X'')|X''|^q1`, observed
/// `X = sign(X')|X'|^q2`. Action `+` (index 1) is taken with probability
/// `Phi(beta X'_1)`. `Y(-) = X'_1 + eps`, `Y(+) = Y(-) + X'_1 + X'_2 + 1/4`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DgpConfig {
    /// Covariate-shift power; training data always uses 1.
    pub q1: f64,
    /// Misspecification power; 1 makes the optimal rule linear in `X`.
    pub q2: f64,
    /// Overlap knob, larger is worse.
    pub beta: f64,
    pub n: usize,
    pub seed: u64,
}

impl DgpConfig {
    pub fn new(q1: f64, q2: f64, beta: f64, n: usize, seed: u64) -> Result<Self> {
        let cfg = Self { q1, q2, beta, n, seed };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.q1 > 0.0 && self.q1.is_finite()) || !(self.q2 > 0.0 && self.q2.is_finite()) {
            return Err(Error::Input(format!(
                "q1 and q2 must be positive, got {} and {}",
                self.q1, self.q2
            )));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(Error::Input(format!("beta must be >= 0, got {}", self.beta)));
        }
        Ok(())
    }
}

/// Draws `(x'', x', x)` for one record.
fn draw_point(rng: &mut Stream, q1: f64, q2: f64) -> ([f64; 2], [f64; 2]) {
    let mut latent = [0.0; 2];
    let mut x = [0.0; 2];
    for j in 0..2 {
        let u: f64 = rng.random_range(-1.0..=1.0);
        latent[j] = signed_pow(u, q1);
        x[j] = signed_pow(latent[j], q2);
    }
    (latent, x)
}

/// Training sample with `q1 = 1` regardless of `config.q1`.
pub fn draw_training(config: &DgpConfig) -> Result<ObservationSet> {
    config.validate()?;
    let mut rng = stream(config.seed);
    let n = config.n;
    let mut xs = Array2::zeros((n, 2));
    let mut actions = Vec::with_capacity(n);
    let mut rewards = Vec::with_capacity(n);
    for i in 0..n {
        let (lat, x) = draw_point(&mut rng, 1.0, config.q2);
        xs[[i, 0]] = x[0];
        xs[[i, 1]] = x[1];
        let eps: f64 = rng.sample(StandardNormal);
        let u: f64 = rng.random();
        let plus = u < std_normal_cdf(config.beta * lat[0]);
        let y_minus = lat[0] + eps;
        let y = if plus {
            y_minus + lat[0] + lat[1] + 0.25
        } else {
            y_minus
        };
        actions.push(usize::from(plus));
        rewards.push(y);
    }
    ObservationSet::new(xs, actions, rewards, 2)
}

/// Test covariates with their true outcome means.
#[derive(Debug, Clone, PartialEq)]
pub struct TestSet {
    pub covariates: Array2<f64>,
    pub outcome_mean: Array2<f64>,
}

/// `size` covariate draws under shift `q1` and misspecification `q2`, with
/// the oracle `mu(.|x)`.
pub fn draw_test(q1: f64, q2: f64, size: usize, seed: u64) -> Result<TestSet> {
    if size == 0 {
        return Err(Error::Input("test set size must be at least 1".into()));
    }
    let cfg = DgpConfig::new(q1, q2, 0.0, size, seed)?;
    let mut rng = stream(seed);
    let mut xs = Array2::zeros((size, 2));
    for i in 0..size {
        let (_, x) = draw_point(&mut rng, q1, q2);
        xs[[i, 0]] = x[0];
        xs[[i, 1]] = x[1];
    }
    let outcome_mean = oracle_nuisance(&cfg).tabulate_mean(&xs);
    Ok(TestSet {
        covariates: xs,
        outcome_mean,
    })
}

/// Test-time covariate distribution relative to training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Shift {
    /// `q1 = 1`.
    Stationary,
    /// `q1 = 2`.
    Inward,
    /// `q1 = 1/2`.
    Outward,
}

impl Shift {
    pub fn q1(self) -> f64 {
        match self {
            Self::Stationary => 1.0,
            Self::Inward => 2.0,
            Self::Outward => 0.5,
        }
    }
}

/// One of the six evaluation settings: well-specified (`q2 = 1`) or
/// misspecified (`q2 = 1/2`), crossed with the test-time shift.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Scenario {
    pub misspecified: bool,
    pub shift: Shift,
}

impl Scenario {
    pub const ALL: [Scenario; 6] = [
        Scenario::new(false, Shift::Stationary),
        Scenario::new(false, Shift::Inward),
        Scenario::new(false, Shift::Outward),
        Scenario::new(true, Shift::Stationary),
        Scenario::new(true, Shift::Inward),
        Scenario::new(true, Shift::Outward),
    ];

    pub const fn new(misspecified: bool, shift: Shift) -> Self {
        Self { misspecified, shift }
    }

    pub fn q2(self) -> f64 {
        if self.misspecified {
            0.5
        } else {
            1.0
        }
    }

    pub fn q1(self) -> f64 {
        self.shift.q1()
    }

    /// Names such as `well-stationary` or `mis-inward`.
    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|sc| sc.to_string() == s)
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let spec = if self.misspecified { "mis" } else { "well" };
        let shift = match self.shift {
            Shift::Stationary => "stationary",
            Shift::Inward => "inward",
            Shift::Outward => "outward",
        };
        write!(f, "{spec}-{shift}")
    }
}

/// Reweighting applied to a method's scores.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Variant {
    Plain,
    /// Scores times `1 - phi_hat^2`.
    Retargeted,
    /// Scores times `(1 - phi_hat^2) / (c + 1 - phi_hat^2)`.
    Padded(f64),
}

/// A policy learning method: scores plus reweighting.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Method {
    pub score: ScoreMethod,
    pub variant: Variant,
}

impl Method {
    pub fn new(score: ScoreMethod, variant: Variant) -> Self {
        Self { score, variant }
    }

    pub fn retargeted(&self) -> bool {
        self.variant != Variant::Plain
    }

    pub fn c(&self) -> Option<f64> {
        match self.variant {
            Variant::Padded(c) => Some(c),
            _ => None,
        }
    }

    fn mode(&self) -> Option<RetargetMode> {
        match self.variant {
            Variant::Plain => None,
            Variant::Retargeted => Some(RetargetMode::BinaryHomoskedastic),
            Variant::Padded(c) => Some(RetargetMode::BiasRegularized(Padding::C(c))),
        }
    }
}

/// Where the nuisances used to build scores come from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NuisanceSource {
    /// True `phi` and `mu`.
    Oracle,
    /// Cross-fitted estimates.
    Fitted {
        propensity: PropensityMethod,
        outcome: OutcomeMethod,
        folds: usize,
    },
}

impl Default for NuisanceSource {
    fn default() -> Self {
        Self::Fitted {
            propensity: PropensityMethod::BoostedStumps(StumpConfig::default()),
            outcome: OutcomeMethod::BoostedStumps(StumpConfig::default()),
            folds: DEFAULT_FOLDS,
        }
    }
}

/// A full sweep: every scenario, method, sample size and overlap level.
#[derive(Debug, Clone, PartialEq)]
pub struct Experiment {
    pub scenarios: Vec<Scenario>,
    pub methods: Vec<Method>,
    pub sizes: Vec<usize>,
    pub betas: Vec<f64>,
    pub replicates: usize,
    pub test_size: usize,
    pub nuisance: NuisanceSource,
    pub grid: GridSearchConfig,
    pub seed: u64,
}

/// Default test set size.
pub const TEST_SIZE: usize = 100_000;
/// Default replicate count.
pub const REPLICATES: usize = 200;

/// `count` points evenly spaced on a log scale from `lo` to `hi`.
pub fn log_grid(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    if count == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..count)
        .map(|k| (a + (b - a) * k as f64 / (count - 1) as f64).exp())
        .collect()
}

/// Sample sizes `200 * 2^k` for `k = 0..8`.
pub fn default_sizes() -> Vec<usize> {
    (0..8).map(|k| 200 << k).collect()
}

/// Ten overlap levels from 0.1 to 10.
pub fn default_betas() -> Vec<f64> {
    log_grid(0.1, 10.0, 10)
}

/// Eleven padding levels from 1e-3 to 1e3.
pub fn default_cs() -> Vec<f64> {
    log_grid(1e-3, 1e3, 11)
}

/// Mean test regret of one method at one grid point.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioResult {
    pub scenario: Scenario,
    pub method: Method,
    pub n: usize,
    pub beta: f64,
    pub mean_regret: f64,
    /// Sample standard deviation over replicates divided by `sqrt(replicates)`.
    pub se: f64,
    /// Successful replicates.
    pub replicates: usize,
    pub failures: usize,
    /// Seeds of the failed replicates.
    pub failed_seeds: Vec<u64>,
}

impl ScenarioResult {
    /// `(mean_a - mean_b) / sqrt(se_a^2 + se_b^2)`.
    pub fn z_against(&self, other: &ScenarioResult) -> f64 {
        (self.mean_regret - other.mean_regret) / (self.se * self.se + other.se * other.se).sqrt()
    }
}

/// Seed of replicate `r` at `(n, beta, q2)`.
pub fn replicate_seed(master: u64, n: usize, beta: f64, q2: f64, r: usize) -> u64 {
    derive(master, &[n as u64, real(beta), real(q2), r as u64])
}

fn test_seed(master: u64, q1: f64, q2: f64) -> u64 {
    derive(master, &[u64::MAX, real(q1), real(q2)])
}

/// Nuisance values at the training records.
pub fn training_nuisance(data: &ObservationSet, dgp: &DgpConfig, source: &NuisanceSource) -> Result<NuisanceTable> {
    match *source {
        NuisanceSource::Oracle => oracle_nuisance(dgp).tabulate(data.covariates()),
        NuisanceSource::Fitted {
            propensity,
            outcome,
            folds,
        } => {
            let plan = CrossFitPlan::new(data.len(), folds, &mut stream(derive(dgp.seed, &[2])))?;
            CrossFitted::fit(data, &plan, propensity, outcome, derive(dgp.seed, &[3]))?.table()
        }
    }
}

/// Normalized scores of every method for one training sample, in `methods`
/// order. Variants of one score method share the unweighted matrix.
pub fn method_scores(data: &ObservationSet, table: &NuisanceTable, methods: &[Method]) -> Vec<Result<ScoreMatrix>> {
    let mut base: Vec<(ScoreMethod, Result<ScoreMatrix>)> = Vec::new();
    methods
        .iter()
        .map(|m| {
            let raw = match base.iter().find(|(s, _)| *s == m.score) {
                Some((_, r)) => r,
                None => {
                    base.push((m.score, build_scores(data, table, m.score)));
                    &base.last().expect("just pushed").1
                }
            };
            let raw = raw.as_ref().map_err(|e| Error::Degenerate(e.to_string()))?;
            let scores = match m.mode() {
                None => raw.clone(),
                Some(mode) => apply_retargeting(raw, table, mode)?,
            };
            normalize(&scores)
        })
        .collect()
}

/// Test regret of every method for one replicate, `[scenario][method]`;
/// `None` marks a failed method.
fn run_replicate(
    dgp: &DgpConfig,
    exp: &Experiment,
    tests: &[(Scenario, &TestSet)],
) -> std::result::Result<Vec<Vec<Option<f64>>>, Error> {
    let data = draw_training(dgp)?;
    let table = training_nuisance(&data, dgp, &exp.nuisance)?;
    let scores = method_scores(&data, &table, &exp.methods);
    let ok: Vec<&ScoreMatrix> = scores.iter().filter_map(|s| s.as_ref().ok()).collect();
    let mut solved = solve_binary_linear_many(&ok, data.covariates(), &exp.grid)?.into_iter();
    let policies: Vec<_> = scores
        .iter()
        .map(|s| {
            s.as_ref()
                .ok()
                .map(|_| solved.next().expect("one solution per matrix").policy)
        })
        .collect();
    tests
        .iter()
        .map(|(_, t)| {
            policies
                .iter()
                .map(|p| match p {
                    Some(p) => regret_tabulated(p, &t.covariates, &t.outcome_mean).map(Some),
                    None => Ok(None),
                })
                .collect()
        })
        .collect()
}

struct Cell {
    n: usize,
    beta: f64,
    q2: f64,
}

/// Runs the experiment on a pool of `workers` threads. Results are ordered by
/// scenario, then sample size, then overlap, then method, and do not depend on
/// `workers`. `progress` receives `(done, total)` replicate counts.
pub fn run_experiment(
    exp: &Experiment,
    workers: usize,
    progress: Option<&(dyn Fn(usize, usize) + Sync)>,
) -> Result<Vec<ScenarioResult>> {
    if exp.replicates < 2 {
        return Err(Error::Input(format!(
            "need at least 2 replicates, got {}",
            exp.replicates
        )));
    }
    if exp.methods.is_empty() || exp.scenarios.is_empty() || exp.sizes.is_empty() || exp.betas.is_empty() {
        return Err(Error::Input(
            "methods, scenarios, sizes and betas must all be non-empty".into(),
        ));
    }
    for &beta in &exp.betas {
        DgpConfig::new(1.0, 1.0, beta, 1, 0)?;
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Input(format!("thread pool: {e}")))?;
    pool.install(|| run_in_pool(exp, progress))
}

fn run_in_pool(exp: &Experiment, progress: Option<&(dyn Fn(usize, usize) + Sync)>) -> Result<Vec<ScenarioResult>> {
    let mut q2s: Vec<f64> = Vec::new();
    for s in &exp.scenarios {
        if !q2s.contains(&s.q2()) {
            q2s.push(s.q2());
        }
    }
    let tests: Vec<(Scenario, TestSet)> = exp
        .scenarios
        .par_iter()
        .map(|&s| {
            Ok((
                s,
                draw_test(s.q1(), s.q2(), exp.test_size, test_seed(exp.seed, s.q1(), s.q2()))?,
            ))
        })
        .collect::<Result<_>>()?;
    let mut cells = Vec::new();
    for &q2 in &q2s {
        for &n in &exp.sizes {
            for &beta in &exp.betas {
                cells.push(Cell { n, beta, q2 });
            }
        }
    }
    let tasks: Vec<(usize, usize)> = (0..cells.len())
        .flat_map(|c| (0..exp.replicates).map(move |r| (c, r)))
        .collect();
    let total = tasks.len();
    let done = AtomicUsize::new(0);
    let outcomes: Vec<(u64, std::result::Result<Vec<Vec<Option<f64>>>, Error>)> = tasks
        .par_iter()
        .map(|&(c, r)| {
            let cell = &cells[c];
            let seed = replicate_seed(exp.seed, cell.n, cell.beta, cell.q2, r);
            let dgp = DgpConfig {
                q1: 1.0,
                q2: cell.q2,
                beta: cell.beta,
                n: cell.n,
                seed,
            };
            let mine: Vec<(Scenario, &TestSet)> = tests
                .iter()
                .filter(|(s, _)| s.q2() == cell.q2)
                .map(|(s, t)| (*s, t))
                .collect();
            let out = run_replicate(&dgp, exp, &mine);
            if let Err(e) = &out {
                log::warn!(
                    "replicate {r} (n={}, beta={}, seed={seed}) failed: {e}",
                    cell.n,
                    cell.beta
                );
            }
            let k = done.fetch_add(1, Ordering::Relaxed) + 1;
            if let Some(p) = progress {
                p(k, total);
            }
            (seed, out)
        })
        .collect();

    let mut results = Vec::new();
    for &scenario in &exp.scenarios {
        let q2 = scenario.q2();
        let slot = exp
            .scenarios
            .iter()
            .filter(|s| s.q2() == q2)
            .position(|s| *s == scenario)
            .expect("present");
        for &n in &exp.sizes {
            for &beta in &exp.betas {
                let c = cells
                    .iter()
                    .position(|cl| cl.n == n && cl.beta == beta && cl.q2 == q2)
                    .expect("cell exists");
                let reps = &outcomes[c * exp.replicates..(c + 1) * exp.replicates];
                for (mi, &method) in exp.methods.iter().enumerate() {
                    let mut values = Vec::new();
                    let mut failed_seeds = Vec::new();
                    for (seed, out) in reps {
                        match out.as_ref().map(|v| v[slot][mi]) {
                            Ok(Some(v)) => values.push(v),
                            _ => failed_seeds.push(*seed),
                        }
                    }
                    let (mean_regret, se) = mean_and_se(&values);
                    results.push(ScenarioResult {
                        scenario,
                        method,
                        n,
                        beta,
                        mean_regret,
                        se,
                        replicates: values.len(),
                        failures: failed_seeds.len(),
                        failed_seeds,
                    });
                }
            }
        }
    }
    Ok(results)
}

/// Sample mean and standard error (`sd / sqrt(k)`, `sd` with `k - 1`).
pub fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let k = values.len();
    if k == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / k as f64;
    if k == 1 {
        return (mean, f64::NAN);
    }
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    (mean, (ss / (k - 1) as f64).sqrt() / (k as f64).sqrt())
}

/// Header of [`write_results`].
pub const RESULTS_HEADER: [&str; 12] = [
    "scenario",
    "method",
    "retargeted",
    "n",
    "beta",
    "c",
    "q1_test",
    "q2",
    "mean_regret",
    "se",
    "replicates",
    "failures",
];

/// One CSV row per result; `c` is empty unless the method is padded.
pub fn write_results<W: Write>(results: &[ScenarioResult], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(RESULTS_HEADER).map_err(csv_io)?;
    for r in results {
        w.write_record([
            r.scenario.to_string(),
            r.method.score.to_string(),
            r.method.retargeted().to_string(),
            r.n.to_string(),
            r.beta.to_string(),
            r.method.c().map(|c| c.to_string()).unwrap_or_default(),
            r.scenario.q1().to_string(),
            r.scenario.q2().to_string(),
            r.mean_regret.to_string(),
            r.se.to_string(),
            r.replicates.to_string(),
            r.failures.to_string(),
        ])
        .map_err(csv_io)?;
    }
    w.flush()?;
    Ok(())
}
