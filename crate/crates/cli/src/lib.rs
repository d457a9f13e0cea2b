//! Command-line driver for retargeted policy learning.
//!
//! A run is described by a `key = value` file (see [`config`]) plus flags for
//! the seed, worker count and output directory. Three commands exist:
//! `weights` writes retargeting diagnostics, `learn` fits nuisances and learns
//! a linear policy, `simulate` runs the synthetic regret experiments.

pub mod config;

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use ndarray::Array2;
use retarget_core::model::read_propensity_csv;
use retarget_core::nuisance::{fit_propensity, oracle_nuisance, CrossFitPlan, CrossFitted};
use retarget_core::policyopt::{solve_binary_linear, solve_multi_linear, MultiSearchConfig};
use retarget_core::retarget::{bias_regularized, optimal_binary, optimal_multi, worst_case_bias, write_diagnostics};
use retarget_core::scores::{apply_retargeting, build_scores, estimate_value, normalize, Padding, RetargetMode};
use retarget_core::seed::{derive, stream};
use retarget_core::simulate::{draw_training, run_experiment, write_results, DgpConfig, Experiment};
use retarget_core::{Error, LinearPolicy, NuisanceModel, NuisanceTable, ObservationSet};

pub use config::{Command, RawConfig, RunConfig};
use config::{LearnConfig, LearnRetarget, SimulateConfig, WeightsConfig, WeightsMode, WeightsSource};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] Error),
    #[error("{path}: {source}")]
    File { path: PathBuf, source: std::io::Error },
    #[error("every scenario failed: {0}")]
    TotalFailure(String),
}

impl CliError {
    /// 2 config or input, 3 numeric singularity, 4 fitting, 5 total scenario failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) | Self::File { .. } => 2,
            Self::Core(e) => match e {
                Error::Singularity { .. } => 3,
                Error::Fit { .. } => 4,
                _ => 2,
            },
            Self::TotalFailure(_) => 5,
        }
    }
}

/// Flag values that override the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub workers: usize,
}

/// Reads the config at `path` and applies `overrides`.
pub fn load_config(path: &Path, overrides: &Overrides) -> Result<RunConfig, CliError> {
    let text = fs::read_to_string(path).map_err(|source| CliError::File {
        path: path.to_path_buf(),
        source,
    })?;
    let mut raw = RawConfig::parse(&text)?;
    if let Some(seed) = overrides.seed {
        raw.set("seed", seed.to_string());
    }
    if let Some(out) = &overrides.out {
        raw.set("out", out.to_string_lossy().into_owned());
    }
    RunConfig::from_raw(raw)
}

fn check_readable(path: &Path) -> Result<(), CliError> {
    File::open(path).map(drop).map_err(|source| CliError::File {
        path: path.to_path_buf(),
        source,
    })
}

fn create(path: PathBuf) -> Result<BufWriter<File>, CliError> {
    File::create(&path)
        .map(BufWriter::new)
        .map_err(|source| CliError::File { path, source })
}

/// Validates paths, then runs the command. Lines for standard output are
/// returned rather than printed.
pub fn run(cfg: &RunConfig, workers: usize) -> Result<Vec<String>, CliError> {
    match &cfg.command {
        Command::Weights(w) => match &w.source {
            WeightsSource::Data { path, .. } | WeightsSource::Propensities(path) => check_readable(path)?,
            WeightsSource::Synthetic { .. } => {}
        },
        Command::Learn(l) => check_readable(&l.input)?,
        Command::Simulate(_) => {}
    }
    fs::create_dir_all(&cfg.out).map_err(|source| CliError::File {
        path: cfg.out.clone(),
        source,
    })?;
    match &cfg.command {
        Command::Weights(w) => cmd_weights(w, cfg.seed, &cfg.out),
        Command::Learn(l) => cmd_learn(l, cfg.seed, &cfg.out),
        Command::Simulate(s) => cmd_simulate(s, cfg.seed, workers, &cfg.out),
    }
}

fn cmd_weights(cfg: &WeightsConfig, seed: u64, out: &Path) -> Result<Vec<String>, CliError> {
    let (xs, table): (Array2<f64>, NuisanceTable) = match &cfg.source {
        WeightsSource::Data { path, actions } => {
            let data = ObservationSet::load(path, *actions)?;
            let plan = CrossFitPlan::new(data.len(), cfg.folds, &mut stream(derive(seed, &[0])))?;
            let phi = fit_propensity(&data, &plan, cfg.propensity, derive(seed, &[1]))?;
            let mu = Array2::zeros(phi.dim());
            (data.covariates().clone(), NuisanceTable::homoskedastic(phi, mu)?)
        }
        WeightsSource::Propensities(path) => {
            let file = File::open(path).map_err(|source| CliError::File {
                path: path.clone(),
                source,
            })?;
            read_propensity_csv(file)?
        }
        WeightsSource::Synthetic { n, beta, q2 } => {
            let dgp = DgpConfig::new(1.0, *q2, *beta, *n, seed)?;
            let data = draw_training(&dgp)?;
            let table = oracle_nuisance(&dgp).tabulate(data.covariates())?;
            (data.covariates().clone(), table)
        }
    };
    let rt = match cfg.mode {
        WeightsMode::Optimal => optimal_multi(&table)?,
        WeightsMode::Binary => optimal_binary(&table)?,
        WeightsMode::Regularized(lambda) => bias_regularized(&table, lambda)?,
    };
    let path = out.join("weights.csv");
    let mut w = create(path.clone())?;
    write_diagnostics(&xs, &rt, &mut w)?;
    w.flush().map_err(|source| CliError::File { path, source })?;
    Ok(vec![
        format!("omega={}", rt.omega),
        format!("worst_case_bias={}", worst_case_bias(&rt.weights)?),
        format!("clipped_propensities={}", rt.diagnostics.clipped_propensities),
        format!("active_set_corrections={}", rt.diagnostics.active_set_corrections),
    ])
}

fn cmd_learn(cfg: &LearnConfig, seed: u64, out: &Path) -> Result<Vec<String>, CliError> {
    let data = ObservationSet::load(&cfg.input, cfg.actions)?;
    let plan = CrossFitPlan::new(data.len(), cfg.folds, &mut stream(derive(seed, &[0])))?;
    let fitted = CrossFitted::fit(&data, &plan, cfg.propensity, cfg.outcome, derive(seed, &[1]))?;
    let table = fitted.table()?;
    let raw = build_scores(&data, &table, cfg.method)?;
    let mode = match cfg.retarget {
        LearnRetarget::None => None,
        LearnRetarget::BinaryHomoskedastic => Some(RetargetMode::BinaryHomoskedastic),
        LearnRetarget::MultiHomoskedastic => Some(RetargetMode::MultiHomoskedastic),
        LearnRetarget::Optimal => Some(RetargetMode::Optimal),
        LearnRetarget::Lambda(l) => Some(RetargetMode::BiasRegularized(Padding::Lambda(l))),
        LearnRetarget::C(c) => Some(RetargetMode::BiasRegularized(Padding::C(c))),
    };
    let scores = match mode {
        Some(mode) => apply_retargeting(&raw, &table, mode)?,
        None => raw.clone(),
    };
    let scores = normalize(&scores)?;
    let xs = data.covariates();
    let (policy, objective, solver): (LinearPolicy, f64, String) = if data.n_actions() == 2 && data.dim() == 2 {
        let sol = solve_binary_linear(&scores, xs, &cfg.grid)?;
        (sol.policy, sol.objective, "halfplane-grid".into())
    } else {
        let search = MultiSearchConfig {
            random_starts: cfg.random_starts,
            seed: derive(seed, &[2]),
            pairwise: Some(cfg.grid),
            ..MultiSearchConfig::default()
        };
        let sol = solve_multi_linear(&scores, xs, &search)?;
        let label = format!("multi-start certified={}", sol.certified);
        (sol.policy, sol.objective, label)
    };
    let value = estimate_value(&raw, &policy, &data)?;

    let path = out.join("policy.csv");
    let mut w = create(path.clone())?;
    policy.write(&mut w)?;
    w.flush().map_err(|source| CliError::File { path, source })?;
    let path = out.join("nuisance.csv");
    let mut w = create(path.clone())?;
    fitted.write_csv(&mut w)?;
    w.flush().map_err(|source| CliError::File { path, source })?;
    let path = out.join("scores.csv");
    let mut w = create(path.clone())?;
    scores.write_csv(&mut w)?;
    w.flush().map_err(|source| CliError::File { path, source })?;

    Ok(vec![
        format!("value={value}"),
        format!("objective={objective}"),
        format!("solver={solver}"),
        format!("clipped_propensities={}", raw.clipped()),
    ])
}

fn cmd_simulate(cfg: &SimulateConfig, seed: u64, workers: usize, out: &Path) -> Result<Vec<String>, CliError> {
    let exp = Experiment {
        scenarios: cfg.scenarios.clone(),
        methods: cfg.methods.clone(),
        sizes: cfg.sizes.clone(),
        betas: cfg.betas.clone(),
        replicates: cfg.replicates,
        test_size: cfg.test_size,
        nuisance: cfg.nuisance,
        grid: cfg.grid,
        seed,
    };
    let step = std::sync::atomic::AtomicUsize::new(0);
    let progress = |done: usize, total: usize| {
        let pct = done * 100 / total;
        if step.fetch_max(pct, std::sync::atomic::Ordering::Relaxed) < pct {
            eprintln!("simulate: {pct}% ({done}/{total} replicates)");
        }
    };
    let results = run_experiment(&exp, workers, Some(&progress))?;
    let path = out.join("results.csv");
    let mut w = create(path.clone())?;
    write_results(&results, &mut w)?;
    w.flush().map_err(|source| CliError::File { path, source })?;
    let failed: usize = results.iter().map(|r| r.failures).sum();
    if results.iter().all(|r| r.replicates == 0) {
        return Err(CliError::TotalFailure(format!(
            "{failed} replicate failures, no successes"
        )));
    }
    Ok(vec![format!("rows={}", results.len()), format!("failures={failed}")])
}
