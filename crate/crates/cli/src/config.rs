//! Flat `key = value` run configuration.
//!
//! One entry per line, `#` starts a comment, lists are comma separated. Keys
//! that the selected command does not use are rejected.

use std::collections::BTreeMap;
use std::path::PathBuf;

use retarget_core::nuisance::{OutcomeMethod, PropensityMethod, StumpConfig, DEFAULT_FOLDS};
use retarget_core::policyopt::GridSearchConfig;
use retarget_core::scores::ScoreMethod;
use retarget_core::simulate::{
    default_betas, default_cs, default_sizes, Method, NuisanceSource, Scenario, Variant, REPLICATES, TEST_SIZE,
};

use crate::CliError;

/// Parsed entries with the line each came from.
#[derive(Debug, Clone, Default)]
pub struct RawConfig {
    entries: BTreeMap<String, (usize, String)>,
}

impl RawConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut entries = BTreeMap::new();
        for (k, raw) in text.lines().enumerate() {
            let line = k + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("line {line}: expected key = value")))?;
            let key = key.trim().to_string();
            if key.is_empty() {
                return Err(CliError::Config(format!("line {line}: empty key")));
            }
            if entries.insert(key.clone(), (line, value.trim().to_string())).is_some() {
                return Err(CliError::Config(format!("line {line}: duplicate key {key:?}")));
            }
        }
        Ok(Self { entries })
    }

    pub fn set(&mut self, key: &str, value: String) {
        self.entries.insert(key.to_string(), (0, value));
    }

    fn take(&mut self, key: &str) -> Option<(usize, String)> {
        self.entries.remove(key)
    }

    fn err(line: usize, key: &str, msg: impl std::fmt::Display) -> CliError {
        if line == 0 {
            CliError::Config(format!("{key}: {msg}"))
        } else {
            CliError::Config(format!("line {line}: {key}: {msg}"))
        }
    }

    fn string(&mut self, key: &str) -> Option<String> {
        self.take(key).map(|(_, v)| v)
    }

    fn parsed<T: std::str::FromStr>(&mut self, key: &str) -> Result<Option<T>, CliError>
    where
        T::Err: std::fmt::Display,
    {
        match self.take(key) {
            None => Ok(None),
            Some((line, v)) => v.parse().map(Some).map_err(|e| Self::err(line, key, e)),
        }
    }

    fn list<T: std::str::FromStr>(&mut self, key: &str) -> Result<Option<Vec<T>>, CliError>
    where
        T::Err: std::fmt::Display,
    {
        match self.take(key) {
            None => Ok(None),
            Some((line, v)) => {
                let items: Vec<&str> = v.split(',').map(str::trim).filter(|s| !s.is_empty()).collect();
                if items.is_empty() {
                    return Err(Self::err(line, key, "empty list"));
                }
                items
                    .into_iter()
                    .map(|s| s.parse().map_err(|e| Self::err(line, key, e)))
                    .collect::<Result<Vec<T>, _>>()
                    .map(Some)
            }
        }
    }

    /// List that may also be the word `default`.
    fn grid<T: std::str::FromStr>(
        &mut self,
        key: &str,
        default: impl Fn() -> Vec<T>,
    ) -> Result<Option<Vec<T>>, CliError>
    where
        T::Err: std::fmt::Display,
    {
        if self.entries.get(key).is_some_and(|(_, v)| v == "default") {
            self.take(key);
            return Ok(Some(default()));
        }
        self.list(key)
    }

    fn finish(self) -> Result<(), CliError> {
        match self.entries.into_iter().next() {
            None => Ok(()),
            Some((key, (line, _))) => Err(Self::err(line, &key, "unknown key for this command")),
        }
    }
}

/// Where `weights` reads propensities from.
#[derive(Debug, Clone, PartialEq)]
pub enum WeightsSource {
    /// Observation CSV; propensities are cross-fitted.
    Data { path: PathBuf, actions: Option<usize> },
    /// `x1..xd, phi_1..phi_m[, sigma2_1..sigma2_m]`.
    Propensities(PathBuf),
    /// Draw from the synthetic design and use its true propensities.
    Synthetic { n: usize, beta: f64, q2: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum WeightsMode {
    Optimal,
    Binary,
    Regularized(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightsConfig {
    pub source: WeightsSource,
    pub mode: WeightsMode,
    pub propensity: PropensityMethod,
    pub folds: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LearnRetarget {
    None,
    BinaryHomoskedastic,
    MultiHomoskedastic,
    Optimal,
    Lambda(f64),
    C(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct LearnConfig {
    pub input: PathBuf,
    pub actions: Option<usize>,
    pub method: ScoreMethod,
    pub retarget: LearnRetarget,
    pub propensity: PropensityMethod,
    pub outcome: OutcomeMethod,
    pub folds: usize,
    pub grid: GridSearchConfig,
    pub random_starts: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulateConfig {
    pub scenarios: Vec<Scenario>,
    pub methods: Vec<Method>,
    pub sizes: Vec<usize>,
    pub betas: Vec<f64>,
    pub replicates: usize,
    pub test_size: usize,
    pub nuisance: NuisanceSource,
    pub grid: GridSearchConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Command {
    Weights(WeightsConfig),
    Learn(LearnConfig),
    Simulate(SimulateConfig),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub command: Command,
    pub seed: u64,
    pub out: PathBuf,
}

fn stumps(raw: &mut RawConfig) -> Result<StumpConfig, CliError> {
    let d = StumpConfig::default();
    let cfg = StumpConfig {
        rounds: raw.parsed("rounds")?.unwrap_or(d.rounds),
        shrinkage: raw.parsed("shrinkage")?.unwrap_or(d.shrinkage),
        subsample: raw.parsed("subsample")?.unwrap_or(d.subsample),
        min_leaf: raw.parsed("min_leaf")?.unwrap_or(d.min_leaf),
    };
    if !(cfg.shrinkage > 0.0) || !(cfg.subsample > 0.0 && cfg.subsample <= 1.0) || cfg.min_leaf == 0 {
        return Err(CliError::Config(
            "need shrinkage > 0, 0 < subsample <= 1 and min_leaf >= 1".into(),
        ));
    }
    Ok(cfg)
}

fn propensity_method(raw: &mut RawConfig, s: StumpConfig) -> Result<PropensityMethod, CliError> {
    match raw.take("propensity_model") {
        None => Ok(PropensityMethod::BoostedStumps(s)),
        Some((line, v)) => match v.as_str() {
            "logistic" => Ok(PropensityMethod::Logistic),
            "multinomial-logistic" => Ok(PropensityMethod::MultinomialLogistic),
            "boosted-stumps" => Ok(PropensityMethod::BoostedStumps(s)),
            _ => Err(RawConfig::err(line, "propensity_model", format!("unknown model {v:?}"))),
        },
    }
}

fn outcome_method(raw: &mut RawConfig, s: StumpConfig) -> Result<OutcomeMethod, CliError> {
    match raw.take("outcome_model") {
        None => Ok(OutcomeMethod::BoostedStumps(s)),
        Some((line, v)) => match v.as_str() {
            "least-squares" => Ok(OutcomeMethod::LeastSquares),
            "boosted-stumps" => Ok(OutcomeMethod::BoostedStumps(s)),
            _ => Err(RawConfig::err(line, "outcome_model", format!("unknown model {v:?}"))),
        },
    }
}

fn folds(raw: &mut RawConfig) -> Result<usize, CliError> {
    let k = raw.parsed("folds")?.unwrap_or(DEFAULT_FOLDS);
    if k < 2 {
        return Err(CliError::Config("folds must be at least 2".into()));
    }
    Ok(k)
}

fn grid(raw: &mut RawConfig) -> Result<GridSearchConfig, CliError> {
    let steps = raw
        .parsed("theta_steps")?
        .unwrap_or(GridSearchConfig::default().theta_steps);
    if steps < 4 {
        return Err(CliError::Config("theta_steps must be at least 4".into()));
    }
    Ok(GridSearchConfig {
        theta_steps: steps,
        ..GridSearchConfig::default()
    })
}

fn score_method(line: usize, key: &str, s: &str) -> Result<ScoreMethod, CliError> {
    ScoreMethod::parse(s)
        .ok_or_else(|| RawConfig::err(line, key, format!("unknown method {s:?} (unweighted, ipw, dm, dr)")))
}

/// `ipw`, `ipw+rt` (retargeted), `ipw+c` (one method per value of `c_grid`).
fn sim_methods(raw: &mut RawConfig) -> Result<Vec<Method>, CliError> {
    let (line, text) = raw
        .take("methods")
        .ok_or_else(|| CliError::Config("simulate needs methods".into()))?;
    let names: Vec<&str> = text.split(',').map(str::trim).filter(|s| !s.is_empty()).collect();
    if names.is_empty() {
        return Err(RawConfig::err(line, "methods", "empty method list"));
    }
    let cs = raw.grid("c_grid", default_cs)?;
    let mut cs_used = false;
    let mut out = Vec::new();
    for name in names {
        let (base, suffix) = name.split_once('+').unwrap_or((name, ""));
        let score = score_method(line, "methods", base)?;
        match suffix {
            "" => out.push(Method::new(score, Variant::Plain)),
            "rt" => out.push(Method::new(score, Variant::Retargeted)),
            "c" => {
                cs_used = true;
                let grid = cs.clone().unwrap_or_else(default_cs);
                if let Some(c) = grid.iter().find(|c| !(**c >= 0.0) || !c.is_finite()) {
                    return Err(RawConfig::err(
                        line,
                        "c_grid",
                        format!("c must be finite and >= 0, got {c}"),
                    ));
                }
                out.extend(grid.into_iter().map(|c| Method::new(score, Variant::Padded(c))));
            }
            _ => {
                return Err(RawConfig::err(
                    line,
                    "methods",
                    format!("unknown suffix in {name:?} (use +rt or +c)"),
                ))
            }
        }
    }
    if cs.is_some() && !cs_used {
        return Err(CliError::Config("c_grid given but no method uses +c".into()));
    }
    Ok(out)
}

impl RunConfig {
    /// Typed configuration; `seed` and `out` fall back to defaults when absent.
    pub fn from_raw(mut raw: RawConfig) -> Result<Self, CliError> {
        let command = raw
            .string("command")
            .ok_or_else(|| CliError::Config("missing command (weights, learn, simulate)".into()))?;
        let seed = raw.parsed("seed")?.unwrap_or(0);
        let out = PathBuf::from(raw.string("out").unwrap_or_else(|| ".".into()));
        let command = match command.as_str() {
            "weights" => Command::Weights(Self::weights(&mut raw)?),
            "learn" => Command::Learn(Self::learn(&mut raw)?),
            "simulate" => Command::Simulate(Self::simulate(&mut raw)?),
            other => return Err(CliError::Config(format!("unknown command {other:?}"))),
        };
        raw.finish()?;
        Ok(Self { command, seed, out })
    }

    fn weights(raw: &mut RawConfig) -> Result<WeightsConfig, CliError> {
        let input = raw.string("input");
        let props = raw.string("propensities");
        let n: Option<usize> = raw.parsed("n")?;
        let actions = raw.parsed("actions")?;
        let source = match (input, props, n) {
            (Some(p), None, None) => WeightsSource::Data {
                path: p.into(),
                actions,
            },
            (None, Some(p), None) => WeightsSource::Propensities(p.into()),
            (None, None, Some(n)) => WeightsSource::Synthetic {
                n,
                beta: raw.parsed("beta")?.unwrap_or(3.5),
                q2: raw.parsed("q2")?.unwrap_or(1.0),
            },
            _ => {
                return Err(CliError::Config(
                    "weights needs exactly one of input, propensities or n (synthetic draw)".into(),
                ))
            }
        };
        if actions.is_some() && !matches!(source, WeightsSource::Data { .. }) {
            return Err(CliError::Config("actions only applies to input data".into()));
        }
        let lambda: Option<f64> = raw.parsed("lambda")?;
        let mode = match (raw.take("mode"), lambda) {
            (None, None) => WeightsMode::Optimal,
            (None, Some(l)) => WeightsMode::Regularized(l),
            (Some((line, m)), l) => match (m.as_str(), l) {
                ("optimal", None) => WeightsMode::Optimal,
                ("binary", None) => WeightsMode::Binary,
                ("regularized", Some(l)) => WeightsMode::Regularized(l),
                ("regularized", None) => return Err(RawConfig::err(line, "mode", "regularized needs lambda")),
                (_, Some(_)) if m == "optimal" || m == "binary" => {
                    return Err(RawConfig::err(line, "lambda", "only applies to mode = regularized"))
                }
                _ => return Err(RawConfig::err(line, "mode", format!("unknown mode {m:?}"))),
            },
        };
        let s = stumps(raw)?;
        Ok(WeightsConfig {
            source,
            mode,
            propensity: propensity_method(raw, s)?,
            folds: folds(raw)?,
        })
    }

    fn learn(raw: &mut RawConfig) -> Result<LearnConfig, CliError> {
        let input = raw
            .string("input")
            .ok_or_else(|| CliError::Config("learn needs input".into()))?;
        let method = match raw.take("method") {
            Some((line, m)) => score_method(line, "method", &m)?,
            None => ScoreMethod::Dr,
        };
        let lambda: Option<f64> = raw.parsed("lambda")?;
        let c: Option<f64> = raw.parsed("c")?;
        let retarget = match raw.take("retarget") {
            None => {
                if lambda.is_some() || c.is_some() {
                    return Err(CliError::Config("lambda and c need retarget = regularized".into()));
                }
                LearnRetarget::None
            }
            Some((line, r)) => {
                let plain = |v: LearnRetarget| {
                    if lambda.is_some() || c.is_some() {
                        Err(RawConfig::err(
                            line,
                            "retarget",
                            "lambda and c only apply to regularized",
                        ))
                    } else {
                        Ok(v)
                    }
                };
                match r.as_str() {
                    "none" => plain(LearnRetarget::None)?,
                    "binary-homoskedastic" => plain(LearnRetarget::BinaryHomoskedastic)?,
                    "multi-homoskedastic" => plain(LearnRetarget::MultiHomoskedastic)?,
                    "optimal" => plain(LearnRetarget::Optimal)?,
                    "regularized" => match (lambda, c) {
                        (Some(l), None) => LearnRetarget::Lambda(l),
                        (None, Some(c)) => LearnRetarget::C(c),
                        _ => {
                            return Err(RawConfig::err(
                                line,
                                "retarget",
                                "regularized needs exactly one of lambda, c",
                            ))
                        }
                    },
                    _ => return Err(RawConfig::err(line, "retarget", format!("unknown mode {r:?}"))),
                }
            }
        };
        let s = stumps(raw)?;
        Ok(LearnConfig {
            input: input.into(),
            actions: raw.parsed("actions")?,
            method,
            retarget,
            propensity: propensity_method(raw, s)?,
            outcome: outcome_method(raw, s)?,
            folds: folds(raw)?,
            grid: grid(raw)?,
            random_starts: raw.parsed("random_starts")?.unwrap_or(50),
        })
    }

    fn simulate(raw: &mut RawConfig) -> Result<SimulateConfig, CliError> {
        let scenarios = match raw.take("scenarios") {
            None => Scenario::ALL.to_vec(),
            Some((line, v)) => v
                .split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(|s| {
                    Scenario::parse(s).ok_or_else(|| {
                        RawConfig::err(
                            line,
                            "scenarios",
                            format!("unknown scenario {s:?} (well|mis)-(stationary|inward|outward)"),
                        )
                    })
                })
                .collect::<Result<Vec<_>, _>>()?,
        };
        if scenarios.is_empty() {
            return Err(CliError::Config("scenarios: empty list".into()));
        }
        let methods = sim_methods(raw)?;
        let sizes = raw.grid("sizes", default_sizes)?.unwrap_or_else(default_sizes);
        let betas = raw.grid("betas", default_betas)?.unwrap_or_else(|| vec![3.5]);
        if let Some(n) = sizes.iter().find(|&&n| n < 10) {
            return Err(CliError::Config(format!("sizes: {n} is too small")));
        }
        if let Some(b) = betas.iter().find(|b| !(**b >= 0.0) || !b.is_finite()) {
            return Err(CliError::Config(format!("betas: {b} is not a finite number >= 0")));
        }
        let replicates = raw.parsed("replicates")?.unwrap_or(REPLICATES);
        if replicates < 2 {
            return Err(CliError::Config("replicates must be at least 2".into()));
        }
        let test_size = raw.parsed("test_size")?.unwrap_or(TEST_SIZE);
        if test_size == 0 {
            return Err(CliError::Config("test_size must be at least 1".into()));
        }
        let s = stumps(raw)?;
        let oracle = match raw.take("nuisance") {
            None => false,
            Some((_, v)) if v == "fitted" => false,
            Some((_, v)) if v == "oracle" => true,
            Some((line, v)) => {
                return Err(RawConfig::err(
                    line,
                    "nuisance",
                    format!("unknown source {v:?} (fitted, oracle)"),
                ))
            }
        };
        let fitted = NuisanceSource::Fitted {
            propensity: propensity_method(raw, s)?,
            outcome: outcome_method(raw, s)?,
            folds: folds(raw)?,
        };
        let nuisance = if oracle { NuisanceSource::Oracle } else { fitted };
        Ok(SimulateConfig {
            scenarios,
            methods,
            sizes,
            betas,
            replicates,
            test_size,
            nuisance,
            grid: grid(raw)?,
        })
    }
}
