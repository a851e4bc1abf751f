//! Run configuration files.
//!
//! ```toml
//! environment = "asset_allocation"
//! method = "rkhs_newton"
//! iterations = 50
//!
//! [solver]
//! beta = 10.0
//!
//! [output]
//! dir = "runs/newton"
//! ```
//!
//! Every key except `method` has a default. `config.resolved` holds the
//! fully materialized form and parses back to the same run.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::cubic::SolverConfig;
use crate::env::{AssetAllocationSpec, DiscountConvention, TabularMdp};
use crate::error::{Error, Result};
use crate::estimators::EstimatorOptions;
use crate::kernel::KernelSpec;
use crate::optim::{DerivativeMode, Method, OptimizerConfig};

pub const ENVIRONMENTS: [(&str, &str); 2] = [
    ("asset_allocation", "resource/market allocation MDP, 15 states, 3 actions, horizon 3"),
    ("cartpole", "pole balancing, 4-d state, 2 actions, up to 200 steps"),
];

/// A configured environment.
#[derive(Clone, Debug, PartialEq)]
pub enum EnvironmentConfig {
    AssetAllocation(AssetAllocationSpec),
    CartPole,
}

impl EnvironmentConfig {
    pub fn name(&self) -> &'static str {
        match self {
            EnvironmentConfig::AssetAllocation(_) => "asset_allocation",
            EnvironmentConfig::CartPole => "cartpole",
        }
    }

    /// The asset MDP with the run's discount.
    pub fn asset_mdp(spec: &AssetAllocationSpec, gamma: f64) -> Result<TabularMdp> {
        AssetAllocationSpec { gamma, ..spec.clone() }.build()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
    /// Rows between CSV flushes.
    pub csv_flush_interval: usize,
    /// Iterations between checkpoints; 0 writes only the final one.
    pub checkpoint_every: usize,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dir: PathBuf::from("runs/latest"), csv_flush_interval: 1, checkpoint_every: 0 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub environment: EnvironmentConfig,
    pub optimizer: OptimizerConfig,
    pub output: OutputConfig,
}

/// On-disk layout. Optional fields fall back to defaults.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    environment: Option<String>,
    method: Option<Method>,
    iterations: Option<usize>,
    batch_size: Option<usize>,
    learning_rate: Option<f64>,
    gamma: Option<f64>,
    discount: Option<DiscountConvention>,
    temperature: Option<f64>,
    seed: Option<u64>,
    derivative_mode: Option<DerivativeMode>,
    prune_epsilon: Option<f64>,
    merge_duplicates: Option<bool>,
    poly_degree: Option<usize>,
    kernel: Option<KernelSpec>,
    solver: Option<SolverConfig>,
    estimator: Option<EstimatorOptions>,
    env: Option<toml::Table>,
    output: Option<OutputConfig>,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let method = raw.method.ok_or_else(|| Error::Config("missing required key `method`".into()))?;
        let defaults = OptimizerConfig::new(method);
        let optimizer = OptimizerConfig {
            method,
            iterations: raw.iterations.unwrap_or(defaults.iterations),
            batch_size: raw.batch_size.unwrap_or(defaults.batch_size),
            learning_rate: raw.learning_rate.unwrap_or(defaults.learning_rate),
            gamma: raw.gamma.unwrap_or(defaults.gamma),
            discount: raw.discount.unwrap_or(defaults.discount),
            temperature: raw.temperature.unwrap_or(defaults.temperature),
            kernel: raw.kernel.unwrap_or(defaults.kernel),
            solver: raw.solver.unwrap_or(defaults.solver),
            prune_epsilon: raw.prune_epsilon.unwrap_or(defaults.prune_epsilon),
            merge_duplicates: raw.merge_duplicates.unwrap_or(defaults.merge_duplicates),
            seed: raw.seed.unwrap_or(defaults.seed),
            derivative_mode: raw.derivative_mode.unwrap_or(defaults.derivative_mode),
            estimator: raw.estimator.unwrap_or(defaults.estimator),
            poly_degree: raw.poly_degree.unwrap_or(defaults.poly_degree),
        };
        optimizer.validate()?;
        let overrides = raw.env.unwrap_or_default();
        let environment = match raw.environment.as_deref().unwrap_or("asset_allocation") {
            "asset_allocation" => {
                if overrides.contains_key("gamma") {
                    return Err(Error::Config("key `env.gamma` is not allowed; set the top-level `gamma`".into()));
                }
                let spec: AssetAllocationSpec = toml::Value::Table(overrides)
                    .try_into()
                    .map_err(|e: toml::de::Error| Error::Config(format!("in [env]: {e}")))?;
                AssetAllocationSpec { gamma: optimizer.gamma, ..spec.clone() }
                    .validate()
                    .map_err(|e| Error::Config(format!("in [env]: {e}")))?;
                EnvironmentConfig::AssetAllocation(spec)
            }
            "cartpole" => {
                if let Some(key) = overrides.keys().next() {
                    return Err(Error::Config(format!("unknown key `env.{key}`: cartpole takes no overrides")));
                }
                EnvironmentConfig::CartPole
            }
            other => {
                let known: Vec<&str> = ENVIRONMENTS.iter().map(|(n, _)| *n).collect();
                return Err(Error::Config(format!(
                    "key `environment`: unknown environment `{other}` (known: {})",
                    known.join(", ")
                )));
            }
        };
        let output = raw.output.unwrap_or_default();
        if output.csv_flush_interval == 0 {
            return Err(Error::Config("key `output.csv_flush_interval` must be at least 1".into()));
        }
        Ok(Self { environment, optimizer, output })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    /// Every setting, defaults included, as TOML.
    pub fn resolved(&self) -> Result<String> {
        let o = &self.optimizer;
        let env = match &self.environment {
            EnvironmentConfig::AssetAllocation(spec) => {
                let mut t = toml::Table::try_from(spec).map_err(|e| Error::Config(e.to_string()))?;
                t.remove("gamma");
                Some(t)
            }
            EnvironmentConfig::CartPole => None,
        };
        let raw = RawConfig {
            environment: Some(self.environment.name().to_string()),
            method: Some(o.method),
            iterations: Some(o.iterations),
            batch_size: Some(o.batch_size),
            learning_rate: Some(o.learning_rate),
            gamma: Some(o.gamma),
            discount: Some(o.discount),
            temperature: Some(o.temperature),
            seed: Some(o.seed),
            derivative_mode: Some(o.derivative_mode),
            prune_epsilon: Some(o.prune_epsilon),
            merge_duplicates: Some(o.merge_duplicates),
            poly_degree: Some(o.poly_degree),
            kernel: Some(o.kernel),
            solver: Some(o.solver.clone()),
            estimator: Some(o.estimator),
            env,
            output: Some(self.output.clone()),
        };
        toml::to_string(&raw).map_err(|e| Error::Config(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn missing_method_is_named() {
        let err = RunConfig::parse("iterations = 3\n").unwrap_err();
        assert!(err.to_string().contains("`method`"), "{err}");
    }

    #[test]
    fn unknown_keys_are_rejected_with_their_name() {
        let err = RunConfig::parse("method = \"rkhs_pg\"\n[solver]\nbeta = 2.0\nbetta = 1.0\n").unwrap_err();
        assert!(err.to_string().contains("betta"), "{err}");
        let err = RunConfig::parse("method = \"rkhs_pg\"\nenvironment = \"mountain_car\"\n").unwrap_err();
        assert!(err.to_string().contains("mountain_car"), "{err}");
        let err = RunConfig::parse("method = \"rkhs_pg\"\n[env]\ngamma = 0.5\n").unwrap_err();
        assert!(err.to_string().contains("env.gamma"), "{err}");
    }

    #[test]
    fn defaults_follow_the_method() {
        let c = RunConfig::parse("method = \"rkhs_pg\"\n").unwrap();
        assert_eq!(c.optimizer.learning_rate, 0.05);
        let c = RunConfig::parse("method = \"param_newton\"\n").unwrap();
        assert_eq!(c.optimizer.learning_rate, 1.0);
        assert_eq!(c.environment, EnvironmentConfig::AssetAllocation(AssetAllocationSpec::default()));
    }

    #[test]
    fn resolved_round_trips() {
        let text = "method = \"rkhs_newton\"\nenvironment = \"asset_allocation\"\nseed = 7\n\
                    [kernel]\nvariant = \"rbf_times_action_delta\"\nbandwidth = 0.5\n\
                    [solver]\nbeta = 3.0\n[env]\nr_max = 4\n";
        let c = RunConfig::parse(text).unwrap();
        let again = RunConfig::parse(&c.resolved().unwrap()).unwrap();
        assert_eq!(c, again);
        let cp = RunConfig::parse("method = \"param_pg\"\nenvironment = \"cartpole\"\n").unwrap();
        assert_eq!(cp, RunConfig::parse(&cp.resolved().unwrap()).unwrap());
    }
}
