//! TOML scenario configuration.
//!
//! ```toml
//! [network]
//! source = "builtin-benchmark"  # builtin-benchmark | builtin-example | file | inline
//!
//! [penalty]
//! eta = [100.0]
//! constraints = "random-affine"
//!
//! [engine]
//! mu = [0.001]
//! iterations = 4000
//!
//! [scenario]
//! id = "tracking"
//! seeds = [1, 2, 3]
//! change_point = 2000
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::engine::{Algorithm, NoiseMode};
use crate::weights::{StepScale, WeightRule};
use crate::Error;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub network: NetworkSection,
    #[serde(default)]
    pub blocks: Option<BlocksSection>,
    #[serde(default)]
    pub objective: ObjectiveSection,
    #[serde(default)]
    pub penalty: PenaltySection,
    pub engine: EngineSection,
    pub scenario: ScenarioSection,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NetworkSource {
    /// The bundled 20-agent, 5-cluster network.
    BuiltinBenchmark,
    /// The 5-agent, 4-block illustration network.
    BuiltinExample,
    /// A network data file at `path` (same schema as the bundled one).
    File,
    /// `agents`, `edges` and `interests` given in the config itself.
    Inline,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSection {
    pub source: NetworkSource,
    #[serde(default)]
    pub path: Option<PathBuf>,
    #[serde(default)]
    pub agents: Option<usize>,
    #[serde(default)]
    pub edges: Option<Vec<[usize; 2]>>,
    #[serde(default)]
    pub interests: Option<Vec<Vec<usize>>>,
    /// Agent and block ids in `edges`, `interests` and `penalty.owners` are 1-based.
    #[serde(default = "yes")]
    pub one_based: bool,
    /// Grow disconnected clusters into connected ones before running.
    #[serde(default = "yes")]
    pub embed: bool,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlocksSection {
    pub dims: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectiveSection {
    /// Pins one random problem instance (model, covariances, noise levels,
    /// constraints) for every run. When absent each run seed draws its own
    /// instance, so seed averages are taken over instances as well as over
    /// gradient noise.
    #[serde(default)]
    pub instance_seed: Option<u64>,
    /// Measurement-noise power range in dB.
    #[serde(default = "default_noise_db")]
    pub noise_db: [f64; 2],
    /// Range of the regressor covariance eigenvalues.
    #[serde(default = "default_eigen_range")]
    pub eigen_range: [f64; 2],
}

fn default_noise_db() -> [f64; 2] {
    [-30.0, -20.0]
}

fn default_eigen_range() -> [f64; 2] {
    [1.0, 3.0]
}

impl Default for ObjectiveSection {
    fn default() -> Self {
        Self { instance_seed: None, noise_db: default_noise_db(), eigen_range: default_eigen_range() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConstraintMode {
    #[default]
    None,
    /// One unit-norm Gaussian equality `g_ℓᵀ w_{k_c} = b_ℓ`, `b_ℓ ~ U(−1, 1)`,
    /// per block, held by that block's owner agent.
    RandomAffine,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PenaltySection {
    #[serde(default = "default_eta")]
    pub eta: Vec<f64>,
    /// Smoothing of the inequality penalty. Only inequality constraints use it.
    #[serde(default = "default_rho")]
    pub rho: f64,
    #[serde(default)]
    pub constraints: ConstraintMode,
    /// Owner agent per block; defaults to the network file's owners.
    #[serde(default)]
    pub owners: Option<Vec<usize>>,
}

fn default_eta() -> Vec<f64> {
    vec![0.0]
}

fn default_rho() -> f64 {
    1.0
}

impl Default for PenaltySection {
    fn default() -> Self {
        Self { eta: default_eta(), rho: default_rho(), constraints: ConstraintMode::None, owners: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AlgorithmName {
    Coupled,
    Centralized,
    Admm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Init {
    #[default]
    Zeros,
    /// Start every run at the penalized optimum.
    Reference,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EngineSection {
    pub mu: Vec<f64>,
    pub iterations: usize,
    #[serde(default)]
    pub noise: NoiseMode,
    #[serde(default)]
    pub weights: WeightRule,
    /// Step scaling of the coupled diffusion recursion.
    #[serde(default)]
    pub step_scale: StepScale,
    #[serde(default = "default_algorithms")]
    pub algorithms: Vec<AlgorithmName>,
    #[serde(default = "default_rho")]
    pub admm_rho: f64,
    #[serde(default)]
    pub init: Init,
}

fn default_algorithms() -> Vec<AlgorithmName> {
    vec![AlgorithmName::Coupled]
}

impl EngineSection {
    pub fn algorithms(&self) -> Vec<Algorithm> {
        self.algorithms
            .iter()
            .map(|a| match a {
                AlgorithmName::Coupled => Algorithm::Coupled,
                AlgorithmName::Centralized => Algorithm::Centralized,
                AlgorithmName::Admm => Algorithm::Admm { rho: self.admm_rho },
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScenarioId {
    Unconstrained,
    Constrained,
    Tracking,
    Sweep,
    Custom,
}

impl ScenarioId {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Unconstrained => "unconstrained",
            Self::Constrained => "constrained",
            Self::Tracking => "tracking",
            Self::Sweep => "sweep",
            Self::Custom => "custom",
        }
    }
}

impl std::str::FromStr for ScenarioId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        Ok(match s {
            "unconstrained" => Self::Unconstrained,
            "constrained" => Self::Constrained,
            "tracking" => Self::Tracking,
            "sweep" => Self::Sweep,
            "custom" => Self::Custom,
            other => return Err(Error::Config(format!("unknown scenario id `{other}`"))),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSection {
    pub id: ScenarioId,
    pub seeds: Vec<u64>,
    /// Iteration at which the constraints are regenerated (tracking only).
    #[serde(default)]
    pub change_point: Option<usize>,
    /// Per-iteration rows are written every `log_every` iterations.
    #[serde(default = "one")]
    pub log_every: usize,
}

fn one() -> usize {
    1
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self, Error> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Loads a config; a relative `network.path` is resolved against the
    /// config file's directory.
    pub fn load(path: &Path) -> Result<Self, Error> {
        let text = std::fs::read_to_string(path)?;
        let mut cfg = Self::from_toml(&text)?;
        if let (Some(p), Some(dir)) = (&cfg.network.path, path.parent()) {
            if p.is_relative() {
                cfg.network.path = Some(dir.join(p));
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), Error> {
        let err = |m: String| Err(Error::Config(m));
        if self.engine.mu.is_empty() {
            return err("engine.mu must not be empty".into());
        }
        if let Some(mu) = self.engine.mu.iter().find(|&&m| !(m > 0.0 && m.is_finite())) {
            return err(format!("engine.mu entries must be positive, got {mu}"));
        }
        if self.penalty.eta.is_empty() {
            return err("penalty.eta must not be empty".into());
        }
        if let Some(eta) = self.penalty.eta.iter().find(|&&e| !(e >= 0.0 && e.is_finite())) {
            return err(format!("penalty.eta entries must be non-negative, got {eta}"));
        }
        if !(self.penalty.rho > 0.0) {
            return err(format!("penalty.rho must be positive, got {}", self.penalty.rho));
        }
        if !(self.engine.admm_rho > 0.0) {
            return err(format!("engine.admm_rho must be positive, got {}", self.engine.admm_rho));
        }
        if self.engine.algorithms.is_empty() {
            return err("engine.algorithms must not be empty".into());
        }
        if self.engine.iterations == 0 {
            return err("engine.iterations must be at least 1".into());
        }
        if self.scenario.seeds.is_empty() {
            return err("scenario.seeds must not be empty".into());
        }
        if self.scenario.log_every == 0 {
            return err("scenario.log_every must be at least 1".into());
        }
        let [lo, hi] = self.objective.noise_db;
        if !(lo <= hi) {
            return err("objective.noise_db must be an ordered range".into());
        }
        let [lo, hi] = self.objective.eigen_range;
        if !(lo > 0.0 && lo <= hi) {
            return err("objective.eigen_range must be a positive ordered range".into());
        }
        if let Some(cp) = self.scenario.change_point {
            if cp >= self.engine.iterations {
                return err(format!("change_point {cp} must be below the iteration budget {}", self.engine.iterations));
            }
        }
        let constrained = self.penalty.constraints != ConstraintMode::None;
        match self.scenario.id {
            ScenarioId::Unconstrained if constrained => {
                return err("the unconstrained scenario takes no constraints".into());
            }
            ScenarioId::Constrained | ScenarioId::Sweep if !constrained => {
                return err(format!("the {} scenario needs penalty.constraints", self.scenario.id.as_str()));
            }
            ScenarioId::Tracking => {
                if !constrained {
                    return err("the tracking scenario needs penalty.constraints".into());
                }
                if self.scenario.change_point.is_none() {
                    return err("the tracking scenario needs scenario.change_point".into());
                }
            }
            _ => {}
        }
        match self.network.source {
            NetworkSource::File if self.network.path.is_none() => err("network.path is required for source = file".into()),
            NetworkSource::Inline
                if self.network.agents.is_none() || self.network.edges.is_none() || self.network.interests.is_none() =>
            {
                err("inline networks need agents, edges and interests".into())
            }
            NetworkSource::Inline if self.blocks.is_none() => err("inline networks need a [blocks] section".into()),
            _ => Ok(()),
        }
    }
}
