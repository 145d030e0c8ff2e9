//! Recursions: coupled diffusion, its stacked network form, and the
//! centralized and linearized-ADMM baselines.

mod admm;
mod centralized;
mod diffusion;
mod network_form;

use std::borrow::Cow;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use admm::{admm_linearized_step, AdmmState};
pub use centralized::{centralized_step, cluster_size_scaling};
pub use diffusion::{coupled_diffusion_step, CoupledDiffusion};
pub use network_form::NetworkForm;

use crate::objective::{penalty_gradient, ObjectiveError, PenaltyConfig};
use crate::problem::Problem;
use crate::rng::agent_stream;
use crate::weights::{CombinationSet, StepScale};

/// Iterates whose norm exceeds this are treated as divergence.
pub const DIVERGENCE_NORM: f64 = 1e9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EngineError {
    #[error("iterate of agent {agent} diverged at iteration {iteration}")]
    NonFiniteIterate { iteration: u64, agent: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid engine configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseMode {
    /// One streaming sample per agent per iteration.
    #[default]
    Stochastic,
    /// Exact gradients.
    Exact,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Algorithm {
    Coupled,
    /// Incremental gradient descent on the global cost with block scaling
    /// `D = diag{I/N_ℓ}`.
    Centralized,
    Admm { rho: f64 },
}

impl Algorithm {
    pub fn label(&self) -> &'static str {
        match self {
            Self::Coupled => "coupled",
            Self::Centralized => "centralized",
            Self::Admm { .. } => "admm",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EngineConfig {
    pub mu: f64,
    pub eta: f64,
    pub iterations: usize,
    pub noise: NoiseMode,
    /// Seed of the gradient-sample streams.
    pub seed: u64,
}

impl EngineConfig {
    pub fn validate(&self) -> Result<(), EngineError> {
        if !(self.mu > 0.0 && self.mu.is_finite()) {
            return Err(EngineError::InvalidConfig(format!("mu must be positive, got {}", self.mu)));
        }
        if !(self.eta >= 0.0 && self.eta.is_finite()) {
            return Err(EngineError::InvalidConfig(format!("eta must be non-negative, got {}", self.eta)));
        }
        if self.iterations == 0 {
            return Err(EngineError::InvalidConfig("iteration budget must be at least 1".into()));
        }
        Ok(())
    }
}

/// Per-agent iterates of the coupled diffusion recursion.
#[derive(Debug, Clone, PartialEq)]
pub struct RunState {
    /// `w_{k,i}`
    pub iterates: Vec<Vec<f64>>,
    /// `ζ_{k,i}` from the last step.
    pub zeta: Vec<Vec<f64>>,
    /// `ψ_{k,i}` from the last step.
    pub psi: Vec<Vec<f64>>,
    pub iteration: u64,
}

impl RunState {
    pub fn zeros(problem: &Problem) -> Self {
        let cmap = problem.clusters();
        let iterates: Vec<Vec<f64>> = (0..cmap.agent_count()).map(|k| vec![0.0; cmap.local_dim(k)]).collect();
        Self {
            zeta: iterates.clone(),
            psi: iterates.clone(),
            iterates,
            iteration: 0,
        }
    }

    /// Every agent starts from its restriction of the global vector `w`.
    pub fn from_global(problem: &Problem, w: &[f64]) -> Self {
        let mut s = Self::zeros(problem);
        for k in 0..s.iterates.len() {
            s.iterates[k] = problem.clusters().restrict(k, w);
        }
        s
    }
}

/// Risk gradient at agent `k` for iteration `iteration`: exact, or one sample
/// drawn from the agent's keyed stream.
pub(crate) fn risk_gradient(problem: &Problem, k: usize, w: &[f64], cfg: &EngineConfig, iteration: u64) -> Vec<f64> {
    match cfg.noise {
        NoiseMode::Exact => problem.risk(k).true_gradient(w),
        NoiseMode::Stochastic => {
            let mut rng = agent_stream(cfg.seed, k, iteration);
            problem.risk(k).sample_gradient(w, &mut rng)
        }
    }
}

/// `∇p_k(w_k)` or `None` when the penalty is switched off or absent.
pub(crate) fn local_penalty_gradient(
    problem: &Problem,
    k: usize,
    w: &[f64],
    eta: f64,
) -> Result<Option<Vec<f64>>, EngineError> {
    let constraints = problem.constraints(k);
    if eta == 0.0 || constraints.is_empty() {
        return Ok(None);
    }
    let cfg = PenaltyConfig { eta, rho: problem.rho() };
    Ok(Some(penalty_gradient(constraints, w, &cfg)?))
}

pub(crate) fn check_finite(v: &[f64], iteration: u64, agent: usize) -> Result<(), EngineError> {
    let norm2: f64 = v.iter().map(|x| x * x).sum();
    if !norm2.is_finite() || norm2 > DIVERGENCE_NORM * DIVERGENCE_NORM {
        return Err(EngineError::NonFiniteIterate { iteration, agent });
    }
    Ok(())
}

/// Step-size bound `1/(ν + N(δ + η δ_p))` from the strong-convexity
/// constant `ν`, the largest risk and penalty Lipschitz constants `δ`, `δ_p`
/// and the agent count `N`.
pub fn suggest_step_size(nu: f64, delta: f64, delta_p: f64, eta: f64, agents: usize) -> f64 {
    1.0 / (nu + agents as f64 * (delta + eta * delta_p))
}

/// One run of any of the supported recursions.
#[derive(Debug, Clone)]
pub enum Simulation {
    Coupled { runner: CoupledDiffusion, state: RunState },
    Centralized { scaling: Vec<f64>, w: Vec<f64>, iteration: u64 },
    Admm { rho: f64, state: AdmmState },
}

impl Simulation {
    /// Starts from `init` (a global vector, copied to every agent) or zeros.
    pub fn new(problem: &Problem, algorithm: Algorithm, weights: &CombinationSet, init: Option<&[f64]>) -> Self {
        Self::with_step_scale(problem, algorithm, weights, init, StepScale::Perron)
    }

    /// Like [`Simulation::new`]; `scale` selects the coupled diffusion step
    /// scaling and is ignored by the baselines.
    pub fn with_step_scale(
        problem: &Problem,
        algorithm: Algorithm,
        weights: &CombinationSet,
        init: Option<&[f64]>,
        scale: StepScale,
    ) -> Self {
        let m = problem.layout().total_dim();
        let global = init.map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; m]);
        match algorithm {
            Algorithm::Coupled => Self::Coupled {
                runner: CoupledDiffusion::with_step_scale(problem, weights, scale),
                state: RunState::from_global(problem, &global),
            },
            Algorithm::Centralized => Self::Centralized {
                scaling: cluster_size_scaling(problem.clusters()),
                w: global,
                iteration: 0,
            },
            Algorithm::Admm { rho } => Self::Admm { rho, state: AdmmState::from_global(problem, &global) },
        }
    }

    pub fn step(&mut self, problem: &Problem, cfg: &EngineConfig) -> Result<(), EngineError> {
        match self {
            Self::Coupled { runner, state } => runner.step(state, problem, cfg),
            Self::Centralized { scaling, w, iteration } => {
                *w = centralized_step(w, scaling, problem, cfg, *iteration)?;
                *iteration += 1;
                Ok(())
            }
            Self::Admm { rho, state } => admm_linearized_step(state, problem, *rho, cfg),
        }
    }

    /// Agent-local copies; the centralized iterate is copied to every agent.
    pub fn local_copies<'a>(&'a self, problem: &Problem) -> Cow<'a, [Vec<f64>]> {
        match self {
            Self::Coupled { state, .. } => Cow::Borrowed(&state.iterates),
            Self::Admm { state, .. } => Cow::Borrowed(&state.w),
            Self::Centralized { w, .. } => {
                let cmap = problem.clusters();
                Cow::Owned((0..cmap.agent_count()).map(|k| cmap.restrict(k, w)).collect())
            }
        }
    }
}
