use super::{check_finite, local_penalty_gradient, risk_gradient, EngineConfig, EngineError};
use crate::problem::Problem;

/// Primal copies `w_k`, duals `y_k` and the per-block consensus variables
/// `z^ℓ` (stored as one global vector).
#[derive(Debug, Clone, PartialEq)]
pub struct AdmmState {
    pub w: Vec<Vec<f64>>,
    pub y: Vec<Vec<f64>>,
    pub z: Vec<f64>,
    pub iteration: u64,
}

impl AdmmState {
    /// Primal copies and `z` start at `w`; duals start at zero.
    pub fn from_global(problem: &Problem, w: &[f64]) -> Self {
        let cmap = problem.clusters();
        let locals: Vec<Vec<f64>> = (0..cmap.agent_count()).map(|k| cmap.restrict(k, w)).collect();
        Self {
            y: locals.iter().map(|v| vec![0.0; v.len()]).collect(),
            w: locals,
            z: w.to_vec(),
            iteration: 0,
        }
    }
}

/// Consensus ADMM with the primal minimization replaced by one stochastic
/// gradient step of size `μ`:
///
/// ```text
/// w_k⁺ = w_k − μ(∇̂J_k(w_k) + η∇p_k(w_k) + y_k + ρ(w_k − z_k))
/// z^ℓ⁺ = (1/N_ℓ) Σ_{k∈C_ℓ} (w_k^ℓ⁺ + y_k^ℓ/ρ)
/// y_k⁺ = y_k + ρ(w_k⁺ − z_k⁺)
/// ```
///
/// The `z` update averages over the whole cluster, not just neighbors.
pub fn admm_linearized_step(
    state: &mut AdmmState,
    problem: &Problem,
    rho: f64,
    cfg: &EngineConfig,
) -> Result<(), EngineError> {
    if !(rho > 0.0) {
        return Err(EngineError::InvalidConfig(format!("ADMM rho must be positive, got {rho}")));
    }
    let cmap = problem.clusters();
    let i = state.iteration;
    for k in 0..cmap.agent_count() {
        let z_k = cmap.restrict(k, &state.z);
        let w = &state.w[k];
        let mut g = risk_gradient(problem, k, w, cfg, i);
        if let Some(p) = local_penalty_gradient(problem, k, w, cfg.eta)? {
            g.iter_mut().zip(&p).for_each(|(a, b)| *a += cfg.eta * b);
        }
        let next: Vec<f64> = (0..w.len())
            .map(|j| w[j] - cfg.mu * (g[j] + state.y[k][j] + rho * (w[j] - z_k[j])))
            .collect();
        check_finite(&next, i, k)?;
        state.w[k] = next;
    }
    let mut z = vec![0.0; state.z.len()];
    for k in 0..cmap.agent_count() {
        let contrib: Vec<f64> = state.w[k].iter().zip(&state.y[k]).map(|(w, y)| w + y / rho).collect();
        cmap.accumulate(k, &contrib, &mut z);
    }
    for l in 0..cmap.block_count() {
        let n = cmap.cluster_size(l) as f64;
        z[cmap.layout().range(l)].iter_mut().for_each(|x| *x /= n);
    }
    state.z = z;
    for k in 0..cmap.agent_count() {
        let z_k = cmap.restrict(k, &state.z);
        for (j, y) in state.y[k].iter_mut().enumerate() {
            *y += rho * (state.w[k][j] - z_k[j]);
        }
    }
    state.iteration += 1;
    Ok(())
}
