use super::{check_finite, local_penalty_gradient, risk_gradient, EngineConfig, EngineError};
use crate::problem::Problem;
use crate::topology::ClusterMap;

/// `d_ℓ = 1/N_ℓ`, the block scaling that matches the centralized rate to the
/// Metropolis-weighted distributed one.
pub fn cluster_size_scaling(cmap: &ClusterMap) -> Vec<f64> {
    (0..cmap.block_count()).map(|l| 1.0 / cmap.cluster_size(l) as f64).collect()
}

/// Penalize-first incremental step on the global vector:
/// `ψ = w − μη D ∇p_glob(w)`, `w⁺ = ψ − μ D ∇J_glob(ψ)`. `block_scaling`
/// holds the diagonal of `D` per block. In stochastic mode every agent
/// contributes one keyed sample at its restriction of `ψ`.
pub fn centralized_step(
    w: &[f64],
    block_scaling: &[f64],
    problem: &Problem,
    cfg: &EngineConfig,
    iteration: u64,
) -> Result<Vec<f64>, EngineError> {
    let cmap = problem.clusters();
    let layout = problem.layout();
    if w.len() != layout.total_dim() {
        return Err(EngineError::DimensionMismatch { expected: layout.total_dim(), got: w.len() });
    }
    if block_scaling.len() != layout.block_count() {
        return Err(EngineError::DimensionMismatch { expected: layout.block_count(), got: block_scaling.len() });
    }
    let scale = |v: &mut [f64]| {
        for (l, &d) in block_scaling.iter().enumerate() {
            v[layout.range(l)].iter_mut().for_each(|x| *x *= d);
        }
    };

    let mut grad_p = vec![0.0; w.len()];
    for k in 0..problem.agent_count() {
        if let Some(g) = local_penalty_gradient(problem, k, &cmap.restrict(k, w), cfg.eta)? {
            cmap.accumulate(k, &g, &mut grad_p);
        }
    }
    scale(&mut grad_p);
    let psi: Vec<f64> = w.iter().zip(&grad_p).map(|(x, g)| x - cfg.mu * cfg.eta * g).collect();

    let mut grad_j = vec![0.0; w.len()];
    for k in 0..problem.agent_count() {
        let g = risk_gradient(problem, k, &cmap.restrict(k, &psi), cfg, iteration);
        cmap.accumulate(k, &g, &mut grad_j);
    }
    scale(&mut grad_j);
    let out: Vec<f64> = psi.iter().zip(&grad_j).map(|(x, g)| x - cfg.mu * g).collect();
    check_finite(&out, iteration, 0)?;
    Ok(out)
}
