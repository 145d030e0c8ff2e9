use super::{check_finite, local_penalty_gradient, risk_gradient, EngineConfig, EngineError, RunState};
use crate::problem::Problem;
use crate::weights::{scaled_step_scaling, CombinationSet, StepScale, StepScaling};

/// Source copy feeding one local block: `(agent s, offset in ψ_s, a_{ℓ,sk})`.
type Tap = (usize, usize, f64);

/// Coupled diffusion with its combination taps and `Ω_k` scalings resolved
/// once per problem topology.
#[derive(Debug, Clone)]
pub struct CoupledDiffusion {
    scaling: Vec<StepScaling>,
    /// `taps[k][j]`: sources combined into slot `j` of agent `k`.
    taps: Vec<Vec<Vec<Tap>>>,
}

impl CoupledDiffusion {
    pub fn new(problem: &Problem, weights: &CombinationSet) -> Self {
        Self::with_step_scale(problem, weights, StepScale::Perron)
    }

    pub fn with_step_scale(problem: &Problem, weights: &CombinationSet, scale: StepScale) -> Self {
        let cmap = problem.clusters();
        let net = problem.network();
        let taps = (0..cmap.agent_count())
            .map(|k| {
                cmap.local_layout(k)
                    .iter()
                    .map(|slot| {
                        let a = weights.matrix(slot.block);
                        a.agents
                            .iter()
                            .filter(|&&s| net.in_neighborhood(k, s))
                            .filter_map(|&s| {
                                let w = a.weight(s, k);
                                (w != 0.0).then(|| (s, cmap.slot(s, slot.block).expect("cluster member").offset, w))
                            })
                            .collect()
                    })
                    .collect()
            })
            .collect();
        Self { scaling: scaled_step_scaling(cmap, weights, scale), taps }
    }

    pub fn scaling(&self) -> &[StepScaling] {
        &self.scaling
    }

    /// One synchronous round: every agent forms `ζ_k` and `ψ_k`, then every
    /// agent combines its neighbors' `ψ` block by block.
    pub fn step(&self, state: &mut RunState, problem: &Problem, cfg: &EngineConfig) -> Result<(), EngineError> {
        let cmap = problem.clusters();
        let i = state.iteration;
        for k in 0..cmap.agent_count() {
            let w = &state.iterates[k];
            let zeta = &mut state.zeta[k];
            zeta.copy_from_slice(w);
            if let Some(mut g) = local_penalty_gradient(problem, k, w, cfg.eta)? {
                self.scaling[k].apply(cmap, &mut g);
                zeta.iter_mut().zip(&g).for_each(|(z, gi)| *z -= cfg.mu * cfg.eta * gi);
            }
            let mut g = risk_gradient(problem, k, zeta, cfg, i);
            self.scaling[k].apply(cmap, &mut g);
            let psi = &mut state.psi[k];
            psi.iter_mut()
                .zip(zeta.iter().zip(&g))
                .for_each(|(p, (z, gi))| *p = z - cfg.mu * gi);
        }
        for k in 0..cmap.agent_count() {
            let out = &mut state.iterates[k];
            for (slot, taps) in cmap.local_layout(k).iter().zip(&self.taps[k]) {
                let block = &mut out[slot.range()];
                block.fill(0.0);
                for &(s, offset, a) in taps {
                    let src = &state.psi[s][offset..offset + slot.dim];
                    block.iter_mut().zip(src).for_each(|(b, x)| *b += a * x);
                }
            }
            check_finite(out, i, k)?;
        }
        state.iteration += 1;
        Ok(())
    }
}

/// Single coupled diffusion step; rebuilds the combination taps on each call.
/// Loops should hold a [`CoupledDiffusion`] instead.
pub fn coupled_diffusion_step(
    state: &mut RunState,
    problem: &Problem,
    weights: &CombinationSet,
    cfg: &EngineConfig,
) -> Result<(), EngineError> {
    CoupledDiffusion::new(problem, weights).step(state, problem, cfg)
}
