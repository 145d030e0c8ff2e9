use nalgebra::{DMatrix, DVector};

use super::{local_penalty_gradient, risk_gradient, EngineConfig, EngineError, NoiseMode};
use crate::problem::Problem;
use crate::weights::CombinationSet;

/// The coupled diffusion written on the stacked vector
/// `𝓌 = col{col{w_k^ℓ}_{k∈C_ℓ}}_ℓ`:
///
/// ```text
/// ζ  = 𝓌 − μη 𝓡⁻¹ ∇𝒫(𝓌)
/// ψ  = ζ − μ 𝓡⁻¹ ∇𝒥(ζ) + μ 𝓡⁻¹ v
/// 𝓌⁺ = 𝓐ᵀ ψ
/// ```
///
/// with `𝓐 = blkdiag{A_ℓ ⊗ I}` and `𝓡 = blkdiag{diag(r_ℓ) ⊗ I}` held as dense
/// matrices. Serves as an independent check of the per-agent recursion.
#[derive(Debug, Clone)]
pub struct NetworkForm {
    /// Start of each block's cluster segment in the stacked vector.
    block_offsets: Vec<usize>,
    a_transpose: DMatrix<f64>,
    r_inverse: DVector<f64>,
}

impl NetworkForm {
    pub fn assemble(problem: &Problem, weights: &CombinationSet) -> Self {
        let cmap = problem.clusters();
        let dim = cmap.stacked_dim();
        let mut block_offsets = Vec::with_capacity(cmap.block_count());
        let mut a = DMatrix::zeros(dim, dim);
        let mut r = DVector::zeros(dim);
        let mut offset = 0;
        for l in 0..cmap.block_count() {
            block_offsets.push(offset);
            let m = cmap.layout().dim(l);
            let mat = weights.matrix(l);
            let n = mat.size();
            for p in 0..n {
                for e in 0..m {
                    r[offset + p * m + e] = mat.perron[p];
                }
                for q in 0..n {
                    for e in 0..m {
                        a[(offset + p * m + e, offset + q * m + e)] = mat.entries[(p, q)];
                    }
                }
            }
            offset += n * m;
        }
        Self {
            block_offsets,
            a_transpose: a.transpose(),
            r_inverse: r.map(|x| 1.0 / x),
        }
    }

    pub fn dim(&self) -> usize {
        self.r_inverse.len()
    }

    fn copy_range(&self, problem: &Problem, block: usize, k: usize) -> std::ops::Range<usize> {
        let cmap = problem.clusters();
        let m = cmap.layout().dim(block);
        let p = cmap.position_in_cluster(block, k).expect("agent in cluster");
        let start = self.block_offsets[block] + p * m;
        start..start + m
    }

    /// Stacks per-agent local vectors into the network vector.
    pub fn stack(&self, problem: &Problem, locals: &[Vec<f64>]) -> DVector<f64> {
        let mut out = DVector::zeros(self.dim());
        for (k, w) in locals.iter().enumerate() {
            self.scatter(problem, k, w, &mut out);
        }
        out
    }

    pub fn unstack(&self, problem: &Problem, stacked: &DVector<f64>) -> Vec<Vec<f64>> {
        (0..problem.agent_count()).map(|k| self.gather(problem, k, stacked)).collect()
    }

    fn gather(&self, problem: &Problem, k: usize, stacked: &DVector<f64>) -> Vec<f64> {
        problem
            .clusters()
            .local_layout(k)
            .iter()
            .flat_map(|slot| stacked.as_slice()[self.copy_range(problem, slot.block, k)].to_vec())
            .collect()
    }

    fn scatter(&self, problem: &Problem, k: usize, local: &[f64], stacked: &mut DVector<f64>) {
        for slot in problem.clusters().local_layout(k) {
            let range = self.copy_range(problem, slot.block, k);
            stacked.as_mut_slice()[range].copy_from_slice(&local[slot.range()]);
        }
    }

    /// Weighted centroid `Σ_{k∈C_ℓ} r_ℓ(k) w_k^ℓ` of every block, as a
    /// global vector.
    pub fn centroid(&self, problem: &Problem, stacked: &DVector<f64>) -> Vec<f64> {
        let cmap = problem.clusters();
        let mut out = vec![0.0; cmap.layout().total_dim()];
        for l in 0..cmap.block_count() {
            let g = cmap.layout().range(l);
            for &k in cmap.cluster(l) {
                let range = self.copy_range(problem, l, k);
                let r = 1.0 / self.r_inverse[range.start];
                for (o, x) in out[g.clone()].iter_mut().zip(&stacked.as_slice()[range]) {
                    *o += r * x;
                }
            }
        }
        out
    }

    /// One step of the stacked recursion at iteration index `iteration`. The
    /// noise term is formed from the same keyed samples the per-agent
    /// recursion draws.
    pub fn step(
        &self,
        w: &DVector<f64>,
        problem: &Problem,
        cfg: &EngineConfig,
        iteration: u64,
    ) -> Result<DVector<f64>, EngineError> {
        if w.len() != self.dim() {
            return Err(EngineError::DimensionMismatch { expected: self.dim(), got: w.len() });
        }
        let n = problem.agent_count();
        let mut grad_p = DVector::zeros(self.dim());
        for k in 0..n {
            let wk = self.gather(problem, k, w);
            if let Some(g) = local_penalty_gradient(problem, k, &wk, cfg.eta)? {
                self.scatter(problem, k, &g, &mut grad_p);
            }
        }
        let zeta = w - (cfg.mu * cfg.eta) * self.r_inverse.component_mul(&grad_p);

        let mut grad_j = DVector::zeros(self.dim());
        let mut noise = DVector::zeros(self.dim());
        for k in 0..n {
            let zk = self.gather(problem, k, &zeta);
            let exact = problem.risk(k).true_gradient(&zk);
            if cfg.noise == NoiseMode::Stochastic {
                let sampled = risk_gradient(problem, k, &zk, cfg, iteration);
                let v: Vec<f64> = exact.iter().zip(&sampled).map(|(a, b)| a - b).collect();
                self.scatter(problem, k, &v, &mut noise);
            }
            self.scatter(problem, k, &exact, &mut grad_j);
        }
        let psi = &zeta - cfg.mu * self.r_inverse.component_mul(&grad_j) + cfg.mu * self.r_inverse.component_mul(&noise);
        Ok(&self.a_transpose * psi)
    }
}
