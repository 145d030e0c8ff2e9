//! Per-cluster combination matrices, their Perron vectors, and the step-size
//! scalings derived from them.
//!
//! Entry `(s, k)` of a cluster matrix is the weight agent `k` gives to the
//! copy received from agent `s`; rows and columns follow the sorted cluster
//! order. Matrices are left-stochastic: every column sums to one.

use nalgebra::{Complex, DMatrix, DVector, Schur, SymmetricEigen};
use thiserror::Error;

use crate::topology::{validate_connectivity, ClusterMap, NetworkSpec};

/// Largest cluster handled by the dense eigensolver.
pub const MAX_DENSE_CLUSTER: usize = 100;

const PERRON_TOL: f64 = 1e-14;
const PERRON_RESIDUAL: f64 = 1e-10;
const UNIT_GAP: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WeightError {
    #[error("cluster of block {0} is disconnected")]
    DisconnectedCluster(usize),
    #[error("matrix is not primitive: {0}")]
    NotPrimitive(String),
    #[error("cluster of size {0} exceeds the dense eigensolver limit of {MAX_DENSE_CLUSTER}")]
    ClusterTooLarge(usize),
    #[error("matrix is not square ({0}x{1})")]
    NotSquare(usize, usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WeightRule {
    #[default]
    Metropolis,
    Averaging,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CombinationMatrix {
    pub block: usize,
    /// Sorted members of the cluster; index `p` here is row/column `p`.
    pub agents: Vec<usize>,
    pub entries: DMatrix<f64>,
    pub perron: Vec<f64>,
    pub lambda2: f64,
}

impl CombinationMatrix {
    fn finish(block: usize, agents: Vec<usize>, entries: DMatrix<f64>) -> Result<Self, WeightError> {
        let perron = perron_vector(&entries)?;
        let lambda2 = second_eigenvalue_magnitude(&entries)?;
        Ok(Self { block, agents, entries, perron, lambda2 })
    }

    pub fn size(&self) -> usize {
        self.agents.len()
    }

    /// Weight `a_{ℓ,sk}` by agent id.
    pub fn weight(&self, s: usize, k: usize) -> f64 {
        match (self.agents.binary_search(&s), self.agents.binary_search(&k)) {
            (Ok(ps), Ok(pk)) => self.entries[(ps, pk)],
            _ => 0.0,
        }
    }

    /// `r_ℓ(k)` by agent id.
    pub fn perron_entry(&self, k: usize) -> Option<f64> {
        self.agents.binary_search(&k).ok().map(|p| self.perron[p])
    }
}

/// `n_{ℓ,k} = |N_k ∩ C_ℓ|` for every member, in cluster order.
fn cluster_degrees(net: &NetworkSpec, members: &[usize]) -> Vec<usize> {
    members
        .iter()
        .map(|&k| members.iter().filter(|&&s| net.in_neighborhood(k, s)).count())
        .collect()
}

fn check_connected(net: &NetworkSpec, cmap: &ClusterMap, block: usize) -> Result<(), WeightError> {
    // validate_connectivity covers every block; only the requested one matters.
    if validate_connectivity(net, cmap).contains(&block) {
        return Err(WeightError::DisconnectedCluster(block));
    }
    if cmap.cluster_size(block) > MAX_DENSE_CLUSTER {
        return Err(WeightError::ClusterTooLarge(cmap.cluster_size(block)));
    }
    Ok(())
}

pub fn metropolis_weights(
    cmap: &ClusterMap,
    net: &NetworkSpec,
    block: usize,
) -> Result<CombinationMatrix, WeightError> {
    check_connected(net, cmap, block)?;
    let members = cmap.cluster(block).to_vec();
    let n = cluster_degrees(net, &members);
    let size = members.len();
    let mut a = DMatrix::zeros(size, size);
    for k in 0..size {
        let mut off = 0.0;
        for s in 0..size {
            if s != k && net.in_neighborhood(members[k], members[s]) {
                let w = 1.0 / n[k].max(n[s]) as f64;
                a[(s, k)] = w;
                off += w;
            }
        }
        a[(k, k)] = 1.0 - off;
    }
    CombinationMatrix::finish(block, members, a)
}

pub fn averaging_weights(
    cmap: &ClusterMap,
    net: &NetworkSpec,
    block: usize,
) -> Result<CombinationMatrix, WeightError> {
    check_connected(net, cmap, block)?;
    let members = cmap.cluster(block).to_vec();
    let n = cluster_degrees(net, &members);
    let size = members.len();
    let mut a = DMatrix::zeros(size, size);
    for k in 0..size {
        for s in 0..size {
            if net.in_neighborhood(members[k], members[s]) {
                a[(s, k)] = 1.0 / n[k] as f64;
            }
        }
    }
    CombinationMatrix::finish(block, members, a)
}

/// Right eigenvector of a left-stochastic primitive matrix at eigenvalue one,
/// normalized to unit entry-sum, by power iteration from the uniform vector.
pub fn perron_vector(a: &DMatrix<f64>) -> Result<Vec<f64>, WeightError> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(WeightError::NotSquare(n, a.ncols()));
    }
    let cap = 100 * n * n;
    let mut r = vec![1.0 / n as f64; n];
    let mut next = vec![0.0; n];
    let mut converged = false;
    for _ in 0..cap.max(1) {
        for (i, out) in next.iter_mut().enumerate() {
            *out = (0..n).map(|j| a[(i, j)] * r[j]).sum();
        }
        let sum: f64 = next.iter().sum();
        next.iter_mut().for_each(|x| *x /= sum);
        let change = r.iter().zip(&next).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        std::mem::swap(&mut r, &mut next);
        if change <= PERRON_TOL {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(WeightError::NotPrimitive(format!("power iteration did not settle in {cap} steps")));
    }
    // Entries at the residual scale are numerically zero: the limit sits on
    // the boundary of the positive orthant and the matrix is reducible.
    if r.iter().any(|&x| x <= PERRON_RESIDUAL || !x.is_finite()) {
        return Err(WeightError::NotPrimitive("Perron vector has non-positive entries".into()));
    }
    let residual = (0..n)
        .map(|i| ((0..n).map(|j| a[(i, j)] * r[j]).sum::<f64>() - r[i]).abs())
        .fold(0.0, f64::max);
    if residual > PERRON_RESIDUAL {
        return Err(WeightError::NotPrimitive(format!("Perron residual {residual:e}")));
    }
    Ok(r)
}

/// Largest eigenvalue magnitude after removing one instance of the eigenvalue
/// one. Zero for a 1x1 matrix.
pub fn second_eigenvalue_magnitude(a: &DMatrix<f64>) -> Result<f64, WeightError> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(WeightError::NotSquare(n, a.ncols()));
    }
    if n > MAX_DENSE_CLUSTER {
        return Err(WeightError::ClusterTooLarge(n));
    }
    if n == 1 {
        return Ok(0.0);
    }
    let lambda2 = match eigenvalues(a) {
        Some(eig) => {
            let unit = eig
                .iter()
                .enumerate()
                .min_by(|(_, x), (_, y)| (*x - 1.0).norm().total_cmp(&(*y - 1.0).norm()))
                .map(|(i, _)| i)
                .unwrap_or(0);
            eig.iter()
                .enumerate()
                .filter(|&(i, _)| i != unit)
                .map(|(_, z)| z.norm())
                .fold(0.0, f64::max)
        }
        None => deflated_spectral_radius(a)?,
    };
    if lambda2 >= 1.0 - UNIT_GAP {
        return Err(WeightError::NotPrimitive(format!("second eigenvalue magnitude {lambda2}")));
    }
    Ok(lambda2)
}

/// Eigenvalues of `a`, or `None` if the Schur iteration does not settle.
///
/// Metropolis and averaging matrices are reversible (`A diag(r)` is
/// symmetric), hence similar to the symmetric `diag(r)^{-1/2} A diag(r)^{1/2}`,
/// which has a reliable solver.
fn eigenvalues(a: &DMatrix<f64>) -> Option<Vec<Complex<f64>>> {
    let n = a.nrows();
    if let Ok(r) = perron_vector(a) {
        let ar = a * DMatrix::from_diagonal(&DVector::from_column_slice(&r));
        if (&ar - ar.transpose()).amax() <= 1e-12 * ar.amax() {
            let sqrt = DVector::from_iterator(n, r.iter().map(|x| x.sqrt()));
            let mut s = a.clone();
            for i in 0..n {
                for j in 0..n {
                    s[(i, j)] *= sqrt[j] / sqrt[i];
                }
            }
            let s = (&s + s.transpose()) * 0.5;
            return Some(SymmetricEigen::new(s).eigenvalues.iter().map(|&x| Complex::new(x, 0.0)).collect());
        }
    }
    Schur::try_new(a.clone(), f64::EPSILON, 10_000 * n).map(|s| s.complex_eigenvalues().iter().copied().collect())
}

/// `ρ(A − r 1ᵀ)` by Gelfand's formula on repeated squares. Removing the rank-one
/// Perron part leaves every other eigenvalue of `A` in place.
fn deflated_spectral_radius(a: &DMatrix<f64>) -> Result<f64, WeightError> {
    let n = a.nrows();
    let r = DVector::from_vec(perron_vector(a)?);
    let mut b = a - &r * DMatrix::from_element(1, n, 1.0);
    let mut power = 1.0;
    let mut log_scale = 0.0;
    for _ in 0..12 {
        let norm = b.norm();
        if norm == 0.0 {
            return Ok(0.0);
        }
        // keep the iterate normalized; track the scale in the log domain
        log_scale += norm.ln() / power;
        b /= norm;
        b = &b * &b;
        power *= 2.0;
    }
    Ok((log_scale + b.norm().ln() / power).exp())
}

/// One combination matrix per block.
#[derive(Debug, Clone, PartialEq)]
pub struct CombinationSet {
    pub rule: WeightRule,
    pub matrices: Vec<CombinationMatrix>,
}

impl CombinationSet {
    pub fn build(cmap: &ClusterMap, net: &NetworkSpec, rule: WeightRule) -> Result<Self, WeightError> {
        let matrices = (0..cmap.block_count())
            .map(|l| match rule {
                WeightRule::Metropolis => metropolis_weights(cmap, net, l),
                WeightRule::Averaging => averaging_weights(cmap, net, l),
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self { rule, matrices })
    }

    pub fn matrix(&self, block: usize) -> &CombinationMatrix {
        &self.matrices[block]
    }

    /// `λ(2) = max_ℓ |λ_ℓ(2)|`.
    pub fn lambda2(&self) -> f64 {
        self.matrices.iter().map(|m| m.lambda2).fold(0.0, f64::max)
    }
}

/// `Ω_k`: one scalar `1/r_ℓ(k)` per local slot, in local-layout order.
#[derive(Debug, Clone, PartialEq)]
pub struct StepScaling {
    pub agent: usize,
    pub factors: Vec<f64>,
}

impl StepScaling {
    /// Multiplies `v` (a local vector) by `Ω_k` in place.
    pub fn apply(&self, cmap: &ClusterMap, v: &mut [f64]) {
        for (slot, &f) in cmap.local_layout(self.agent).iter().zip(&self.factors) {
            v[slot.range()].iter_mut().for_each(|x| *x *= f);
        }
    }
}

/// How the per-agent step sizes relate to the Perron entries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StepScale {
    /// `Ω_k = diag{1/r_ℓ(k)}`: the cluster centroid takes a step of `μ`
    /// along the summed gradient.
    #[default]
    Perron,
    /// `Ω_k = diag{1/(N_ℓ r_ℓ(k))}`: the cluster-size factor is absorbed
    /// into `μ`, so the centroid moves along the cluster-averaged gradient,
    /// like the centralized recursion with `D = diag{I/N_ℓ}`. Under the
    /// Metropolis rule this is `Ω_k = I`.
    Absorbed,
}

pub fn step_scaling(cmap: &ClusterMap, weights: &CombinationSet) -> Vec<StepScaling> {
    scaled_step_scaling(cmap, weights, StepScale::Perron)
}

pub fn scaled_step_scaling(cmap: &ClusterMap, weights: &CombinationSet, scale: StepScale) -> Vec<StepScaling> {
    (0..cmap.agent_count())
        .map(|k| StepScaling {
            agent: k,
            factors: cmap
                .local_layout(k)
                .iter()
                .map(|slot| {
                    let r = weights.matrix(slot.block).perron_entry(k).expect("agent belongs to its clusters");
                    match scale {
                        StepScale::Perron => 1.0 / r,
                        StepScale::Absorbed => 1.0 / (cmap.cluster_size(slot.block) as f64 * r),
                    }
                })
                .collect(),
        })
        .collect()
}
