//! Mean-square deviation, consensus disagreement, reference optima and
//! empirical convergence rates.

use std::ops::Range;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::Serialize;
use thiserror::Error;

use crate::objective::{penalty_gradient, penalty_value, PenaltyConfig};
use crate::problem::Problem;
use crate::topology::ClusterMap;
use crate::weights::CombinationSet;

/// Smallest admissible eigenvalue of an assembled Hessian.
const MIN_EIGENVALUE: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("assembled system is singular (minimum eigenvalue {0:e})")]
    SingularSystem(f64),
    #[error("constraints are inconsistent (KKT residual {0:e})")]
    InfeasibleConstraints(f64),
    #[error("constrained optimum needs affine equality constraints and quadratic risks")]
    Unsupported,
    #[error("gradient descent did not reach tolerance (gradient norm {0:e})")]
    NotConverged(f64),
    #[error("rate window holds {0} points, need at least 3")]
    WindowTooShort(usize),
    #[error("MSD does not strictly decrease at index {0}")]
    NonDecreasingMSD(usize),
}

pub fn to_db(x: f64) -> f64 {
    10.0 * x.log10()
}

/// `Σ_ℓ (1/N_ℓ) Σ_{k∈C_ℓ} ‖ref^ℓ − w_k^ℓ‖²`.
pub fn msd(iterates: &[Vec<f64>], cmap: &ClusterMap, reference: &[f64]) -> f64 {
    let layout = cmap.layout();
    let mut total = 0.0;
    for l in 0..cmap.block_count() {
        let r = &reference[layout.range(l)];
        let sum: f64 = cmap
            .cluster(l)
            .iter()
            .map(|&k| {
                let slot = cmap.slot(k, l).expect("cluster member");
                iterates[k][slot.range()].iter().zip(r).map(|(w, x)| (x - w) * (x - w)).sum::<f64>()
            })
            .sum();
        total += sum / cmap.cluster_size(l) as f64;
    }
    total
}

/// Largest pairwise distance between local copies, per block.
pub fn disagreement(iterates: &[Vec<f64>], cmap: &ClusterMap) -> Vec<f64> {
    (0..cmap.block_count())
        .map(|l| {
            let copies: Vec<&[f64]> = cmap
                .cluster(l)
                .iter()
                .map(|&k| &iterates[k][cmap.slot(k, l).expect("cluster member").range()])
                .collect();
            let mut worst: f64 = 0.0;
            for (i, a) in copies.iter().enumerate() {
                for b in &copies[i + 1..] {
                    let d2: f64 = a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum();
                    worst = worst.max(d2);
                }
            }
            worst.sqrt()
        })
        .collect()
}

/// Perron-weighted centroid `Σ_{k∈C_ℓ} r_ℓ(k) w_k^ℓ` of every block.
pub fn weighted_centroid(iterates: &[Vec<f64>], cmap: &ClusterMap, weights: &CombinationSet) -> Vec<f64> {
    let layout = cmap.layout();
    let mut out = vec![0.0; layout.total_dim()];
    for l in 0..cmap.block_count() {
        let a = weights.matrix(l);
        for (p, &k) in a.agents.iter().enumerate() {
            let slot = cmap.slot(k, l).expect("cluster member");
            for (o, x) in out[layout.range(l)].iter_mut().zip(&iterates[k][slot.range()]) {
                *o += a.perron[p] * x;
            }
        }
    }
    out
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    ClosedForm,
    Iterative,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Optimum {
    pub w: Vec<f64>,
    pub provenance: Provenance,
}

/// Penalized optimum `w⋆` and constrained optimum `w°`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReferenceSolution {
    pub w_star: Vec<f64>,
    pub w_o: Vec<f64>,
    pub provenance: Provenance,
}

impl ReferenceSolution {
    pub fn compute(problem: &Problem, eta: f64) -> Result<Self, MetricsError> {
        let star = penalized_optimum(problem, eta)?;
        let w_o = constrained_optimum(problem)?;
        Ok(Self { w_star: star.w, w_o, provenance: star.provenance })
    }
}

fn min_eigenvalue(h: &DMatrix<f64>) -> f64 {
    if h.nrows() == 0 {
        return f64::INFINITY;
    }
    SymmetricEigen::new(h.clone()).eigenvalues.min()
}

/// Strong-convexity constant `ν` of the aggregate quadratic risk.
pub fn strong_convexity(problem: &Problem) -> Result<f64, MetricsError> {
    let (h, _) = problem.global_quadratic().ok_or(MetricsError::Unsupported)?;
    let nu = min_eigenvalue(&h);
    if nu <= MIN_EIGENVALUE {
        return Err(MetricsError::SingularSystem(nu));
    }
    Ok(nu)
}

/// Minimizer of `J_glob(w) + η p_glob(w)`. Closed form for quadratic risks
/// with affine equality constraints; gradient descent otherwise.
pub fn penalized_optimum(problem: &Problem, eta: f64) -> Result<Optimum, MetricsError> {
    if let (Some((h, f)), Some((g, b))) = (problem.global_quadratic(), problem.equality_system()) {
        let lhs = &h + 2.0 * eta * g.transpose() * &g;
        let rhs = &f + 2.0 * eta * g.transpose() * &b;
        let nu = min_eigenvalue(&lhs);
        if nu <= MIN_EIGENVALUE {
            return Err(MetricsError::SingularSystem(nu));
        }
        let w = lhs.cholesky().ok_or(MetricsError::SingularSystem(nu))?.solve(&rhs);
        return Ok(Optimum { w: w.data.into(), provenance: Provenance::ClosedForm });
    }
    descend(problem, eta).map(|w| Optimum { w, provenance: Provenance::Iterative })
}

fn global_objective(problem: &Problem, eta: f64, w: &[f64]) -> (f64, Vec<f64>) {
    let cmap = problem.clusters();
    let cfg = PenaltyConfig { eta, rho: problem.rho() };
    let mut value = 0.0;
    let mut grad = vec![0.0; w.len()];
    for k in 0..problem.agent_count() {
        let wk = cmap.restrict(k, w);
        let risk = problem.risk(k);
        value += risk.value(&wk);
        let mut g = risk.true_gradient(&wk);
        let cons = problem.constraints(k);
        if eta > 0.0 && !cons.is_empty() {
            value += eta * penalty_value(cons, &wk, &cfg).expect("constraint dimensions validated");
            let p = penalty_gradient(cons, &wk, &cfg).expect("constraint dimensions validated");
            g.iter_mut().zip(&p).for_each(|(a, b)| *a += eta * b);
        }
        cmap.accumulate(k, &g, &mut grad);
    }
    (value, grad)
}

/// Deterministic gradient descent with Armijo backtracking until
/// `‖∇J_η‖ ≤ 1e−10`.
fn descend(problem: &Problem, eta: f64) -> Result<Vec<f64>, MetricsError> {
    const TOL: f64 = 1e-10;
    const MAX_ITERS: usize = 1_000_000;
    let mut w = vec![0.0; problem.layout().total_dim()];
    let (mut value, mut grad) = global_objective(problem, eta, &w);
    let mut step = 1.0;
    for _ in 0..MAX_ITERS {
        let gnorm2: f64 = grad.iter().map(|g| g * g).sum();
        if gnorm2.sqrt() <= TOL {
            return Ok(w);
        }
        loop {
            let trial: Vec<f64> = w.iter().zip(&grad).map(|(x, g)| x - step * g).collect();
            let (tv, tg) = global_objective(problem, eta, &trial);
            if tv <= value - 0.5 * step * gnorm2 || step < 1e-300 {
                w = trial;
                value = tv;
                grad = tg;
                step *= 2.0;
                break;
            }
            step *= 0.5;
        }
    }
    let gnorm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    Err(MetricsError::NotConverged(gnorm))
}

/// Minimizer of the quadratic aggregate risk subject to `G w = b`, from the
/// KKT system `[H Gᵀ; G 0][w; λ] = [f; b]`.
pub fn constrained_optimum(problem: &Problem) -> Result<Vec<f64>, MetricsError> {
    let (h, f) = problem.global_quadratic().ok_or(MetricsError::Unsupported)?;
    let (g, b) = problem.equality_system().ok_or(MetricsError::Unsupported)?;
    let nu = min_eigenvalue(&h);
    if nu <= MIN_EIGENVALUE {
        return Err(MetricsError::SingularSystem(nu));
    }
    let m = h.nrows();
    let c = g.nrows();
    if c == 0 {
        let w = h.cholesky().ok_or(MetricsError::SingularSystem(nu))?.solve(&f);
        return Ok(w.data.into());
    }
    let mut kkt = DMatrix::zeros(m + c, m + c);
    kkt.view_mut((0, 0), (m, m)).copy_from(&h);
    kkt.view_mut((0, m), (m, c)).copy_from(&g.transpose());
    kkt.view_mut((m, 0), (c, m)).copy_from(&g);
    let mut rhs = DVector::zeros(m + c);
    rhs.rows_mut(0, m).copy_from(&f);
    rhs.rows_mut(m, c).copy_from(&b);
    let scale = 1.0 + rhs.amax();
    // SVD tolerates redundant but consistent constraint rows.
    let sol = kkt
        .clone()
        .svd(true, true)
        .solve(&rhs, 1e-12 * kkt.amax())
        .map_err(|_| MetricsError::InfeasibleConstraints(f64::NAN))?;
    let residual = (&kkt * &sol - &rhs).amax();
    if residual > 1e-8 * scale {
        return Err(MetricsError::InfeasibleConstraints(residual));
    }
    let w = sol.rows(0, m).into_owned();
    let feas = (&g * &w - &b).amax();
    if feas > 1e-10 * scale {
        return Err(MetricsError::InfeasibleConstraints(feas));
    }
    Ok(w.data.into())
}

/// Per-iteration contraction factor fitted as `exp(slope)` of a
/// least-squares line through `ln MSD_i` over `window`.
pub fn empirical_rate(msd: &[f64], window: Range<usize>) -> Result<f64, MetricsError> {
    let end = window.end.min(msd.len());
    let start = window.start.min(end);
    let pts = &msd[start..end];
    if pts.len() < 3 {
        return Err(MetricsError::WindowTooShort(pts.len()));
    }
    if let Some(i) = pts.windows(2).position(|w| !(w[1] < w[0])) {
        return Err(MetricsError::NonDecreasingMSD(start + i + 1));
    }
    let n = pts.len() as f64;
    let xm = (n - 1.0) / 2.0;
    let logs: Vec<f64> = pts.iter().map(|x| x.ln()).collect();
    let ym = logs.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (i, y) in logs.iter().enumerate() {
        let dx = i as f64 - xm;
        sxy += dx * (y - ym);
        sxx += dx * dx;
    }
    Ok((sxy / sxx).exp())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsRecord {
    pub iteration: u64,
    /// MSD against `w⋆`.
    pub msd: f64,
    pub msd_db: f64,
    /// MSD against `w°`.
    pub msd_wo: f64,
    pub disagreement: Vec<f64>,
    pub centroid_to_star: f64,
    pub centroid_to_wo: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct MetricsLog {
    pub records: Vec<MetricsRecord>,
}

impl MetricsLog {
    pub fn record(
        &mut self,
        iteration: u64,
        iterates: &[Vec<f64>],
        cmap: &ClusterMap,
        weights: &CombinationSet,
        reference: &ReferenceSolution,
    ) {
        let m = msd(iterates, cmap, &reference.w_star);
        let centroid = weighted_centroid(iterates, cmap, weights);
        self.records.push(MetricsRecord {
            iteration,
            msd: m,
            msd_db: to_db(m),
            msd_wo: msd(iterates, cmap, &reference.w_o),
            disagreement: disagreement(iterates, cmap),
            centroid_to_star: distance(&centroid, &reference.w_star),
            centroid_to_wo: distance(&centroid, &reference.w_o),
        });
    }

    pub fn msd_series(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.msd).collect()
    }
}

/// Mean over the final 10% of a series (at least one point).
pub fn steady_state(series: &[f64]) -> f64 {
    let tail = (series.len() / 10).max(1).min(series.len());
    series[series.len() - tail..].iter().sum::<f64>() / tail as f64
}
