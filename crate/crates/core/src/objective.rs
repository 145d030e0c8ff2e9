//! Local risks, constraints and the smooth penalties that replace them.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::rng::StreamRng;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ObjectiveError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("constraints belong to different agents ({0} and {1})")]
    MixedOwners(usize, usize),
    #[error("invalid penalty configuration: {0}")]
    InvalidPenalty(String),
    #[error("invalid risk oracle: {0}")]
    InvalidOracle(String),
}

/// `η` weights the penalty inside the engine; `ρ` smooths the inequality penalty.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PenaltyConfig {
    pub eta: f64,
    pub rho: f64,
}

impl PenaltyConfig {
    pub fn new(eta: f64, rho: f64) -> Result<Self, ObjectiveError> {
        if !(eta >= 0.0 && eta.is_finite()) {
            return Err(ObjectiveError::InvalidPenalty(format!("eta must be finite and >= 0, got {eta}")));
        }
        if !(rho > 0.0 && rho.is_finite()) {
            return Err(ObjectiveError::InvalidPenalty(format!("rho must be finite and > 0, got {rho}")));
        }
        Ok(Self { eta, rho })
    }
}

impl Default for PenaltyConfig {
    fn default() -> Self {
        Self { eta: 0.0, rho: 1.0 }
    }
}

/// Equality penalty `x²` and its derivative.
pub fn ep_penalty(x: f64) -> (f64, f64) {
    (x * x, 2.0 * x)
}

/// Inequality penalty `max(0, x³/√(x²+ρ²))` and its derivative
/// `x²(2x²+3ρ²)/(x²+ρ²)^{3/2}` on `x > 0`.
pub fn ip_penalty(x: f64, rho: f64) -> (f64, f64) {
    if x <= 0.0 {
        return (0.0, 0.0);
    }
    let s = x * x + rho * rho;
    let root = s.sqrt();
    let value = x * x * x / root;
    let derivative = x * x * (2.0 * x * x + 3.0 * rho * rho) / (s * root);
    (value, derivative)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConstraintKind {
    /// `h(w_k) = 0`
    Equality,
    /// `g(w_k) ≤ 0`
    Inequality,
}

/// User-supplied convex constraint: returns `(g(w), ∇g(w))`.
pub type ConstraintFn = Arc<dyn Fn(&[f64]) -> (f64, Vec<f64>) + Send + Sync>;

#[derive(Clone)]
pub enum ConstraintForm {
    /// `cᵀw − b`
    Affine { c: Vec<f64>, b: f64 },
    Custom { dim: usize, func: ConstraintFn },
}

impl fmt::Debug for ConstraintForm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Affine { c, b } => f.debug_struct("Affine").field("c", c).field("b", b).finish(),
            Self::Custom { dim, .. } => f.debug_struct("Custom").field("dim", dim).finish_non_exhaustive(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ConstraintSpec {
    pub kind: ConstraintKind,
    pub owner: usize,
    pub form: ConstraintForm,
}

impl ConstraintSpec {
    pub fn affine_equality(owner: usize, c: Vec<f64>, b: f64) -> Self {
        Self { kind: ConstraintKind::Equality, owner, form: ConstraintForm::Affine { c, b } }
    }

    pub fn affine_inequality(owner: usize, c: Vec<f64>, b: f64) -> Self {
        Self { kind: ConstraintKind::Inequality, owner, form: ConstraintForm::Affine { c, b } }
    }

    /// Convex inequality `g(w_k) ≤ 0` given by a value/gradient callback.
    pub fn custom_inequality(owner: usize, dim: usize, func: ConstraintFn) -> Self {
        Self { kind: ConstraintKind::Inequality, owner, form: ConstraintForm::Custom { dim, func } }
    }

    pub fn dim(&self) -> usize {
        match &self.form {
            ConstraintForm::Affine { c, .. } => c.len(),
            ConstraintForm::Custom { dim, .. } => *dim,
        }
    }

    pub fn evaluate(&self, w: &[f64]) -> Result<(f64, Vec<f64>), ObjectiveError> {
        if w.len() != self.dim() {
            return Err(ObjectiveError::DimensionMismatch { expected: self.dim(), got: w.len() });
        }
        Ok(match &self.form {
            ConstraintForm::Affine { c, b } => (dot(c, w) - b, c.clone()),
            ConstraintForm::Custom { func, .. } => func(w),
        })
    }

    /// Re-expresses the constraint on a larger local vector: old coordinate
    /// `j` lives at `positions[j]` of the new vector of length `dim`.
    pub fn reindexed(&self, positions: &[usize], dim: usize) -> Self {
        let form = match &self.form {
            ConstraintForm::Affine { c, b } => {
                let mut lifted = vec![0.0; dim];
                for (j, &p) in positions.iter().enumerate() {
                    lifted[p] = c[j];
                }
                ConstraintForm::Affine { c: lifted, b: *b }
            }
            ConstraintForm::Custom { func, .. } => {
                let func = Arc::clone(func);
                let positions = positions.to_vec();
                ConstraintForm::Custom {
                    dim,
                    func: Arc::new(move |w: &[f64]| {
                        let inner: Vec<f64> = positions.iter().map(|&p| w[p]).collect();
                        let (v, g) = func(&inner);
                        let mut lifted = vec![0.0; dim];
                        for (j, &p) in positions.iter().enumerate() {
                            lifted[p] = g[j];
                        }
                        (v, lifted)
                    }),
                }
            }
        };
        Self { kind: self.kind, owner: self.owner, form }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn check_owners(constraints: &[ConstraintSpec]) -> Result<(), ObjectiveError> {
    if let Some(first) = constraints.first() {
        if let Some(other) = constraints.iter().find(|c| c.owner != first.owner) {
            return Err(ObjectiveError::MixedOwners(first.owner, other.owner));
        }
    }
    Ok(())
}

/// `p_k(w_k)`, without the `η` factor.
pub fn penalty_value(constraints: &[ConstraintSpec], w: &[f64], cfg: &PenaltyConfig) -> Result<f64, ObjectiveError> {
    check_owners(constraints)?;
    let mut total = 0.0;
    for c in constraints {
        let (v, _) = c.evaluate(w)?;
        total += match c.kind {
            ConstraintKind::Equality => ep_penalty(v).0,
            ConstraintKind::Inequality => ip_penalty(v, cfg.rho).0,
        };
    }
    Ok(total)
}

/// `∇p_k(w_k)`, without the `η` factor.
pub fn penalty_gradient(
    constraints: &[ConstraintSpec],
    w: &[f64],
    cfg: &PenaltyConfig,
) -> Result<Vec<f64>, ObjectiveError> {
    check_owners(constraints)?;
    let mut grad = vec![0.0; w.len()];
    for c in constraints {
        let (v, g) = c.evaluate(w)?;
        if g.len() != w.len() {
            return Err(ObjectiveError::DimensionMismatch { expected: w.len(), got: g.len() });
        }
        let d = match c.kind {
            ConstraintKind::Equality => ep_penalty(v).1,
            ConstraintKind::Inequality => ip_penalty(v, cfg.rho).1,
        };
        if d != 0.0 {
            grad.iter_mut().zip(&g).for_each(|(out, gi)| *out += d * gi);
        }
    }
    Ok(grad)
}

/// Gradient of a quadratic risk written as `H w − f`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticForm {
    pub hessian: DMatrix<f64>,
    pub linear: DVector<f64>,
}

/// Local risk `J_k` accessed through gradient samples.
pub trait RiskOracle: Send + Sync + fmt::Debug {
    fn dim(&self) -> usize;

    fn value(&self, w: &[f64]) -> f64;

    fn true_gradient(&self, w: &[f64]) -> Vec<f64>;

    /// One stochastic gradient `∇̂J_k(w)`, drawing all randomness from `rng`.
    fn sample_gradient(&self, w: &[f64], rng: &mut StreamRng) -> Vec<f64>;

    /// `Some` when the risk is quadratic, which lets reference optima be
    /// computed in closed form.
    fn quadratic_form(&self) -> Option<QuadraticForm> {
        None
    }
}

/// Streaming least-squares risk `E(h̄ᵀw − y)²` with `h̄ ~ N(0, U Λ Uᵀ)` and
/// `y = h̄ᵀw• + v`, `v ~ N(0, σ²)`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticRiskOracle {
    basis: DMatrix<f64>,
    spectrum: DVector<f64>,
    factor: DMatrix<f64>,
    covariance: DMatrix<f64>,
    target: DVector<f64>,
    noise_std: f64,
}

impl QuadraticRiskOracle {
    /// `basis` must be orthogonal and `spectrum` positive.
    pub fn new(basis: DMatrix<f64>, spectrum: Vec<f64>, target: Vec<f64>, noise_std: f64) -> Result<Self, ObjectiveError> {
        let q = basis.nrows();
        if basis.ncols() != q || spectrum.len() != q || target.len() != q {
            return Err(ObjectiveError::DimensionMismatch { expected: q, got: spectrum.len().max(target.len()) });
        }
        let orth = (basis.transpose() * &basis - DMatrix::identity(q, q)).abs().max();
        if orth > 1e-10 {
            return Err(ObjectiveError::InvalidOracle(format!("basis not orthogonal (deviation {orth:e})")));
        }
        if spectrum.iter().any(|&l| !(l > 0.0)) {
            return Err(ObjectiveError::InvalidOracle("spectrum must be positive".into()));
        }
        if !(noise_std >= 0.0) {
            return Err(ObjectiveError::InvalidOracle(format!("noise std {noise_std}")));
        }
        let spectrum = DVector::from_vec(spectrum);
        let sqrt = spectrum.map(f64::sqrt);
        let factor = &basis * DMatrix::from_diagonal(&sqrt);
        let covariance = &basis * DMatrix::from_diagonal(&spectrum) * basis.transpose();
        Ok(Self {
            basis,
            spectrum,
            factor,
            covariance,
            target: DVector::from_vec(target),
            noise_std,
        })
    }

    /// Random instance: Haar-like orthogonal basis and spectrum drawn
    /// uniformly from `eigen_range`.
    pub fn random(
        target: Vec<f64>,
        noise_std: f64,
        eigen_range: (f64, f64),
        rng: &mut StreamRng,
    ) -> Result<Self, ObjectiveError> {
        let q = target.len();
        let basis = random_orthogonal(q, rng);
        let spectrum = (0..q).map(|_| rng.random_range(eigen_range.0..=eigen_range.1)).collect();
        Self::new(basis, spectrum, target, noise_std)
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.covariance
    }

    pub fn basis(&self) -> &DMatrix<f64> {
        &self.basis
    }

    pub fn spectrum(&self) -> &DVector<f64> {
        &self.spectrum
    }

    pub fn target(&self) -> &DVector<f64> {
        &self.target
    }

    pub fn noise_std(&self) -> f64 {
        self.noise_std
    }

    /// Draws one regressor/measurement pair `(h̄, y)`.
    pub fn sample(&self, rng: &mut StreamRng) -> (DVector<f64>, f64) {
        let q = self.target.len();
        let u = DVector::from_iterator(q, (0..q).map(|_| rng.sample::<f64, _>(StandardNormal)));
        let h = &self.factor * u;
        let noise: f64 = rng.sample(StandardNormal);
        let y = h.dot(&self.target) + self.noise_std * noise;
        (h, y)
    }
}

/// QR of a standard Gaussian matrix with the sign of `R`'s diagonal folded
/// into `Q`.
pub fn random_orthogonal(n: usize, rng: &mut StreamRng) -> DMatrix<f64> {
    let g = DMatrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let qr = g.qr();
    let r = qr.r();
    let mut q = qr.q();
    for j in 0..n {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

impl RiskOracle for QuadraticRiskOracle {
    fn dim(&self) -> usize {
        self.target.len()
    }

    fn value(&self, w: &[f64]) -> f64 {
        let e = DVector::from_column_slice(w) - &self.target;
        e.dot(&(&self.covariance * &e)) + self.noise_std * self.noise_std
    }

    fn true_gradient(&self, w: &[f64]) -> Vec<f64> {
        let e = DVector::from_column_slice(w) - &self.target;
        (2.0 * &self.covariance * e).data.into()
    }

    fn sample_gradient(&self, w: &[f64], rng: &mut StreamRng) -> Vec<f64> {
        let (h, y) = self.sample(rng);
        let residual = h.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() - y;
        h.iter().map(|x| 2.0 * x * residual).collect()
    }

    fn quadratic_form(&self) -> Option<QuadraticForm> {
        let hessian = 2.0 * &self.covariance;
        let linear = &hessian * &self.target;
        Some(QuadraticForm { hessian, linear })
    }
}

/// Risk defined on a subset of a larger local vector; the extra coordinates
/// carry a zero cost. Used when cluster embedding adds blocks to an agent.
#[derive(Debug, Clone)]
pub struct EmbeddedRisk {
    inner: Arc<dyn RiskOracle>,
    positions: Vec<usize>,
    dim: usize,
}

impl EmbeddedRisk {
    pub fn new(inner: Arc<dyn RiskOracle>, positions: Vec<usize>, dim: usize) -> Self {
        assert_eq!(inner.dim(), positions.len());
        Self { inner, positions, dim }
    }

    fn gather(&self, w: &[f64]) -> Vec<f64> {
        self.positions.iter().map(|&p| w[p]).collect()
    }

    fn scatter(&self, g: Vec<f64>) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        for (&p, v) in self.positions.iter().zip(g) {
            out[p] = v;
        }
        out
    }
}

impl RiskOracle for EmbeddedRisk {
    fn dim(&self) -> usize {
        self.dim
    }

    fn value(&self, w: &[f64]) -> f64 {
        self.inner.value(&self.gather(w))
    }

    fn true_gradient(&self, w: &[f64]) -> Vec<f64> {
        self.scatter(self.inner.true_gradient(&self.gather(w)))
    }

    fn sample_gradient(&self, w: &[f64], rng: &mut StreamRng) -> Vec<f64> {
        self.scatter(self.inner.sample_gradient(&self.gather(w), rng))
    }

    fn quadratic_form(&self) -> Option<QuadraticForm> {
        let inner = self.inner.quadratic_form()?;
        let mut hessian = DMatrix::zeros(self.dim, self.dim);
        let mut linear = DVector::zeros(self.dim);
        for (i, &pi) in self.positions.iter().enumerate() {
            linear[pi] = inner.linear[i];
            for (j, &pj) in self.positions.iter().enumerate() {
                hessian[(pi, pj)] = inner.hessian[(i, j)];
            }
        }
        Some(QuadraticForm { hessian, linear })
    }
}

/// A stochastic gradient, optionally paired with the exact gradient at the
/// same point for noise diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSample {
    pub gradient: Vec<f64>,
    pub true_gradient: Option<Vec<f64>>,
}

impl GradientSample {
    /// Gradient noise `∇J − ∇̂J`, when the exact gradient was recorded.
    pub fn noise(&self) -> Option<Vec<f64>> {
        self.true_gradient
            .as_ref()
            .map(|t| t.iter().zip(&self.gradient).map(|(a, b)| a - b).collect())
    }
}

pub fn sample_stochastic_gradient(
    oracle: &dyn RiskOracle,
    zeta: &[f64],
    rng: &mut StreamRng,
    with_true: bool,
) -> Result<GradientSample, ObjectiveError> {
    if zeta.len() != oracle.dim() {
        return Err(ObjectiveError::DimensionMismatch { expected: oracle.dim(), got: zeta.len() });
    }
    Ok(GradientSample {
        gradient: oracle.sample_gradient(zeta, rng),
        true_gradient: with_true.then(|| oracle.true_gradient(zeta)),
    })
}

pub fn true_gradient(oracle: &dyn RiskOracle, w: &[f64]) -> Result<Vec<f64>, ObjectiveError> {
    if w.len() != oracle.dim() {
        return Err(ObjectiveError::DimensionMismatch { expected: oracle.dim(), got: w.len() });
    }
    Ok(oracle.true_gradient(w))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::keyed;
    use approx::assert_abs_diff_eq;

    fn central_diff(f: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
        (f(x + h) - f(x - h)) / (2.0 * h)
    }

    #[test]
    fn ep_values() {
        assert_eq!(ep_penalty(0.0), (0.0, 0.0));
        assert_eq!(ep_penalty(3.0), (9.0, 6.0));
        assert_eq!(ep_penalty(-2.0), (4.0, -4.0));
    }

    #[test]
    fn ip_values() {
        assert_eq!(ip_penalty(-5.0, 1.0), (0.0, 0.0));
        assert_eq!(ip_penalty(0.0, 1.0), (0.0, 0.0));
        let (v, d) = ip_penalty(1.0, 1.0);
        assert_abs_diff_eq!(v, 2f64.powf(-0.5), epsilon = 1e-15);
        assert_abs_diff_eq!(d, 5.0 * 2f64.powf(-1.5), epsilon = 1e-15);
        let fd = central_diff(|x| ip_penalty(x, 1.0).0, 1.0, 1e-6);
        assert!((fd - d).abs() < 1e-6);
        // continuity at the kink
        let (v, d) = ip_penalty(1e-9, 1.0);
        assert!(v < 1e-25 && d < 1e-17);
    }

    #[test]
    fn penalty_gradient_cases() {
        let cfg = PenaltyConfig::default();
        assert_eq!(penalty_gradient(&[], &[1.0, 2.0], &cfg).unwrap(), vec![0.0, 0.0]);
        let on_surface = ConstraintSpec::affine_equality(0, vec![1.0, 1.0], 3.0);
        assert_eq!(penalty_gradient(&[on_surface], &[1.0, 2.0], &cfg).unwrap(), vec![0.0, 0.0]);
        let c = ConstraintSpec::affine_equality(0, vec![1.0, 0.0], 1.0);
        assert_eq!(penalty_gradient(&[c.clone()], &[3.0, 5.0], &cfg).unwrap(), vec![4.0, 0.0]);
        assert_eq!(
            penalty_gradient(&[c], &[3.0], &cfg),
            Err(ObjectiveError::DimensionMismatch { expected: 2, got: 1 })
        );
        let a = ConstraintSpec::affine_equality(0, vec![1.0], 0.0);
        let b = ConstraintSpec::affine_equality(1, vec![1.0], 0.0);
        assert_eq!(penalty_gradient(&[a, b], &[1.0], &cfg), Err(ObjectiveError::MixedOwners(0, 1)));
    }

    #[test]
    fn custom_constraint_reindexed() {
        // g(w) = w0² + w1² − 1 on a 2-vector, lifted into positions {2, 0} of a 3-vector
        let ball = ConstraintSpec::custom_inequality(
            0,
            2,
            Arc::new(|w: &[f64]| (w[0] * w[0] + w[1] * w[1] - 1.0, vec![2.0 * w[0], 2.0 * w[1]])),
        );
        let lifted = ball.reindexed(&[2, 0], 3);
        let (v, g) = lifted.evaluate(&[0.5, 7.0, 2.0]).unwrap();
        assert_abs_diff_eq!(v, 4.0 + 0.25 - 1.0);
        assert_eq!(g, vec![1.0, 0.0, 4.0]);
        let aff = ConstraintSpec::affine_equality(0, vec![1.0, 2.0], 3.0).reindexed(&[2, 0], 3);
        match aff.form {
            ConstraintForm::Affine { c, b } => {
                assert_eq!(c, vec![2.0, 0.0, 1.0]);
                assert_eq!(b, 3.0);
            }
            _ => unreachable!(),
        }
    }

    #[test]
    fn oracle_zero_residual_and_identity() {
        let target = vec![0.3, -0.2, 0.5];
        let o = QuadraticRiskOracle::new(DMatrix::identity(3, 3), vec![1.0; 3], target.clone(), 0.0).unwrap();
        let mut rng = keyed(1, 0, 0);
        let g = o.sample_gradient(&target, &mut rng);
        assert!(g.iter().all(|x| x.abs() < 1e-15));
        assert!(o.true_gradient(&target).iter().all(|x| *x == 0.0));
        let w = vec![1.3, -0.2, 0.5];
        let g = o.true_gradient(&w);
        assert_abs_diff_eq!(g[0], 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(g[1], 0.0, epsilon = 1e-15);
    }

    #[test]
    fn random_oracle_is_valid() {
        let mut rng = keyed(3, 9, 0);
        let o = QuadraticRiskOracle::random(vec![0.1; 6], 0.05, (1.0, 3.0), &mut rng).unwrap();
        let u = o.basis();
        assert!((u.transpose() * u - DMatrix::identity(6, 6)).abs().max() < 1e-10);
        assert!(o.spectrum().iter().all(|&l| (1.0..=3.0).contains(&l)));
        assert!(QuadraticRiskOracle::new(DMatrix::from_element(2, 2, 1.0), vec![1.0; 2], vec![0.0; 2], 0.0).is_err());
    }

    #[test]
    fn embedded_risk_pads_with_zero() {
        let mut rng = keyed(4, 0, 0);
        let inner: Arc<dyn RiskOracle> =
            Arc::new(QuadraticRiskOracle::random(vec![1.0, 2.0], 0.0, (1.0, 3.0), &mut rng).unwrap());
        let e = EmbeddedRisk::new(Arc::clone(&inner), vec![0, 2], 3);
        let w = [0.0, 9.0, 0.0];
        let g = e.true_gradient(&w);
        assert_eq!(g[1], 0.0);
        assert_eq!(g[0], inner.true_gradient(&[0.0, 0.0])[0]);
        let q = e.quadratic_form().unwrap();
        assert_eq!(q.hessian.row(1).iter().copied().sum::<f64>(), 0.0);
    }
}
