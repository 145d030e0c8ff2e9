//! A complete coupled problem: network, clusters, local risks and constraints.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::objective::{ConstraintForm, ConstraintKind, ConstraintSpec, EmbeddedRisk, ObjectiveError, RiskOracle};
use crate::topology::{build_clusters, embed_clusters, BlockLayout, ClusterMap, NetworkSpec};
use crate::Error;

#[derive(Debug, Clone)]
pub struct Problem {
    net: NetworkSpec,
    cmap: ClusterMap,
    risks: Vec<Arc<dyn RiskOracle>>,
    constraints: Vec<Vec<ConstraintSpec>>,
    rho: f64,
}

impl Problem {
    /// `risks[k]` must act on agent `k`'s local vector (dimension `Q_k`), as
    /// must every constraint owned by `k`. `rho` smooths inequality penalties.
    pub fn new(
        net: NetworkSpec,
        layout: &BlockLayout,
        risks: Vec<Arc<dyn RiskOracle>>,
        constraints: Vec<ConstraintSpec>,
        rho: f64,
    ) -> Result<Self, Error> {
        let cmap = build_clusters(&net, layout)?;
        if risks.len() != net.agent_count() {
            return Err(ObjectiveError::DimensionMismatch { expected: net.agent_count(), got: risks.len() }.into());
        }
        for (k, r) in risks.iter().enumerate() {
            if r.dim() != cmap.local_dim(k) {
                return Err(ObjectiveError::DimensionMismatch { expected: cmap.local_dim(k), got: r.dim() }.into());
            }
        }
        let mut problem = Self {
            net,
            cmap,
            risks,
            constraints: Vec::new(),
            rho,
        };
        problem.set_constraints(constraints)?;
        Ok(problem)
    }

    /// Replaces every constraint, e.g. when the constraint set drifts.
    pub fn set_constraints(&mut self, constraints: Vec<ConstraintSpec>) -> Result<(), Error> {
        let mut grouped = vec![Vec::new(); self.net.agent_count()];
        for c in constraints {
            let owner = c.owner;
            if owner >= grouped.len() {
                return Err(ObjectiveError::InvalidOracle(format!("constraint owner {owner} out of range")).into());
            }
            if c.dim() != self.cmap.local_dim(owner) {
                return Err(ObjectiveError::DimensionMismatch { expected: self.cmap.local_dim(owner), got: c.dim() }.into());
            }
            if c.kind == ConstraintKind::Equality && !matches!(c.form, ConstraintForm::Affine { .. }) {
                return Err(ObjectiveError::InvalidOracle("equality constraints must be affine".into()).into());
            }
            grouped[owner].push(c);
        }
        self.constraints = grouped;
        Ok(())
    }

    /// Embeds disconnected clusters into connected ones. Agents that pick up
    /// a block see it through a zero cost and an unchanged constraint set.
    pub fn embed_clusters(self) -> Result<Self, Error> {
        let (net, cmap) = embed_clusters(&self.net, &self.cmap)?;
        if net == self.net {
            return Ok(self);
        }
        let mut risks = Vec::with_capacity(self.risks.len());
        let mut constraints = Vec::new();
        for k in 0..net.agent_count() {
            // old slots are a subset of the new ones, in the same block order
            let positions: Vec<usize> = self
                .cmap
                .local_layout(k)
                .iter()
                .flat_map(|old| cmap.slot(k, old.block).expect("embedding only adds blocks").range())
                .collect();
            let dim = cmap.local_dim(k);
            if dim == self.cmap.local_dim(k) {
                risks.push(Arc::clone(&self.risks[k]));
                constraints.extend(self.constraints[k].iter().cloned());
            } else {
                risks.push(Arc::new(EmbeddedRisk::new(Arc::clone(&self.risks[k]), positions.clone(), dim)) as Arc<dyn RiskOracle>);
                constraints.extend(self.constraints[k].iter().map(|c| c.reindexed(&positions, dim)));
            }
        }
        Problem::new(net, cmap.layout(), risks, constraints, self.rho)
    }

    pub fn network(&self) -> &NetworkSpec {
        &self.net
    }

    pub fn clusters(&self) -> &ClusterMap {
        &self.cmap
    }

    pub fn layout(&self) -> &BlockLayout {
        self.cmap.layout()
    }

    pub fn agent_count(&self) -> usize {
        self.net.agent_count()
    }

    pub fn risk(&self, k: usize) -> &dyn RiskOracle {
        self.risks[k].as_ref()
    }

    pub fn constraints(&self, k: usize) -> &[ConstraintSpec] {
        &self.constraints[k]
    }

    pub fn all_constraints(&self) -> impl Iterator<Item = &ConstraintSpec> {
        self.constraints.iter().flatten()
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    /// Lifted quadratic data `(Σ_k P_kᵀ H_k P_k, Σ_k P_kᵀ f_k)` when every risk
    /// is quadratic.
    pub fn global_quadratic(&self) -> Option<(DMatrix<f64>, DVector<f64>)> {
        let m = self.layout().total_dim();
        let mut h = DMatrix::zeros(m, m);
        let mut f = DVector::zeros(m);
        for k in 0..self.agent_count() {
            let q = self.risks[k].quadratic_form()?;
            let idx = self.global_indices(k);
            for (i, &gi) in idx.iter().enumerate() {
                f[gi] += q.linear[i];
                for (j, &gj) in idx.iter().enumerate() {
                    h[(gi, gj)] += q.hessian[(i, j)];
                }
            }
        }
        Some((h, f))
    }

    /// Stacked affine equalities `G w = b` in global coordinates, or `None`
    /// when some constraint is not an affine equality.
    pub fn equality_system(&self) -> Option<(DMatrix<f64>, DVector<f64>)> {
        let m = self.layout().total_dim();
        let rows: Vec<_> = self.all_constraints().collect();
        let mut g = DMatrix::zeros(rows.len(), m);
        let mut b = DVector::zeros(rows.len());
        for (r, c) in rows.iter().enumerate() {
            match (&c.kind, &c.form) {
                (ConstraintKind::Equality, ConstraintForm::Affine { c: coef, b: rhs }) => {
                    for (i, &gi) in self.global_indices(c.owner).iter().enumerate() {
                        g[(r, gi)] += coef[i];
                    }
                    b[r] = *rhs;
                }
                _ => return None,
            }
        }
        Some((g, b))
    }

    /// Global coordinate of each entry of agent `k`'s local vector.
    pub fn global_indices(&self, k: usize) -> Vec<usize> {
        self.cmap
            .local_layout(k)
            .iter()
            .flat_map(|s| self.layout().range(s.block))
            .collect()
    }
}
