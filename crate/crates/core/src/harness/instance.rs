//! Network loading and random least-squares problem instances.

use std::path::Path;
use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::Deserialize;

use super::config::{ConstraintMode, NetworkSource, ScenarioConfig};
use crate::objective::{ConstraintSpec, QuadraticRiskOracle, RiskOracle};
use crate::rng::{keyed, streams, StreamRng};
use crate::topology::{build_clusters, BlockLayout, ClusterMap, NetworkSpec};
use crate::{Error, Problem};

/// The bundled 20-agent network.
pub const BENCHMARK_NETWORK: &str = include_str!("../../data/benchmark_network.toml");

/// On-disk network description. Ids are 1-based.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkFile {
    pub agents: usize,
    pub block_dims: Vec<usize>,
    #[serde(default)]
    pub constraint_owners: Option<Vec<usize>>,
    pub edges: Vec<[usize; 2]>,
    pub interests: Vec<Vec<usize>>,
}

impl NetworkFile {
    pub fn parse(text: &str) -> Result<Self, Error> {
        toml::from_str(text).map_err(|e| Error::Config(format!("network file: {}", e.message())))
    }

    pub fn load(path: &Path) -> Result<Self, Error> {
        Self::parse(&std::fs::read_to_string(path)?)
    }
}

/// Graph, block layout and the agent holding the constraint on each block
/// (all 0-based).
#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    pub net: NetworkSpec,
    pub layout: BlockLayout,
    pub owners: Option<Vec<usize>>,
}

impl Topology {
    pub fn from_file(file: &NetworkFile) -> Result<Self, Error> {
        let edges = file.edges.iter().map(|&[a, b]| (a, b));
        let net = NetworkSpec::from_one_based(file.agents, edges, file.interests.clone())?;
        let layout = BlockLayout::new(file.block_dims.clone())?;
        let owners = file.constraint_owners.as_deref().map(one_based).transpose()?;
        Ok(Self { net, layout, owners })
    }

    pub fn benchmark() -> Self {
        Self::from_file(&NetworkFile::parse(BENCHMARK_NETWORK).expect("bundled network parses"))
            .expect("bundled network is valid")
    }

    /// The 5-agent, 4-block illustration network with 2-dimensional blocks.
    pub fn example() -> Self {
        let net = NetworkSpec::from_one_based(
            5,
            [(1, 2), (1, 3), (2, 3), (3, 4), (4, 5)],
            vec![vec![1, 2], vec![1], vec![1, 3], vec![1, 3, 4], vec![1, 4]],
        )
        .expect("example network is valid");
        Self { net, layout: BlockLayout::uniform(4, 2).expect("non-empty layout"), owners: None }
    }

    /// Resolves the `[network]`, `[blocks]` and `penalty.owners` settings.
    pub fn from_config(cfg: &ScenarioConfig) -> Result<Self, Error> {
        let n = &cfg.network;
        let mut topo = match n.source {
            NetworkSource::BuiltinBenchmark => Self::benchmark(),
            NetworkSource::BuiltinExample => Self::example(),
            NetworkSource::File => {
                let path = n.path.as_ref().ok_or_else(|| Error::Config("network.path missing".into()))?;
                Self::from_file(&NetworkFile::load(path).map_err(|e| e.context(format!("loading {}", path.display())))?)?
            }
            NetworkSource::Inline => {
                let missing = || Error::Config("inline network incomplete".into());
                let agents = n.agents.ok_or_else(missing)?;
                let edges: Vec<(usize, usize)> = n.edges.as_ref().ok_or_else(missing)?.iter().map(|&[a, b]| (a, b)).collect();
                let interests = n.interests.clone().ok_or_else(missing)?;
                let dims = cfg.blocks.as_ref().ok_or_else(missing)?.dims.clone();
                let net = if n.one_based {
                    NetworkSpec::from_one_based(agents, edges, interests)?
                } else {
                    NetworkSpec::new(agents, edges, interests)?
                };
                Self { net, layout: BlockLayout::new(dims)?, owners: None }
            }
        };
        if let Some(blocks) = &cfg.blocks {
            if n.source != NetworkSource::Inline {
                topo.layout = BlockLayout::new(blocks.dims.clone())?;
            }
        }
        if let Some(owners) = &cfg.penalty.owners {
            topo.owners = Some(if n.one_based { one_based(owners)? } else { owners.clone() });
        }
        Ok(topo)
    }

    /// Declared owners, or the lowest-id member of each cluster.
    pub fn resolve_owners(&self, cmap: &ClusterMap) -> Result<Vec<usize>, Error> {
        let owners = match &self.owners {
            Some(o) => o.clone(),
            None => (0..cmap.block_count()).map(|l| cmap.cluster(l)[0]).collect(),
        };
        if owners.len() != cmap.block_count() {
            return Err(Error::Config(format!(
                "{} constraint owners given for {} blocks",
                owners.len(),
                cmap.block_count()
            )));
        }
        for (l, &k) in owners.iter().enumerate() {
            if cmap.slot(k, l).is_none() {
                return Err(Error::Config(format!("agent {k} owns the constraint on block {l} but is not in its cluster")));
            }
        }
        Ok(owners)
    }
}

fn one_based(ids: &[usize]) -> Result<Vec<usize>, Error> {
    ids.iter()
        .map(|&x| x.checked_sub(1).ok_or_else(|| Error::Config("ids are 1-based; got 0".into())))
        .collect()
}

/// Randomization ranges for [`generate_instance`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InstanceParams {
    pub noise_db: (f64, f64),
    pub eigen_range: (f64, f64),
    pub constraints: ConstraintMode,
    pub rho: f64,
}

impl Default for InstanceParams {
    fn default() -> Self {
        Self {
            noise_db: (-30.0, -20.0),
            eigen_range: (1.0, 3.0),
            constraints: ConstraintMode::None,
            rho: 1.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Instance {
    pub problem: Problem,
    /// The model `w•` generating the data.
    pub w_true: Vec<f64>,
    /// Constraint owner per block (0-based), when constrained.
    pub owners: Vec<usize>,
    pub seed: u64,
}

impl Instance {
    /// Redraws every constraint vector and offset from the `epoch`-th
    /// constraint stream.
    pub fn regenerate_constraints(&mut self, epoch: u64) -> Result<(), Error> {
        let cons = random_constraints(self.problem.clusters(), &self.owners, self.seed, epoch);
        self.problem.set_constraints(cons)
    }
}

/// Least-squares instance on `topo`: a unit-norm Gaussian model `w•`, and at
/// every agent a streaming regression oracle with covariance `UΛUᵀ`
/// (`Λ ~ U(eigen_range)`) and noise power `U(noise_db)` dB.
pub fn generate_instance(topo: &Topology, seed: u64, params: &InstanceParams) -> Result<Instance, Error> {
    let cmap = build_clusters(&topo.net, &topo.layout)?;
    let m = topo.layout.total_dim();
    let mut rng = keyed(seed, streams::PROBLEM, 0);
    let mut w_true: Vec<f64> = (0..m).map(|_| rng.sample(StandardNormal)).collect();
    let norm = w_true.iter().map(|x| x * x).sum::<f64>().sqrt();
    w_true.iter_mut().for_each(|x| *x /= norm);

    let mut risks: Vec<Arc<dyn RiskOracle>> = Vec::with_capacity(topo.net.agent_count());
    for k in 0..topo.net.agent_count() {
        let mut rng = keyed(seed, streams::PROBLEM, 1 + k as u64);
        let db = uniform(&mut rng, params.noise_db);
        let noise_std = 10f64.powf(db / 10.0).sqrt();
        let oracle = QuadraticRiskOracle::random(cmap.restrict(k, &w_true), noise_std, params.eigen_range, &mut rng)?;
        risks.push(Arc::new(oracle));
    }
    let (owners, constraints) = match params.constraints {
        ConstraintMode::None => (Vec::new(), Vec::new()),
        ConstraintMode::RandomAffine => {
            let owners = topo.resolve_owners(&cmap)?;
            let cons = random_constraints(&cmap, &owners, seed, 0);
            (owners, cons)
        }
    };
    let problem = Problem::new(topo.net.clone(), &topo.layout, risks, constraints, params.rho)?;
    Ok(Instance { problem, w_true, owners, seed })
}

/// One equality `g_ℓᵀ w_{k_c}^ℓ = b_ℓ` per block, `g_ℓ` a unit-norm Gaussian
/// vector and `b_ℓ ~ U(−1, 1)`.
pub fn random_constraints(cmap: &ClusterMap, owners: &[usize], seed: u64, epoch: u64) -> Vec<ConstraintSpec> {
    let mut rng = keyed(seed, streams::CONSTRAINTS, epoch);
    owners
        .iter()
        .enumerate()
        .map(|(l, &k)| {
            let slot = cmap.slot(k, l).expect("owner belongs to the cluster");
            let mut g: Vec<f64> = (0..slot.dim).map(|_| rng.sample(StandardNormal)).collect();
            let norm = g.iter().map(|x| x * x).sum::<f64>().sqrt();
            g.iter_mut().for_each(|x| *x /= norm);
            let b = rng.random_range(-1.0..1.0);
            let mut c = vec![0.0; cmap.local_dim(k)];
            c[slot.range()].copy_from_slice(&g);
            ConstraintSpec::affine_equality(k, c, b)
        })
        .collect()
}

fn uniform(rng: &mut StreamRng, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..hi)
    }
}

/// The 20-agent least-squares instance on the bundled network; constrained
/// instances carry one equality per block, held by agents 2, 10, 16, 5, 17.
pub fn generate_sect7_problem(seed: u64, constrained: bool) -> Result<Instance, Error> {
    let params = InstanceParams {
        constraints: if constrained { ConstraintMode::RandomAffine } else { ConstraintMode::None },
        ..InstanceParams::default()
    };
    generate_instance(&Topology::benchmark(), seed, &params)
}
