//! Experiment orchestration: config → problem instance → runs → result table.

pub mod config;
pub mod instance;
mod output;

use rayon::prelude::*;

pub use config::{ConstraintMode, Init, NetworkSource, ScenarioConfig, ScenarioId};
pub use instance::{
    generate_instance, generate_sect7_problem, random_constraints, Instance, InstanceParams, NetworkFile, Topology,
};
pub use output::{emit_results, CSV_HEADER};

use crate::engine::{Algorithm, EngineConfig, Simulation};
use crate::metrics::{disagreement, msd, steady_state, to_db, ReferenceSolution};
use crate::weights::CombinationSet;
use crate::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum SeedTag {
    Seed(u64),
    Mean,
}

impl std::fmt::Display for SeedTag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Seed(s) => write!(f, "{s}"),
            Self::Mean => f.write_str("mean"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum IterTag {
    At(u64),
    /// Mean over the final 10% of the run.
    Steady,
}

impl std::fmt::Display for IterTag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::At(i) => write!(f, "{i}"),
            Self::Steady => f.write_str("steady"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    /// `<scenario id>/<algorithm>`
    pub scenario: String,
    pub mu: f64,
    pub eta: f64,
    pub seed: SeedTag,
    pub iteration: IterTag,
    /// MSD against the penalized optimum `w⋆`, in dB.
    pub msd_db: f64,
    pub disagreement_max: f64,
    /// MSD against the constrained optimum `w°`, in dB.
    pub dist_wo_db: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ResultTable {
    pub rows: Vec<ResultRow>,
}

impl ResultTable {
    pub fn filter<'a>(&'a self, pred: impl Fn(&ResultRow) -> bool + 'a) -> impl Iterator<Item = &'a ResultRow> + 'a {
        self.rows.iter().filter(move |r| pred(r))
    }

    /// The steady-state mean row of one `(scenario, μ, η)` group.
    pub fn steady_mean(&self, scenario: &str, mu: f64, eta: f64) -> Option<&ResultRow> {
        self.rows.iter().find(|r| {
            r.scenario == scenario && r.mu == mu && r.eta == eta && r.seed == SeedTag::Mean && r.iteration == IterTag::Steady
        })
    }
}

/// Per-iteration linear-scale metrics of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunTrace {
    pub iterations: Vec<u64>,
    pub msd: Vec<f64>,
    pub msd_wo: Vec<f64>,
    pub disagreement_max: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Job {
    algorithm: Algorithm,
    mu: f64,
    eta: f64,
    seed: u64,
}

/// Builds the problem instance a config describes for run seed `seed`
/// (before any change point).
pub fn build_instance(cfg: &ScenarioConfig, seed: u64) -> Result<Instance, Error> {
    let topo = Topology::from_config(cfg)?;
    let params = InstanceParams {
        noise_db: (cfg.objective.noise_db[0], cfg.objective.noise_db[1]),
        eigen_range: (cfg.objective.eigen_range[0], cfg.objective.eigen_range[1]),
        constraints: cfg.penalty.constraints,
        rho: cfg.penalty.rho,
    };
    let mut inst = generate_instance(&topo, cfg.objective.instance_seed.unwrap_or(seed), &params)?;
    if cfg.network.embed {
        inst.problem = inst.problem.embed_clusters()?;
    }
    Ok(inst)
}

/// Runs one `(algorithm, μ, η, seed)` configuration for `T` iterations,
/// recording metrics after every step. For tracking configs the
/// constraints are redrawn right before step `change_point + 1`.
pub fn run_single(cfg: &ScenarioConfig, algorithm: Algorithm, mu: f64, eta: f64, seed: u64) -> Result<RunTrace, Error> {
    let mut inst = build_instance(cfg, seed)?;
    let engine = EngineConfig { mu, eta, iterations: cfg.engine.iterations, noise: cfg.engine.noise, seed };
    engine.validate()?;
    let weights = CombinationSet::build(inst.problem.clusters(), inst.problem.network(), cfg.engine.weights)?;
    let mut reference = ReferenceSolution::compute(&inst.problem, eta)?;
    let init = match cfg.engine.init {
        config::Init::Zeros => None,
        config::Init::Reference => Some(reference.w_star.as_slice()),
    };
    let mut sim = Simulation::with_step_scale(&inst.problem, algorithm, &weights, init, cfg.engine.step_scale);
    let change = match cfg.scenario.id {
        ScenarioId::Tracking => cfg.scenario.change_point,
        _ => None,
    };
    let t = cfg.engine.iterations;
    let every = cfg.scenario.log_every;
    let mut trace = RunTrace { iterations: Vec::new(), msd: Vec::new(), msd_wo: Vec::new(), disagreement_max: Vec::new() };
    for i in 0..t {
        if change == Some(i) {
            inst.regenerate_constraints(1)?;
            reference = ReferenceSolution::compute(&inst.problem, eta)?;
        }
        sim.step(&inst.problem, &engine)?;
        let done = i + 1;
        if done % every == 0 || done == t {
            let copies = sim.local_copies(&inst.problem);
            let cmap = inst.problem.clusters();
            trace.iterations.push(done as u64);
            trace.msd.push(msd(&copies, cmap, &reference.w_star));
            trace.msd_wo.push(msd(&copies, cmap, &reference.w_o));
            trace.disagreement_max.push(disagreement(&copies, cmap).into_iter().fold(0.0, f64::max));
        }
    }
    Ok(trace)
}

/// Runs every `(algorithm, μ, η, seed)` combination of `cfg` and returns
/// per-seed rows followed by seed-mean rows for each group. Sweep configs
/// also get `steady` rows.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<ResultTable, Error> {
    cfg.validate()?;
    let mut jobs = Vec::new();
    for algorithm in cfg.engine.algorithms() {
        for &mu in &cfg.engine.mu {
            for &eta in &cfg.penalty.eta {
                for &seed in &cfg.scenario.seeds {
                    jobs.push(Job { algorithm, mu, eta, seed });
                }
            }
        }
    }
    let traces: Vec<RunTrace> = jobs
        .par_iter()
        .map(|j| {
            run_single(cfg, j.algorithm, j.mu, j.eta, j.seed).map_err(|e| {
                e.context(format!(
                    "scenario {} ({}, mu={}, eta={}, seed={})",
                    cfg.scenario.id.as_str(),
                    j.algorithm.label(),
                    j.mu,
                    j.eta,
                    j.seed
                ))
            })
        })
        .collect::<Result<_, _>>()?;

    let steady = cfg.scenario.id == ScenarioId::Sweep;
    let mut table = ResultTable::default();
    let per_group = cfg.scenario.seeds.len();
    for (group_jobs, group) in jobs.chunks(per_group).zip(traces.chunks(per_group)) {
        let job = group_jobs[0];
        let label = format!("{}/{}", cfg.scenario.id.as_str(), job.algorithm.label());
        let row = |seed, iteration, msd: f64, dis, wo: f64| ResultRow {
            scenario: label.clone(),
            mu: job.mu,
            eta: job.eta,
            seed,
            iteration,
            msd_db: to_db(msd),
            disagreement_max: dis,
            dist_wo_db: to_db(wo),
        };
        for (j, tr) in group_jobs.iter().zip(group) {
            for n in 0..tr.iterations.len() {
                let at = IterTag::At(tr.iterations[n]);
                table.rows.push(row(SeedTag::Seed(j.seed), at, tr.msd[n], tr.disagreement_max[n], tr.msd_wo[n]));
            }
            if steady {
                let s = row(
                    SeedTag::Seed(j.seed),
                    IterTag::Steady,
                    steady_state(&tr.msd),
                    steady_state(&tr.disagreement_max),
                    steady_state(&tr.msd_wo),
                );
                table.rows.push(s);
            }
        }
        let mean = mean_trace(group);
        for n in 0..mean.iterations.len() {
            let at = IterTag::At(mean.iterations[n]);
            table.rows.push(row(SeedTag::Mean, at, mean.msd[n], mean.disagreement_max[n], mean.msd_wo[n]));
        }
        if steady {
            let s = row(
                SeedTag::Mean,
                IterTag::Steady,
                steady_state(&mean.msd),
                steady_state(&mean.disagreement_max),
                steady_state(&mean.msd_wo),
            );
            table.rows.push(s);
        }
    }
    Ok(table)
}

/// Pointwise mean across runs, on the linear scale.
pub fn mean_trace(traces: &[RunTrace]) -> RunTrace {
    let n = traces.len() as f64;
    let avg = |f: fn(&RunTrace) -> &Vec<f64>| -> Vec<f64> {
        let len = f(&traces[0]).len();
        (0..len).map(|i| traces.iter().map(|t| f(t)[i]).sum::<f64>() / n).collect()
    };
    RunTrace {
        iterations: traces[0].iterations.clone(),
        msd: avg(|t| &t.msd),
        msd_wo: avg(|t| &t.msd_wo),
        disagreement_max: avg(|t| &t.disagreement_max),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(id: &str, extra: &str, scenario_extra: &str) -> ScenarioConfig {
        let text = format!(
            r#"
            [network]
            source = "builtin-example"
            {extra}
            [engine]
            mu = [0.01]
            iterations = 20
            [scenario]
            id = "{id}"
            seeds = [1, 2]
            {scenario_extra}
            "#
        );
        ScenarioConfig::from_toml(&text).unwrap()
    }

    #[test]
    fn rows_per_run_and_mean() {
        let cfg = small("unconstrained", "", "");
        let table = run_scenario(&cfg).unwrap();
        assert_eq!(table.rows.len(), 3 * 20);
        let mean: Vec<_> = table.filter(|r| r.seed == SeedTag::Mean).collect();
        assert_eq!(mean.len(), 20);
        let r1 = &table.rows[19];
        let r2 = &table.rows[39];
        let m = ((10f64.powf(r1.msd_db / 10.0) + 10f64.powf(r2.msd_db / 10.0)) / 2.0).log10() * 10.0;
        assert!((mean[19].msd_db - m).abs() < 1e-9);
        assert_eq!(r1.scenario, "unconstrained/coupled");
    }

    #[test]
    fn sweep_adds_steady_rows() {
        let mut cfg = small("sweep", "[penalty]\neta = [1.0, 10.0]\nconstraints = \"random-affine\"", "");
        cfg.engine.mu = vec![0.005, 0.002];
        let table = run_scenario(&cfg).unwrap();
        let steady = table.filter(|r| r.iteration == IterTag::Steady).count();
        assert_eq!(steady, 2 * 2 * 3);
        assert!(table.steady_mean("sweep/coupled", 0.002, 10.0).is_some());
    }

    #[test]
    fn tracking_jumps_at_change_point() {
        let mut cfg = small("tracking", "[penalty]\neta = [10.0]\nconstraints = \"random-affine\"", "change_point = 10");
        cfg.objective.instance_seed = Some(4);
        cfg.engine.iterations = 2000;
        cfg.engine.mu = vec![0.005];
        cfg.scenario.change_point = Some(1000);
        let table = run_scenario(&cfg).unwrap();
        let mean: Vec<_> = table.filter(|r| r.seed == SeedTag::Mean).collect();
        assert!(mean[1000].msd_db > mean[998].msd_db + 3.0);
    }
}
