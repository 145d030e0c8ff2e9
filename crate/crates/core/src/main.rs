use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use coupled_diffusion::harness::{emit_results, run_scenario, ScenarioConfig, ScenarioId};
use coupled_diffusion::Error;

#[derive(Debug, Parser)]
#[command(version, about = "Coupled diffusion experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run a scenario and write `<out>/<scenario>.csv` plus a metadata sidecar.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = ".")]
        out: PathBuf,
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        #[arg(long)]
        scenario: Option<String>,
        #[arg(long, value_delimiter = ',')]
        mu: Option<Vec<f64>>,
        #[arg(long, value_delimiter = ',')]
        eta: Option<Vec<f64>>,
        #[arg(long)]
        iters: Option<usize>,
    },
}

fn run(cli: Cli) -> Result<PathBuf, Error> {
    let Command::Run { config, out, seeds, scenario, mu, eta, iters } = cli.command;
    let mut cfg = ScenarioConfig::load(&config)?;
    if let Some(s) = seeds {
        cfg.scenario.seeds = s;
    }
    if let Some(id) = scenario {
        cfg.scenario.id = id.parse::<ScenarioId>()?;
    }
    if let Some(m) = mu {
        cfg.engine.mu = m;
    }
    if let Some(e) = eta {
        cfg.penalty.eta = e;
    }
    if let Some(t) = iters {
        cfg.engine.iterations = t;
    }
    cfg.validate()?;
    let table = run_scenario(&cfg)?;
    std::fs::create_dir_all(&out)?;
    let path = out.join(format!("{}.csv", cfg.scenario.id.as_str()));
    emit_results(&table, &path, &cfg)?;
    Ok(path)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(path) => {
            println!("{}", path.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            let line = serde_json::json!({ "error": e.kind(), "message": e.to_string() });
            eprintln!("{line}");
            ExitCode::FAILURE
        }
    }
}
