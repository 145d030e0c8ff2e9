use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde_json::json;

use super::{ResultTable, ScenarioConfig};
use crate::Error;

pub const CSV_HEADER: &str = "scenario,mu,eta,seed,iteration,msd_db,disagreement_max,dist_wo_db";

/// Writes `table` as CSV to `path` and the config plus library version to
/// `<path>.meta.json`. Floats use Rust's shortest round-trip formatting.
pub fn emit_results(table: &ResultTable, path: &Path, config: &ScenarioConfig) -> Result<(), Error> {
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "{CSV_HEADER}")?;
    for r in &table.rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.scenario, r.mu, r.eta, r.seed, r.iteration, r.msd_db, r.disagreement_max, r.dist_wo_db
        )?;
    }
    out.flush()?;

    let meta = json!({
        "library": env!("CARGO_PKG_NAME"),
        "version": env!("CARGO_PKG_VERSION"),
        "rows": table.rows.len(),
        "config": config,
    });
    let mut meta_path = path.as_os_str().to_owned();
    meta_path.push(".meta.json");
    std::fs::write(&meta_path, serde_json::to_string_pretty(&meta).expect("meta serializes") + "\n")?;
    Ok(())
}
