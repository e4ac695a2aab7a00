//! Self-describing JSON reports and CSV tables.

use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{json, Value};
use sssa_core::{Error, Result};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

/// Writes `<dir>/<command>.json` holding the resolved config, seed, version,
/// constants and results.
pub fn write_report(
    dir: &Path,
    command: &str,
    seed: u64,
    config: &impl Serialize,
    constants: Value,
    results: Value,
) -> Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let doc = json!({
        "command": command,
        "version": VERSION,
        "seed": seed,
        "config": serde_json::to_value(config)?,
        "constants": constants,
        "results": results,
    });
    let path = dir.join(format!("{command}.json"));
    std::fs::write(&path, serde_json::to_string_pretty(&doc)?)?;
    Ok(path)
}

pub fn write_csv<R: Serialize>(dir: &Path, name: &str, rows: &[R]) -> Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let path = dir.join(name);
    let mut w = csv::Writer::from_path(&path).map_err(csv_err)?;
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(path)
}
