//! Run files: `<name>.csv` with a `time_min,<vars>` header and a `<name>.json`
//! sidecar manifest.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{CstrParams, SimRun};
use crate::error::{Error, Result};

pub const RUN_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub mode_id: String,
    pub fault_id: String,
    pub onset_index: usize,
    pub seed: u64,
    pub params: Option<CstrParams>,
    pub schema_version: u32,
}

fn sidecar_path(csv: &Path) -> PathBuf {
    csv.with_extension("json")
}

/// Writes `run` to `path` (CSV, 17 significant digits) and its manifest next to it.
pub fn export_run(run: &SimRun, path: &Path) -> Result<()> {
    let mut text = String::with_capacity(run.measurements.len() * 24 + 64);
    text.push_str("time_min");
    for v in &run.variables {
        text.push(',');
        text.push_str(v);
    }
    text.push('\n');
    for i in 0..run.n_samples() {
        let _ = write!(text, "{:.16e}", i as f64 * run.sample_interval_min);
        for x in run.row(i) {
            let _ = write!(text, ",{x:.16e}");
        }
        text.push('\n');
    }
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))?;

    let manifest = RunManifest {
        mode_id: run.mode_id.clone(),
        fault_id: run.fault_id.clone(),
        onset_index: run.onset_index,
        seed: run.seed,
        params: run.params_snapshot.clone(),
        schema_version: RUN_SCHEMA_VERSION,
    };
    let side = sidecar_path(path);
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| Error::json(&side, e))?;
    fs::write(&side, json + "\n").map_err(|e| Error::io(&side, e))
}

/// Parsed run CSV: variable names, sample times and row-major values.
#[derive(Debug, Clone, PartialEq)]
pub struct RunTable {
    pub variables: Vec<String>,
    pub times: Vec<f64>,
    pub values: Vec<f64>,
}

/// Parses a run CSV, reporting the 1-based line of any malformed row.
pub fn read_run_csv(path: &Path) -> Result<RunTable> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let parse_err = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| parse_err(1, "empty file, expected a header row".into()))?;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    if cols.len() < 2 || cols[0] != "time_min" {
        return Err(parse_err(1, format!("header must be `time_min,<vars>`, got `{header}`")));
    }
    let variables: Vec<String> = cols[1..].iter().map(|s| s.to_string()).collect();
    let mut times = Vec::new();
    let mut values = Vec::new();
    for (i, line) in lines {
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != cols.len() {
            return Err(parse_err(
                lineno,
                format!("expected {} columns, found {}", cols.len(), cells.len()),
            ));
        }
        for (j, cell) in cells.iter().enumerate() {
            let v: f64 = cell.trim().parse().map_err(|_| {
                parse_err(lineno, format!("non-numeric value `{}` in column `{}`", cell.trim(), cols[j]))
            })?;
            if !v.is_finite() {
                return Err(parse_err(lineno, format!("non-finite value in column `{}`", cols[j])));
            }
            if j == 0 {
                times.push(v);
            } else {
                values.push(v);
            }
        }
    }
    Ok(RunTable {
        variables,
        times,
        values,
    })
}

/// Reads a run written by [`export_run`].
pub fn import_run(path: &Path) -> Result<SimRun> {
    let table = read_run_csv(path)?;
    let side = sidecar_path(path);
    let text = fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
    let manifest: RunManifest = serde_json::from_str(&text).map_err(|e| Error::json(&side, e))?;
    let sample_interval_min = match table.times.as_slice() {
        [t0, t1, ..] => t1 - t0,
        _ => manifest
            .params
            .as_ref()
            .map_or(1.0, |p| p.sample_interval_min),
    };
    Ok(SimRun {
        mode_id: manifest.mode_id,
        fault_id: manifest.fault_id,
        variables: table.variables,
        sample_interval_min,
        measurements: table.values,
        onset_index: manifest.onset_index,
        seed: manifest.seed,
        params_snapshot: manifest.params,
    })
}
