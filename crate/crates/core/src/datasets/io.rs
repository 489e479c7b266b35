//! `windows.csv`: one row per window, `domain_id,label,source` followed by
//! the `n_vars · 64` feature values variable-major. Values use the shortest
//! decimal form that parses back to the same `f64`.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{DatasetManifest, Source, WindowSample, WINDOW};
use crate::error::{Error, Result};
use crate::jsonio;

pub fn write_windows(path: &Path, samples: &[WindowSample]) -> Result<()> {
    let n_vars = samples.first().map_or(0, |s| s.n_vars);
    let mut text = String::from("domain_id,label,source");
    for j in 0..n_vars {
        for t in 0..WINDOW {
            let _ = write!(text, ",v{j}t{t}");
        }
    }
    text.push('\n');
    for s in samples {
        if s.n_vars != n_vars {
            return Err(Error::Dataset(format!(
                "cannot write windows with {} and {} variables to one file",
                n_vars, s.n_vars
            )));
        }
        text.push_str(&s.domain);
        text.push(',');
        text.push_str(&s.label);
        text.push(',');
        text.push_str(s.source.as_str());
        for x in &s.features {
            let _ = write!(text, ",{x}");
        }
        text.push('\n');
    }
    jsonio::write_text(path, &text)
}

pub fn read_windows(path: &Path) -> Result<Vec<WindowSample>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let err = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| err(1, "empty file".into()))?;
    let cols = header.split(',').count();
    if !header.starts_with("domain_id,label,source") || (cols - 3) % WINDOW != 0 {
        return Err(err(1, "header must be `domain_id,label,source` then n·64 feature columns".into()));
    }
    let n_vars = (cols - 3) / WINDOW;
    let mut out = Vec::new();
    for (i, line) in lines.enumerate() {
        let lineno = i + 2;
        if line.is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != cols {
            return Err(err(lineno, format!("expected {cols} columns, found {}", cells.len())));
        }
        let source = Source::parse(cells[2])
            .ok_or_else(|| err(lineno, format!("unknown source `{}`", cells[2])))?;
        let features = cells[3..]
            .iter()
            .map(|c| {
                c.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| err(lineno, format!("invalid value `{c}`")))
            })
            .collect::<Result<Vec<f64>>>()?;
        out.push(WindowSample {
            features,
            n_vars,
            label: cells[1].to_string(),
            domain: cells[0].to_string(),
            source,
        });
    }
    Ok(out)
}

pub fn write_manifest(path: &Path, manifest: &DatasetManifest) -> Result<()> {
    jsonio::write_json(path, manifest)
}

pub fn read_manifest(path: &Path) -> Result<DatasetManifest> {
    jsonio::read_json(path)
}
