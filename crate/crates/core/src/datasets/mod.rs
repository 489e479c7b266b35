//! Sliding-window samples and heterogeneous-domain task assembly.

mod io;
mod task;

pub use io::{read_manifest, read_windows, write_manifest, write_windows};
pub use task::{Split, TaskConfig, CSTR_TASKS};

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::cstr::{self, CstrParams, FaultId, FaultSpec, ModeId, ModeSpec, SimRun};
use crate::error::{Error, Result};

/// Samples per window.
pub const WINDOW: usize = 64;
pub const DATASET_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Real,
    Dasg,
    Iss,
}

impl Source {
    pub fn as_str(self) -> &'static str {
        match self {
            Source::Real => "real",
            Source::Dasg => "dasg",
            Source::Iss => "iss",
        }
    }

    pub fn parse(s: &str) -> Option<Source> {
        [Source::Real, Source::Dasg, Source::Iss].into_iter().find(|x| x.as_str() == s)
    }
}

/// One `n_vars × 64` window, variable-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowSample {
    pub features: Vec<f64>,
    pub n_vars: usize,
    pub label: String,
    pub domain: String,
    pub source: Source,
}

impl WindowSample {
    pub fn var(&self, j: usize) -> &[f64] {
        &self.features[j * WINDOW..(j + 1) * WINDOW]
    }
}

/// Cuts `run` into windows starting at `0, stride, 2·stride, …`.
///
/// Windows entirely before onset are healthy, windows entirely at or after
/// onset carry the run's label, and windows straddling onset are dropped.
pub fn window_run(run: &SimRun, stride: usize, healthy: &str) -> Result<Vec<WindowSample>> {
    if stride == 0 {
        return Err(Error::Config("window stride must be ≥ 1".into()));
    }
    let n = run.n_samples();
    if n < WINDOW {
        return Err(Error::Dataset(format!(
            "run {}/{} has {n} samples, fewer than the window length {WINDOW}",
            run.mode_id, run.fault_id
        )));
    }
    let v = run.n_vars();
    let mut out = Vec::with_capacity((n - WINDOW) / stride + 1);
    for start in (0..=n - WINDOW).step_by(stride) {
        let label = if run.fault_id == healthy || start + WINDOW <= run.onset_index {
            healthy
        } else if start >= run.onset_index {
            run.fault_id.as_str()
        } else {
            continue;
        };
        let mut features = vec![0.0; v * WINDOW];
        for t in 0..WINDOW {
            for (j, x) in run.row(start + t).iter().enumerate() {
                features[j * WINDOW + t] = *x;
            }
        }
        out.push(WindowSample {
            features,
            n_vars: v,
            label: label.to_string(),
            domain: run.mode_id.clone(),
            source: Source::Real,
        });
    }
    Ok(out)
}

/// Window counts per (domain, category).
pub fn class_balance_report(set: &[WindowSample]) -> BTreeMap<(String, String), usize> {
    let mut out = BTreeMap::new();
    for w in set {
        *out.entry((w.domain.clone(), w.label.clone())).or_insert(0) += 1;
    }
    out
}

/// A run together with the split it was produced for.
#[derive(Debug, Clone, PartialEq)]
pub struct RegisteredRun {
    pub split: Split,
    pub run: SimRun,
    pub file: Option<PathBuf>,
}

/// All runs available to task assembly.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunRegistry {
    runs: Vec<RegisteredRun>,
}

impl RunRegistry {
    pub fn new() -> Self {
        RunRegistry::default()
    }

    /// Adds a run; all runs must monitor the same variables.
    pub fn add(&mut self, split: Split, run: SimRun, file: Option<PathBuf>) -> Result<()> {
        if let Some(first) = self.runs.first() {
            if first.run.variables != run.variables {
                return Err(Error::Dataset(format!(
                    "run {}/{} monitors {:?} but the registry holds {:?}",
                    run.mode_id, run.fault_id, run.variables, first.run.variables
                )));
            }
        }
        self.runs.push(RegisteredRun { split, run, file });
        Ok(())
    }

    pub fn runs(&self) -> &[RegisteredRun] {
        &self.runs
    }

    pub fn variables(&self) -> Vec<String> {
        self.runs.first().map(|r| r.run.variables.clone()).unwrap_or_default()
    }

    fn matching<'a>(&'a self, split: Split, domain: &'a str, label: &'a str) -> impl Iterator<Item = &'a RegisteredRun> + 'a {
        self.runs
            .iter()
            .filter(move |r| r.split == split && r.run.mode_id == domain && r.run.fault_id == label)
    }
}

/// Deterministic, well-mixed seed for one simulated run.
pub fn run_seed(global: u64, mode: usize, fault: usize, split: Split, replicate: usize) -> u64 {
    let mut z = global;
    for part in [mode as u64, fault as u64, split as u64, replicate as u64] {
        z = splitmix64(z ^ splitmix64(part.wrapping_add(0x51_7c_c1_b7_27_22_0a_95)));
    }
    z
}

pub(crate) fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Simulates every run a task needs: `train_runs` replicates per training
/// (domain, category) pair and `test_runs` per test pair, with disjoint seeds.
pub fn simulate_task_runs(
    params: &CstrParams,
    task: &TaskConfig,
    train_runs: usize,
    test_runs: usize,
    seed: u64,
) -> Result<RunRegistry> {
    let mut registry = RunRegistry::new();
    for (split, domain, label) in task.required_pairs() {
        let mode: ModeId = domain.parse()?;
        let fault: FaultId = label.parse()?;
        let reps = if split == Split::Train { train_runs } else { test_runs };
        for r in 0..reps {
            let s = run_seed(seed, mode.index(), fault.index(), split, r);
            let run = cstr::simulate(params, &ModeSpec::new(params, mode), &FaultSpec::table(fault), s)?;
            registry.add(split, run, None)?;
        }
    }
    Ok(registry)
}

/// Registers an externally produced run CSV (`time_min,<vars>` header) as a
/// run of `domain_id` with label `label`.
pub fn import_external_csv(path: &Path, domain_id: &str, label: &str, onset_index: usize) -> Result<SimRun> {
    let table = cstr::read_run_csv(path)?;
    let sample_interval_min = match table.times.as_slice() {
        [t0, t1, ..] => t1 - t0,
        _ => 1.0,
    };
    Ok(SimRun {
        mode_id: domain_id.to_string(),
        fault_id: label.to_string(),
        variables: table.variables,
        sample_interval_min,
        measurements: table.values,
        onset_index,
        seed: 0,
        params_snapshot: None,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRun {
    pub split: Split,
    pub domain: String,
    pub category: String,
    pub seed: u64,
    pub file: Option<String>,
    /// Windows this run contributed to its split.
    pub windows: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassCount {
    pub domain: String,
    pub category: String,
    pub source: Source,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub task_id: String,
    pub variables: Vec<String>,
    pub stride: usize,
    pub split_seed: u64,
    pub schema_version: u32,
    pub runs: Vec<ManifestRun>,
    pub train_counts: Vec<ClassCount>,
    pub test_counts: Vec<ClassCount>,
}

/// Per-(domain, category, source) counts in a stable order.
pub fn class_counts(set: &[WindowSample]) -> Vec<ClassCount> {
    let mut m: BTreeMap<(String, String, Source), usize> = BTreeMap::new();
    for w in set {
        *m.entry((w.domain.clone(), w.label.clone(), w.source)).or_insert(0) += 1;
    }
    m.into_iter()
        .map(|((domain, category, source), count)| ClassCount {
            domain,
            category,
            source,
            count,
        })
        .collect()
}

/// Builds the training and test sets of `task` from `registry`.
///
/// Training keeps only windows whose (domain, label) is a training pair,
/// which also filters the healthy lead-in of fault runs by domain. Test
/// windows come from the test-split runs. Fails with the full list of
/// missing (split, domain, category) runs, or if a seed is shared between
/// the splits.
pub fn build_task(
    task: &TaskConfig,
    registry: &RunRegistry,
    stride: usize,
    seed: u64,
) -> Result<(Vec<WindowSample>, Vec<WindowSample>, DatasetManifest)> {
    task.validate()?;
    let gaps: Vec<String> = task
        .required_pairs()
        .into_iter()
        .filter(|(s, d, c)| registry.matching(*s, d, c).next().is_none())
        .map(|(s, d, c)| format!("{}:{d}/{c}", s.as_str()))
        .collect();
    if !gaps.is_empty() {
        return Err(Error::Dataset(format!(
            "task {} is missing runs for {} (split:domain/category): {}",
            task.task_id,
            gaps.len(),
            gaps.join(", ")
        )));
    }
    let seeds = |split: Split| -> BTreeSet<u64> {
        registry.runs.iter().filter(|r| r.split == split).map(|r| r.run.seed).collect()
    };
    if let Some(s) = seeds(Split::Train).intersection(&seeds(Split::Test)).next() {
        return Err(Error::Dataset(format!("seed {s} is used by both training and test runs")));
    }

    let healthy = task.healthy();
    let mut train = Vec::new();
    let mut test = Vec::new();
    let mut runs = Vec::new();
    for (split, domain, label) in task.required_pairs() {
        // Seed order makes the result independent of registration order.
        let mut matching: Vec<&RegisteredRun> = registry.matching(split, &domain, &label).collect();
        matching.sort_by_key(|r| r.run.seed);
        for r in matching {
            let windows = window_run(&r.run, stride, healthy)?;
            let keep: Vec<WindowSample> = match split {
                Split::Train => windows.into_iter().filter(|w| task.in_train(&w.domain, &w.label)).collect(),
                Split::Test => windows
                    .into_iter()
                    .filter(|w| task.test_categories.get(&w.domain).is_some_and(|c| c.contains(&w.label)))
                    .collect(),
            };
            runs.push(ManifestRun {
                split,
                domain: domain.clone(),
                category: label.clone(),
                seed: r.run.seed,
                file: r.file.as_ref().map(|p| p.display().to_string()),
                windows: keep.len(),
            });
            match split {
                Split::Train => train.extend(keep),
                Split::Test => test.extend(keep),
            }
        }
    }
    let manifest = DatasetManifest {
        task_id: task.task_id.clone(),
        variables: registry.variables(),
        stride,
        split_seed: seed,
        schema_version: DATASET_SCHEMA_VERSION,
        runs,
        train_counts: class_counts(&train),
        test_counts: class_counts(&test),
    };
    Ok((train, test, manifest))
}
