use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::cstr::FaultId;
use crate::error::{Error, Result};

/// Which domains contribute which categories to training and testing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskConfig {
    pub task_id: String,
    pub modes: Vec<String>,
    /// Full label set in class-index order; the first entry is the healthy class.
    pub categories: Vec<String>,
    pub train_categories: BTreeMap<String, Vec<String>>,
    pub test_categories: BTreeMap<String, Vec<String>>,
}

pub const CSTR_TASKS: [&str; 9] = ["T1", "T2", "T3", "T4", "T5", "T6", "T7", "T8", "T9"];

fn faults(ids: &[usize]) -> Vec<String> {
    ids.iter().map(|&i| FaultId::ALL[i].to_string()).collect()
}

fn all_but(skip: usize) -> Vec<String> {
    faults(&(0..10).filter(|&i| i != skip).collect::<Vec<_>>())
}

impl TaskConfig {
    /// The nine CSTR tasks. Each lists its training domains in the order of
    /// the source table; the third domain of T7–T9 contributes healthy data only.
    pub fn cstr(task_id: &str) -> Result<TaskConfig> {
        let lower = faults(&[0, 1, 2, 3, 4]);
        let upper = faults(&[0, 5, 6, 7, 8, 9]);
        let h = faults(&[0]);
        let train: Vec<(&str, Vec<String>)> = match task_id {
            "T1" => vec![("M1", all_but(9)), ("M2", all_but(8))],
            "T2" => vec![("M1", all_but(8)), ("M3", faults(&[0, 3, 4, 6, 7, 8]))],
            "T3" => vec![("M2", faults(&[0, 1, 3, 9])), ("M3", faults(&[0, 1, 2, 4, 5, 6, 7, 8]))],
            "T4" => vec![("M1", lower), ("M2", upper)],
            "T5" => vec![("M1", lower), ("M3", upper)],
            "T6" => vec![("M2", lower), ("M3", upper)],
            "T7" => vec![("M1", lower), ("M2", upper), ("M3", h)],
            "T8" => vec![("M1", lower), ("M3", upper), ("M2", h)],
            "T9" => vec![("M2", lower), ("M3", upper), ("M1", h)],
            other => {
                return Err(Error::Usage(format!(
                    "unknown task `{other}`; valid tasks are {}",
                    CSTR_TASKS.join(", ")
                )))
            }
        };
        let categories = faults(&(0..10).collect::<Vec<_>>());
        let modes: Vec<String> = train.iter().map(|(m, _)| m.to_string()).collect();
        let cfg = TaskConfig {
            task_id: task_id.to_string(),
            test_categories: modes.iter().map(|m| (m.clone(), categories.clone())).collect(),
            train_categories: train.into_iter().map(|(m, c)| (m.to_string(), c)).collect(),
            modes,
            categories,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn healthy(&self) -> &str {
        &self.categories[0]
    }

    pub fn n_classes(&self) -> usize {
        self.categories.len()
    }

    pub fn class_index(&self, label: &str) -> Result<usize> {
        self.categories
            .iter()
            .position(|c| c == label)
            .ok_or_else(|| Error::Index(format!("label `{label}` is not a category of task {}", self.task_id)))
    }

    pub fn in_train(&self, domain: &str, label: &str) -> bool {
        self.train_categories
            .get(domain)
            .is_some_and(|c| c.iter().any(|l| l == label))
    }

    /// Checks the category sets: training labels jointly cover every
    /// category, every training domain has healthy data, and all labels and
    /// domains are known.
    pub fn validate(&self) -> Result<()> {
        let cfg_err = |m: String| Err(Error::Config(format!("task {}: {m}", self.task_id)));
        if self.categories.len() < 2 {
            return cfg_err("needs at least two categories".into());
        }
        let known: BTreeSet<&String> = self.categories.iter().collect();
        if known.len() != self.categories.len() {
            return cfg_err("duplicate category".into());
        }
        let modes: BTreeSet<&String> = self.modes.iter().collect();
        let mut covered = BTreeSet::new();
        for (split, table) in [("train", &self.train_categories), ("test", &self.test_categories)] {
            for (domain, cats) in table {
                if !modes.contains(domain) {
                    return cfg_err(format!("{split} domain `{domain}` is not in modes"));
                }
                for c in cats {
                    if !known.contains(c) {
                        return cfg_err(format!("{split} category `{c}` of {domain} is unknown"));
                    }
                }
            }
        }
        for (domain, cats) in &self.train_categories {
            if !cats.iter().any(|c| c == self.healthy()) {
                return cfg_err(format!("training domain {domain} lacks the healthy class"));
            }
            covered.extend(cats.iter());
        }
        if covered.len() != known.len() {
            let missing: Vec<&String> = known.difference(&covered).copied().collect();
            return cfg_err(format!("training categories miss {missing:?}"));
        }
        Ok(())
    }

    /// Every (domain, category) pair the task needs data for, by split.
    pub fn required_pairs(&self) -> Vec<(Split, String, String)> {
        let mut out = Vec::new();
        for (split, table) in [(Split::Train, &self.train_categories), (Split::Test, &self.test_categories)] {
            for domain in &self.modes {
                for c in table.get(domain).into_iter().flatten() {
                    out.push((split, domain.clone(), c.clone()));
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}
