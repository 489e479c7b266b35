use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::datasets::{Source, TaskConfig, WindowSample, WINDOW};
use crate::diffcore::Tensor;
use crate::error::{Error, Result};
use crate::samplegen::{fit_all_domain_stats, fit_domain_stats, global_scale, DomainStats, SIGMA_FLOOR_REL};

/// Coordinates the model sees its inputs in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputSpace {
    /// Each window standardized by its own domain's healthy statistics.
    DomainLatent,
    /// One standardization fitted on the healthy windows of all task domains.
    TaskGlobal,
}

/// Per-variable standardization applied to every window before the model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputScaler {
    pub space: InputSpace,
    pub stats: BTreeMap<String, DomainStats>,
}

const GLOBAL_KEY: &str = "*";

impl InputScaler {
    /// Fits on the real training windows of `task`.
    pub fn fit(train: &[WindowSample], task: &TaskConfig, space: InputSpace) -> Result<InputScaler> {
        let stats = match space {
            InputSpace::DomainLatent => fit_all_domain_stats(train, task)?,
            InputSpace::TaskGlobal => {
                let real: Vec<&WindowSample> = train.iter().filter(|w| w.source == Source::Real).collect();
                let owned: Vec<WindowSample> = real.iter().map(|w| (*w).clone()).collect();
                let floor: Vec<f64> = global_scale(&owned)
                    .into_iter()
                    .map(|s| (SIGMA_FLOOR_REL * s).max(f64::MIN_POSITIVE))
                    .collect();
                let healthy: Vec<&WindowSample> =
                    real.into_iter().filter(|w| w.label == task.healthy()).collect();
                BTreeMap::from([(GLOBAL_KEY.to_string(), fit_domain_stats(&healthy, GLOBAL_KEY, &floor)?)])
            }
        };
        Ok(InputScaler { space, stats })
    }

    fn stats_for(&self, domain: &str) -> Result<&DomainStats> {
        let key = match self.space {
            InputSpace::DomainLatent => domain,
            InputSpace::TaskGlobal => GLOBAL_KEY,
        };
        self.stats
            .get(key)
            .ok_or_else(|| Error::Dataset(format!("input scaler has no statistics for domain {domain}")))
    }

    pub fn transform(&self, w: &WindowSample) -> Result<Vec<f64>> {
        self.stats_for(&w.domain)?.to_latent(&w.features)
    }

    /// Stacks the selected windows into a `[N, v, 64]` model input.
    pub fn batch(&self, windows: &[WindowSample], indices: &[usize]) -> Result<Tensor> {
        let v = windows.first().map_or(0, |w| w.n_vars);
        let mut data = Vec::with_capacity(indices.len() * v * WINDOW);
        for &i in indices {
            data.extend(self.transform(&windows[i])?);
        }
        Tensor::new([indices.len(), v, WINDOW], data)
    }
}
