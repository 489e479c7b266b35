//! Cross-domain sample generation.
//!
//! Each domain `i` gets a per-variable standardization `gᵢ(x) = (x − μᵢ)/σᵢ`
//! fitted on its healthy windows. Those maps share a latent space in which
//! healthy data of every domain coincide, so a fault window seen only in
//! domain `i` is carried to domain `j` as `gⱼ⁻¹(gᵢ(x))` (DASG). ISS then mixes
//! fault and healthy latent windows of one domain with
//! `λ = 0.2 + 0.8·Beta(α, α)` and keeps the fault label.

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};

use crate::datasets::{Source, TaskConfig, WindowSample, WINDOW};
use crate::error::{Error, Result};
use crate::jsonio;

/// Relative floor on fitted standard deviations.
pub const SIGMA_FLOOR_REL: f64 = 1e-6;
/// Lower end of the mixing coefficient.
pub const LAMBDA_MIN: f64 = 0.2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainStats {
    pub domain_id: String,
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
    /// Windows used in the fit.
    pub n_samples: usize,
}

impl DomainStats {
    pub fn n_vars(&self) -> usize {
        self.mu.len()
    }

    /// `g(x)`: standardize a variable-major window.
    pub fn to_latent(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check(x)?;
        Ok(x.iter()
            .enumerate()
            .map(|(k, v)| (v - self.mu[k / WINDOW]) / self.sigma[k / WINDOW])
            .collect())
    }

    /// `g⁻¹(z)`.
    pub fn from_latent(&self, z: &[f64]) -> Result<Vec<f64>> {
        self.check(z)?;
        Ok(z.iter()
            .enumerate()
            .map(|(k, v)| self.mu[k / WINDOW] + self.sigma[k / WINDOW] * v)
            .collect())
    }

    fn check(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.n_vars() * WINDOW {
            return Err(Error::Dimension(format!(
                "window of {} values does not match {} variables × {WINDOW} of domain {}",
                x.len(),
                self.n_vars(),
                self.domain_id
            )));
        }
        Ok(())
    }
}

/// Per-variable scale over a set of windows: root mean square of the values.
pub fn global_scale(windows: &[WindowSample]) -> Vec<f64> {
    let Some(first) = windows.first() else {
        return Vec::new();
    };
    let mut acc = vec![0.0; first.n_vars];
    for w in windows {
        for (j, a) in acc.iter_mut().enumerate() {
            *a += w.var(j).iter().map(|x| x * x).sum::<f64>();
        }
    }
    let n = (windows.len() * WINDOW) as f64;
    acc.into_iter().map(|a| (a / n).sqrt()).collect()
}

/// Pooled per-variable mean and population std over every timestep of the
/// given healthy windows, with std floored at `floor[j]`.
pub fn fit_domain_stats(healthy: &[&WindowSample], domain_id: &str, floor: &[f64]) -> Result<DomainStats> {
    if healthy.len() < 2 {
        return Err(Error::Generation(format!(
            "domain {domain_id} has {} healthy windows; at least 2 are needed to fit its statistics",
            healthy.len()
        )));
    }
    let v = healthy[0].n_vars;
    if floor.len() != v || healthy.iter().any(|w| w.n_vars != v) {
        return Err(Error::Dimension(format!("domain {domain_id}: inconsistent variable counts")));
    }
    let n = (healthy.len() * WINDOW) as f64;
    let mut mu = vec![0.0; v];
    for w in healthy {
        for (j, m) in mu.iter_mut().enumerate() {
            *m += w.var(j).iter().sum::<f64>();
        }
    }
    for m in &mut mu {
        *m /= n;
    }
    let mut sigma = vec![0.0; v];
    for w in healthy {
        for (j, s) in sigma.iter_mut().enumerate() {
            *s += w.var(j).iter().map(|x| (x - mu[j]) * (x - mu[j])).sum::<f64>();
        }
    }
    for (s, f) in sigma.iter_mut().zip(floor) {
        *s = (*s / n).sqrt().max(*f);
    }
    Ok(DomainStats {
        domain_id: domain_id.to_string(),
        mu,
        sigma,
        n_samples: healthy.len(),
    })
}

/// Fits stats for every task domain from the real healthy training windows.
pub fn fit_all_domain_stats(train: &[WindowSample], task: &TaskConfig) -> Result<BTreeMap<String, DomainStats>> {
    let real: Vec<WindowSample> = train.iter().filter(|w| w.source == Source::Real).cloned().collect();
    let floor: Vec<f64> = global_scale(&real)
        .into_iter()
        .map(|s| (SIGMA_FLOOR_REL * s).max(f64::MIN_POSITIVE))
        .collect();
    let mut out = BTreeMap::new();
    for d in &task.modes {
        let healthy: Vec<&WindowSample> = real
            .iter()
            .filter(|w| &w.domain == d && w.label == task.healthy())
            .collect();
        out.insert(d.clone(), fit_domain_stats(&healthy, d, &floor)?);
    }
    Ok(out)
}

/// `gⱼ⁻¹(gᵢ(x))`, i.e. `μⱼ + σⱼ ⊙ (x − μᵢ)/σᵢ` per variable.
pub fn map_domain(x: &[f64], from: &DomainStats, to: &DomainStats) -> Result<Vec<f64>> {
    if from.n_vars() != to.n_vars() {
        return Err(Error::Dimension(format!(
            "domain {} has {} variables, domain {} has {}",
            from.domain_id,
            from.n_vars(),
            to.domain_id,
            to.n_vars()
        )));
    }
    if from == to {
        from.check(x)?;
        return Ok(x.to_vec());
    }
    to.from_latent(&from.to_latent(x)?)
}

/// Carries every real training fault window into each task domain whose
/// training categories lack its label.
pub fn dasg_expand(
    train: &[WindowSample],
    task: &TaskConfig,
    stats: &BTreeMap<String, DomainStats>,
) -> Result<Vec<WindowSample>> {
    let lookup = |d: &str| {
        stats
            .get(d)
            .ok_or_else(|| Error::Generation(format!("no domain statistics for {d}")))
    };
    for d in &task.modes {
        lookup(d)?;
    }
    let mut out = Vec::new();
    for w in train.iter().filter(|w| w.source == Source::Real && w.label != task.healthy()) {
        let from = lookup(&w.domain)?;
        for target in &task.modes {
            if *target == w.domain || task.in_train(target, &w.label) {
                continue;
            }
            out.push(WindowSample {
                features: map_domain(&w.features, from, lookup(target)?)?,
                n_vars: w.n_vars,
                label: w.label.clone(),
                domain: target.clone(),
                source: Source::Dasg,
            });
        }
    }
    Ok(out)
}

/// A synthesized latent window.
#[derive(Debug, Clone, PartialEq)]
pub struct MixSample {
    pub features: Vec<f64>,
    pub label: String,
    pub lambda: f64,
    /// Indices into the fault and healthy pools.
    pub parents: (usize, usize),
}

/// Draws `λ = 0.2 + 0.8·Beta(α, α)`.
pub fn draw_lambda<R: Rng>(beta: &Beta<f64>, rng: &mut R) -> f64 {
    LAMBDA_MIN + (1.0 - LAMBDA_MIN) * beta.sample(rng)
}

fn beta_dist(alpha: f64) -> Result<Beta<f64>> {
    Beta::new(alpha, alpha).map_err(|e| Error::Config(format!("invalid Beta parameter α = {alpha}: {e}")))
}

/// `λ·z_F + (1 − λ)·z_N`.
pub fn mix(fault: &[f64], healthy: &[f64], lambda: f64) -> Vec<f64> {
    fault
        .iter()
        .zip(healthy)
        .map(|(f, h)| lambda * f + (1.0 - lambda) * h)
        .collect()
}

/// Mixes `count` pairs drawn uniformly from the two latent pools.
pub fn iss_synthesize(
    fault_pool: &[&[f64]],
    healthy_pool: &[&[f64]],
    label: &str,
    count: usize,
    alpha: f64,
    seed: u64,
) -> Result<Vec<MixSample>> {
    if count == 0 {
        return Ok(Vec::new());
    }
    if fault_pool.is_empty() || healthy_pool.is_empty() {
        return Err(Error::Generation(format!(
            "cannot mix {label}: fault pool has {} windows, healthy pool has {}",
            fault_pool.len(),
            healthy_pool.len()
        )));
    }
    let beta = beta_dist(alpha)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let lambda = draw_lambda(&beta, &mut rng);
        let fi = rng.random_range(0..fault_pool.len());
        let hi = rng.random_range(0..healthy_pool.len());
        if fault_pool[fi].len() != healthy_pool[hi].len() {
            return Err(Error::Dimension("fault and healthy windows differ in size".into()));
        }
        out.push(MixSample {
            features: mix(fault_pool[fi], healthy_pool[hi], lambda),
            label: label.to_string(),
            lambda,
            parents: (fi, hi),
        });
    }
    Ok(out)
}

/// Which generators to run and how much to synthesize.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenConfig {
    pub dasg: bool,
    pub iss: bool,
    /// ISS windows per (domain, fault category), relative to its real + DASG count.
    pub iss_ratio: f64,
    pub alpha: f64,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            dasg: true,
            iss: true,
            iss_ratio: 0.5,
            alpha: 2.0,
        }
    }
}

/// Output of [`generate`]: windows in raw measurement space, plus the stats.
#[derive(Debug, Clone)]
pub struct Generated {
    pub stats: BTreeMap<String, DomainStats>,
    pub windows: Vec<WindowSample>,
}

fn pair_seed(seed: u64, domain: &str, label: &str) -> u64 {
    // FNV-1a over the pair, folded into the run seed.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in domain.bytes().chain([0u8]).chain(label.bytes()) {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    crate::datasets::run_seed(seed, 0, 0, crate::datasets::Split::Train, h as usize)
}

/// Runs DASG and ISS over a training set according to `cfg`.
///
/// ISS mixes, per (domain, fault category), the real and DASG fault windows
/// with that domain's real healthy windows in its latent space and maps the
/// result back through the domain's inverse map.
pub fn generate(train: &[WindowSample], task: &TaskConfig, cfg: &GenConfig, seed: u64) -> Result<Generated> {
    if !(cfg.iss_ratio.is_finite() && cfg.iss_ratio >= 0.0) {
        return Err(Error::Config(format!("iss_ratio must be non-negative, got {}", cfg.iss_ratio)));
    }
    let stats = fit_all_domain_stats(train, task)?;
    let mut windows = if cfg.dasg { dasg_expand(train, task, &stats)? } else { Vec::new() };
    if cfg.iss {
        let mut synth = Vec::new();
        for d in &task.modes {
            let st = &stats[d];
            let healthy: Vec<Vec<f64>> = train
                .iter()
                .filter(|w| w.source == Source::Real && &w.domain == d && w.label == task.healthy())
                .map(|w| st.to_latent(&w.features))
                .collect::<Result<_>>()?;
            let healthy_refs: Vec<&[f64]> = healthy.iter().map(Vec::as_slice).collect();
            for label in task.categories.iter().filter(|c| *c != task.healthy()) {
                let faults: Vec<Vec<f64>> = train
                    .iter()
                    .chain(windows.iter())
                    .filter(|w| &w.domain == d && &w.label == label)
                    .map(|w| st.to_latent(&w.features))
                    .collect::<Result<_>>()?;
                let count = (cfg.iss_ratio * faults.len() as f64).round() as usize;
                if faults.is_empty() || count == 0 {
                    continue;
                }
                let refs: Vec<&[f64]> = faults.iter().map(Vec::as_slice).collect();
                for m in iss_synthesize(&refs, &healthy_refs, label, count, cfg.alpha, pair_seed(seed, d, label))? {
                    synth.push(WindowSample {
                        features: st.from_latent(&m.features)?,
                        n_vars: st.n_vars(),
                        label: m.label,
                        domain: d.clone(),
                        source: Source::Iss,
                    });
                }
            }
        }
        windows.extend(synth);
    }
    Ok(Generated { stats, windows })
}

pub fn write_stats(path: &Path, stats: &BTreeMap<String, DomainStats>) -> Result<()> {
    jsonio::write_json(path, stats)
}

pub fn read_stats(path: &Path) -> Result<BTreeMap<String, DomainStats>> {
    jsonio::read_json(path)
}

#[cfg(test)]
mod tests;
