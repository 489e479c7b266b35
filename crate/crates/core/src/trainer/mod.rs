//! Training loop, evaluation metrics and experiment orchestration.

mod experiment;
mod metrics;

pub use experiment::{
    compare_reports, config_hash, generation_seed, init_seed, load_summary, run_experiment, Ablation, DataConfig, ExperimentConfig,
    ExperimentResult, GenerationConfig, MetricsSummary, Profile,
};
pub use metrics::{argmax, compute_metrics, EvalReport, PairAccuracy};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datasets::{TaskConfig, WindowSample, WINDOW};
use crate::diffcore::{adam_step, AdamState, Tensor};
use crate::error::{Error, Result};
use crate::network::{InputScaler, Model};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub base_lr: f64,
    /// Multiplicative decay applied every `decay_every` epochs.
    pub lr_decay: f64,
    pub decay_every: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 512,
            base_lr: 0.01,
            lr_decay: 0.3,
            decay_every: 3,
            epochs: 30,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// `base_lr · decay^(epoch // decay_every)` for a zero-based epoch.
    pub fn lr(&self, epoch: usize) -> f64 {
        self.base_lr * self.lr_decay.powi((epoch / self.decay_every.max(1)) as i32)
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.decay_every == 0 {
            return Err(Error::Config("batch_size and decay_every must be ≥ 1".into()));
        }
        if !(self.base_lr > 0.0 && self.lr_decay > 0.0) {
            return Err(Error::Config("base_lr and lr_decay must be positive".into()));
        }
        Ok(())
    }
}

/// Mean training loss of one epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub lr: f64,
    pub loss: f64,
}

/// Model inputs and class indices, standardized once up front.
pub struct Prepared {
    inputs: Vec<f64>,
    labels: Vec<usize>,
    n_vars: usize,
}

impl Prepared {
    pub fn new(windows: &[WindowSample], scaler: &InputScaler, task: &TaskConfig) -> Result<Prepared> {
        let n_vars = windows.first().map_or(0, |w| w.n_vars);
        let mut inputs = Vec::with_capacity(windows.len() * n_vars * WINDOW);
        let mut labels = Vec::with_capacity(windows.len());
        for w in windows {
            inputs.extend(scaler.transform(w)?);
            labels.push(task.class_index(&w.label)?);
        }
        Ok(Prepared { inputs, labels, n_vars })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    fn batch(&self, idx: &[usize]) -> Result<(Tensor, Vec<usize>)> {
        let stride = self.n_vars * WINDOW;
        let mut data = Vec::with_capacity(idx.len() * stride);
        for &i in idx {
            data.extend_from_slice(&self.inputs[i * stride..(i + 1) * stride]);
        }
        let x = Tensor::new([idx.len(), self.n_vars, WINDOW], data)?;
        Ok((x, idx.iter().map(|&i| self.labels[i]).collect()))
    }
}

/// Trains `model` in place with Adam over seeded per-epoch shuffles. The
/// last partial batch of each epoch is kept.
pub fn train(model: &mut Model, data: &Prepared, cfg: &TrainConfig) -> Result<Vec<EpochLoss>> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Training("training set is empty".into()));
    }
    let mut state = AdamState::new(&model.params);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut curve = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let lr = cfg.lr(epoch);
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for (bi, idx) in order.chunks(cfg.batch_size).enumerate() {
            let (x, y) = data.batch(idx)?;
            model.params.zero_grad();
            let loss = model
                .loss_and_grad(x, &y)
                .and_then(|l| adam_step(&mut model.params, &mut state, lr).map(|_| l))
                .map_err(|e| Error::Training(format!("epoch {epoch}, batch {bi}: {e}")))?;
            total += loss * idx.len() as f64;
        }
        curve.push(EpochLoss {
            epoch,
            lr,
            loss: total / data.len() as f64,
        });
    }
    model.params.zero_grad();
    Ok(curve)
}

/// Class predictions in batches of `batch_size`.
pub fn predict(model: &Model, data: &Prepared, batch_size: usize) -> Result<Vec<usize>> {
    let idx: Vec<usize> = (0..data.len()).collect();
    let mut out = Vec::with_capacity(data.len());
    for chunk in idx.chunks(batch_size.max(1)) {
        let (x, _) = data.batch(chunk)?;
        let p = model.forward(x)?;
        out.extend(p.data().chunks(model.arch.n_classes).map(argmax));
    }
    Ok(out)
}

/// Scores `model` on a prepared test set.
pub fn evaluate(
    model: &Model,
    data: &Prepared,
    windows: &[WindowSample],
    task: &TaskConfig,
    batch_size: usize,
) -> Result<EvalReport> {
    if data.is_empty() {
        return Err(Error::Dataset("test set is empty".into()));
    }
    let preds = predict(model, data, batch_size)?;
    let domains: Vec<&str> = windows.iter().map(|w| w.domain.as_str()).collect();
    Ok(EvalReport::new(&preds, data.labels(), &domains, &task.categories))
}
