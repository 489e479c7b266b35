use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

use super::{evaluate, train, EpochLoss, EvalReport, PairAccuracy, Prepared, TrainConfig};
use crate::cstr::CstrParams;
use crate::datasets::{self, build_task, class_counts, simulate_task_runs, RunRegistry, TaskConfig};
use crate::error::{Error, Result};
use crate::jsonio;
use crate::network::{save_checkpoint, ArchConfig, InputScaler, InputSpace, Model, ModelCheckpoint, SainMode};
use crate::samplegen::{self, GenConfig};

pub const EXPERIMENT_SCHEMA_VERSION: u32 = 1;

/// Component switches of one model variant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Ablation {
    pub dasg: bool,
    pub iss: bool,
    pub sain: SainMode,
    pub tsam: bool,
}

impl Default for Ablation {
    fn default() -> Self {
        Ablation::FULL
    }
}

impl Ablation {
    pub const FULL: Ablation = Ablation {
        dasg: true,
        iss: true,
        sain: SainMode::Adaptive,
        tsam: true,
    };

    /// Named variants: `full` and `A1`–`A5` (no DASG, no ISS, no
    /// normalization, plain instance normalization, no attention).
    pub const PRESETS: [(&'static str, Ablation); 6] = [
        ("full", Ablation::FULL),
        ("A1", Ablation { dasg: false, ..Ablation::FULL }),
        ("A2", Ablation { iss: false, ..Ablation::FULL }),
        ("A3", Ablation { sain: SainMode::None, ..Ablation::FULL }),
        ("A4", Ablation { sain: SainMode::PlainIn, ..Ablation::FULL }),
        ("A5", Ablation { tsam: false, ..Ablation::FULL }),
    ];

    /// Preset name, or `custom` for any other combination.
    pub fn label(&self) -> &'static str {
        Ablation::PRESETS
            .iter()
            .find(|(_, a)| a == self)
            .map_or("custom", |(n, _)| n)
    }
}

impl FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Ablation> {
        Ablation::PRESETS
            .iter()
            .find(|(n, _)| n.eq_ignore_ascii_case(s))
            .map(|(_, a)| *a)
            .ok_or_else(|| {
                let names: Vec<&str> = Ablation::PRESETS.iter().map(|(n, _)| *n).collect();
                Error::Usage(format!("unknown ablation `{s}`; valid ids are {}", names.join(", ")))
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub train_runs_per_class: usize,
    pub test_runs_per_class: usize,
    pub stride: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            train_runs_per_class: 4,
            test_runs_per_class: 1,
            stride: 4,
        }
    }
}

/// ISS tuning; the DASG and ISS switches live in [`Ablation`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerationConfig {
    pub iss_ratio: f64,
    pub alpha: f64,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        let g = GenConfig::default();
        GenerationConfig {
            iss_ratio: g.iss_ratio,
            alpha: g.alpha,
        }
    }
}

/// Everything one experiment depends on. Serialized verbatim as `config.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub task: String,
    /// Drives simulation, splitting and sample generation.
    pub seed: u64,
    pub input_space: InputSpace,
    pub ablation: Ablation,
    pub data: DataConfig,
    pub generation: GenerationConfig,
    /// `trainer.seed` drives initialization and shuffling.
    pub trainer: TrainConfig,
    pub cstr: CstrParams,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            task: "T4".into(),
            seed: 0,
            input_space: InputSpace::TaskGlobal,
            ablation: Ablation::FULL,
            data: DataConfig::default(),
            generation: GenerationConfig::default(),
            trainer: TrainConfig::default(),
            cstr: CstrParams::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Profile {
    /// Full schedule: 30 epochs, four training runs per class.
    Paper,
    /// Laptop scale: 10 epochs, two training runs per class.
    Desk,
}

impl Profile {
    pub fn apply(self, cfg: &mut ExperimentConfig) {
        match self {
            Profile::Paper => {
                cfg.trainer.epochs = 30;
                cfg.data.train_runs_per_class = 4;
            }
            Profile::Desk => {
                cfg.trainer.epochs = 10;
                cfg.data.train_runs_per_class = 2;
            }
        }
    }
}

impl FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Profile> {
        match s {
            "paper" => Ok(Profile::Paper),
            "desk" => Ok(Profile::Desk),
            _ => Err(Error::Usage(format!("unknown profile `{s}`; valid profiles are paper, desk"))),
        }
    }
}

impl fmt::Display for Profile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Profile::Paper => "paper",
            Profile::Desk => "desk",
        })
    }
}

/// Contents of `metrics.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub task: String,
    pub ablation: String,
    pub seed: u64,
    pub config_hash: String,
    pub acc: f64,
    pub mean_fdr: f64,
    pub mean_fpr: f64,
    pub n_test: usize,
    pub categories: Vec<String>,
    pub fdr: Vec<Option<f64>>,
    pub fpr: Vec<Option<f64>>,
    pub per_domain: Vec<PairAccuracy>,
    pub final_loss: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub summary: MetricsSummary,
    pub report: EvalReport,
    pub curve: Vec<EpochLoss>,
}

/// Hex SHA-256 of the compact JSON form of `value`.
pub fn config_hash<T: Serialize>(value: &T) -> String {
    let bytes = serde_json::to_vec(value).expect("configs serialize");
    Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn stream(seed: u64, k: u64) -> u64 {
    datasets::splitmix64(seed ^ datasets::splitmix64(k))
}

/// Seed of sample generation, derived from the global seed.
pub fn generation_seed(seed: u64) -> u64 {
    stream(seed, 1)
}

/// Seed of parameter initialization, derived from the training seed.
pub fn init_seed(trainer_seed: u64) -> u64 {
    stream(trainer_seed, 2)
}

/// Runs the whole pipeline for `cfg` and writes `config.json`,
/// `manifest.json`, `loss_curve.csv`, `confusion.csv`, `metrics.json` and
/// `checkpoint.json` into `out`. Runs are simulated when `registry` is `None`.
pub fn run_experiment(cfg: &ExperimentConfig, registry: Option<&RunRegistry>, out: &Path) -> Result<ExperimentResult> {
    let task = TaskConfig::cstr(&cfg.task).map_err(|e| e.in_stage("config"))?;
    cfg.trainer.validate().map_err(|e| e.in_stage("config"))?;
    let hash = config_hash(cfg);

    let simulated;
    let registry = match registry {
        Some(r) => r,
        None => {
            simulated = simulate_task_runs(
                &cfg.cstr,
                &task,
                cfg.data.train_runs_per_class,
                cfg.data.test_runs_per_class,
                cfg.seed,
            )
            .map_err(|e| e.in_stage("simulate"))?;
            &simulated
        }
    };
    let (real_train, test, dataset) =
        build_task(&task, registry, cfg.data.stride, cfg.seed).map_err(|e| e.in_stage("build"))?;

    let gen_cfg = GenConfig {
        dasg: cfg.ablation.dasg,
        iss: cfg.ablation.iss,
        iss_ratio: cfg.generation.iss_ratio,
        alpha: cfg.generation.alpha,
    };
    let gen_seed = generation_seed(cfg.seed);
    let generated = samplegen::generate(&real_train, &task, &gen_cfg, gen_seed).map_err(|e| e.in_stage("generate"))?;

    let scaler = InputScaler::fit(&real_train, &task, cfg.input_space).map_err(|e| e.in_stage("scale"))?;
    let mut train_set = real_train;
    train_set.extend(generated.windows.iter().cloned());
    let train_data = Prepared::new(&train_set, &scaler, &task).map_err(|e| e.in_stage("scale"))?;
    let test_data = Prepared::new(&test, &scaler, &task).map_err(|e| e.in_stage("scale"))?;

    let mut arch = ArchConfig::new(dataset.variables.len(), task.n_classes());
    arch.sain = cfg.ablation.sain;
    arch.tsam = cfg.ablation.tsam;
    let init_seed = init_seed(cfg.trainer.seed);
    let mut model = Model::new(arch, init_seed).map_err(|e| e.in_stage("train"))?;
    let curve = train(&mut model, &train_data, &cfg.trainer).map_err(|e| e.in_stage("train"))?;
    let report =
        evaluate(&model, &test_data, &test, &task, cfg.trainer.batch_size).map_err(|e| e.in_stage("evaluate"))?;

    let summary = MetricsSummary {
        task: task.task_id.clone(),
        ablation: cfg.ablation.label().to_string(),
        seed: cfg.seed,
        config_hash: hash.clone(),
        acc: report.acc,
        mean_fdr: report.mean_fdr,
        mean_fpr: report.mean_fpr,
        n_test: report.n,
        categories: report.categories.clone(),
        fdr: report.fdr.clone(),
        fpr: report.fpr.clone(),
        per_domain: report.per_domain.clone(),
        final_loss: curve.last().map(|c| c.loss),
    };
    let seeds = json!({
        "simulation": cfg.seed,
        "split": cfg.seed,
        "generation": gen_seed,
        "init": init_seed,
        "shuffle": cfg.trainer.seed,
    });
    let manifest = json!({
        "schema_version": EXPERIMENT_SCHEMA_VERSION,
        "package_version": env!("CARGO_PKG_VERSION"),
        "config_hash": hash,
        "seeds": seeds,
        "dataset": dataset,
        "generated_counts": class_counts(&generated.windows),
        "domain_stats": generated.stats,
        "train_windows": train_data.len(),
        "test_windows": test_data.len(),
    });
    let ckpt_manifest = json!({
        "task": task.task_id,
        "ablation": summary.ablation,
        "config_hash": summary.config_hash,
        "seeds": seeds,
        "epochs": cfg.trainer.epochs,
        "acc": report.acc,
    });

    let write = || -> Result<()> {
        jsonio::write_json(&out.join("config.json"), cfg)?;
        jsonio::write_json(&out.join("manifest.json"), &manifest)?;
        let mut lc = String::from("epoch,lr,loss\n");
        for e in &curve {
            lc.push_str(&format!("{},{},{}\n", e.epoch, e.lr, e.loss));
        }
        jsonio::write_text(&out.join("loss_curve.csv"), &lc)?;
        jsonio::write_text(&out.join("confusion.csv"), &report.confusion_csv())?;
        jsonio::write_json(&out.join("metrics.json"), &summary)?;
        let ckpt = ModelCheckpoint::from_model(&model, &task.categories, Some(scaler.clone()), ckpt_manifest.clone());
        save_checkpoint(&out.join("checkpoint.json"), &ckpt)
    };
    write().map_err(|e| e.in_stage("write"))?;
    Ok(ExperimentResult { summary, report, curve })
}

pub fn load_summary(path: &Path) -> Result<MetricsSummary> {
    jsonio::read_json(path)
}

/// Accuracy table with one row per ablation label and one column per task,
/// both in first-seen order, plus the row's mean over its tasks. Repeated
/// (label, task) entries, e.g. several seeds, are averaged.
pub fn compare_reports(reports: &[MetricsSummary]) -> Result<String> {
    if reports.is_empty() {
        return Err(Error::Usage("compare_reports needs at least one report".into()));
    }
    let mut tasks: Vec<&str> = Vec::new();
    let mut rows: Vec<&str> = Vec::new();
    let mut cells: BTreeMap<(&str, &str), (f64, usize)> = BTreeMap::new();
    for r in reports {
        if !tasks.contains(&r.task.as_str()) {
            tasks.push(&r.task);
        }
        if !rows.contains(&r.ablation.as_str()) {
            rows.push(&r.ablation);
        }
        let c = cells.entry((&r.ablation, &r.task)).or_insert((0.0, 0));
        c.0 += r.acc;
        c.1 += 1;
    }
    let mut s = format!("model,{},average\n", tasks.join(","));
    for row in rows {
        let accs: Vec<Option<f64>> = tasks
            .iter()
            .map(|t| cells.get(&(row, *t)).map(|(sum, n)| sum / *n as f64))
            .collect();
        let present: Vec<f64> = accs.iter().flatten().copied().collect();
        let avg = present.iter().sum::<f64>() / present.len() as f64;
        let fields: Vec<String> = accs.iter().map(|a| a.map_or(String::new(), |v| v.to_string())).collect();
        s.push_str(&format!("{row},{},{avg}\n", fields.join(",")));
    }
    Ok(s)
}
