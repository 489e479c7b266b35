//! Command-line front end. Every command reads the same JSON experiment
//! config (file, then `--profile`, then flags, then `--set` overrides).

mod selfcheck;

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};

use clap::{Args, Parser, Subcommand};

use crate::cstr::{self, FaultId, FaultSpec, ModeId, ModeSpec, SimRun};
use crate::datasets::{self, build_task, read_manifest, read_windows, run_seed, RunRegistry, Split, TaskConfig};
use crate::error::{Error, Result};
use crate::jsonio;
use crate::network::{load_checkpoint, save_checkpoint, ArchConfig, InputScaler, Model, ModelCheckpoint};
use crate::samplegen::{self, GenConfig};
use crate::trainer::{
    compare_reports, config_hash, evaluate, generation_seed, init_seed, load_summary, run_experiment, train, ExperimentConfig,
    MetricsSummary, Prepared, Profile,
};

#[derive(Debug, Parser)]
#[command(name = "hdfd", version, about = "Heterogeneous-domain fault diagnosis workbench")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Default)]
pub struct ConfigArgs {
    /// JSON experiment config; missing keys take their defaults.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Scale preset: `paper` or `desk`.
    #[arg(long)]
    pub profile: Option<String>,
    /// Global seed; also seeds initialization and shuffling.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Task id, T1..T9.
    #[arg(long)]
    pub task: Option<String>,
    /// Model variant: full or A1..A5.
    #[arg(long)]
    pub ablation: Option<String>,
    /// Dotted-path override such as `trainer.epochs=5`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Debug, Args)]
pub struct OutArgs {
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Re-derive into a scratch directory and byte-compare with `--out`.
    #[arg(long)]
    pub check: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate CSTR runs. With `--task`, writes every run the task needs
    /// into `<out>/train` and `<out>/test`.
    Simulate {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[command(flatten)]
        out: OutArgs,
        /// Comma-separated modes, or `all`.
        #[arg(long)]
        mode: Option<String>,
        /// Comma-separated faults (H, F1..F9), or `all`.
        #[arg(long)]
        fault: Option<String>,
        /// Parallel simulations.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Window the runs of `<runs>/train` and `<runs>/test` into a task dataset.
    Build {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[command(flatten)]
        out: OutArgs,
        #[arg(long)]
        runs: PathBuf,
    },
    /// Generate DASG and ISS windows for a built dataset.
    Generate {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[command(flatten)]
        out: OutArgs,
        #[arg(long)]
        dataset: PathBuf,
    },
    /// Train on a dataset plus optional generated windows.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[command(flatten)]
        out: OutArgs,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        generated: Option<PathBuf>,
    },
    /// Score a checkpoint on a dataset's test split.
    Evaluate {
        #[command(flatten)]
        out: OutArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
    },
    /// Simulate (or load `--runs`), build, generate, train and evaluate.
    Experiment {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[command(flatten)]
        out: OutArgs,
        /// Use existing runs instead of simulating.
        #[arg(long)]
        runs: Option<PathBuf>,
    },
    /// Accuracy table over several metrics.json files.
    Report {
        #[arg(long, num_args = 1.., required = true)]
        inputs: Vec<PathBuf>,
        /// Also write the CSV here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Gradient, normalization, generation, metric and simulator checks.
    Selfcheck,
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Simulate {
            cfg,
            out,
            mode,
            fault,
            jobs,
        } => {
            let task_given = cfg.task.is_some();
            let c = load_config(&cfg)?;
            produce(&out, |dir| cmd_simulate(&c, task_given, mode.as_deref(), fault.as_deref(), jobs, dir))
        }
        Command::Build { cfg, out, runs } => {
            let c = load_config(&cfg)?;
            produce(&out, |dir| cmd_build(&c, &runs, dir))
        }
        Command::Generate { cfg, out, dataset } => {
            let c = load_config(&cfg)?;
            produce(&out, |dir| cmd_generate(&c, &dataset, dir))
        }
        Command::Train {
            cfg,
            out,
            dataset,
            generated,
        } => {
            let c = load_config(&cfg)?;
            produce(&out, |dir| cmd_train(&c, &dataset, generated.as_deref(), dir))
        }
        Command::Evaluate { out, checkpoint, dataset } => {
            produce(&out, |dir| cmd_evaluate(&checkpoint, &dataset, dir).map(|_| ()))
        }
        Command::Experiment { cfg, out, runs } => {
            let c = load_config(&cfg)?;
            produce(&out, |dir| cmd_experiment(&c, runs.as_deref(), dir))
        }
        Command::Report { inputs, out } => {
            let csv = cmd_report(&inputs)?;
            print!("{csv}");
            match out {
                Some(p) => jsonio::write_text(&p, &csv),
                None => Ok(()),
            }
        }
        Command::Selfcheck => selfcheck::run_all(),
    }
}

/// Effective config: defaults, then the file, profile, flags and overrides.
pub fn load_config(a: &ConfigArgs) -> Result<ExperimentConfig> {
    let mut cfg: ExperimentConfig = match &a.config {
        Some(p) => jsonio::read_json(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(p) = &a.profile {
        p.parse::<Profile>()?.apply(&mut cfg);
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
        cfg.trainer.seed = s;
    }
    if let Some(t) = &a.task {
        TaskConfig::cstr(t)?;
        cfg.task = t.clone();
    }
    if let Some(ab) = &a.ablation {
        cfg.ablation = ab.parse()?;
    }
    if a.set.is_empty() {
        return Ok(cfg);
    }
    let mut v = serde_json::to_value(&cfg).expect("configs serialize");
    for s in &a.set {
        apply_override(&mut v, s)?;
    }
    serde_json::from_value(v).map_err(|e| Error::Usage(format!("invalid override: {e}")))
}

/// Sets `path=value` in a JSON tree. The value is parsed as JSON when
/// possible and taken as a string otherwise; the key must already exist.
pub fn apply_override(root: &mut serde_json::Value, spec: &str) -> Result<()> {
    let (path, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::Usage(format!("override `{spec}` is not of the form key=value")))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| serde_json::Value::String(raw.to_string()));
    let keys: Vec<&str> = path.split('.').collect();
    let unknown = || Error::Usage(format!("unknown config key `{path}`"));
    let mut cur = root;
    for k in &keys[..keys.len() - 1] {
        cur = cur.get_mut(*k).ok_or_else(unknown)?;
    }
    let slot = cur.get_mut(keys[keys.len() - 1]).ok_or_else(unknown)?;
    *slot = value;
    Ok(())
}

static SCRATCH: AtomicUsize = AtomicUsize::new(0);

/// Runs `f` into `out.out`, or with `--check` into a scratch directory whose
/// files must match the existing ones byte for byte.
fn produce(out: &OutArgs, f: impl FnOnce(&Path) -> Result<()>) -> Result<()> {
    if !out.check {
        return f(&out.out);
    }
    if !out.out.is_dir() {
        return Err(Error::Dataset(format!("--check needs existing output in {}", out.out.display())));
    }
    let scratch = std::env::temp_dir().join(format!(
        "hdfd-check-{}-{}",
        std::process::id(),
        SCRATCH.fetch_add(1, Ordering::Relaxed)
    ));
    let result = f(&scratch).and_then(|_| compare_trees(&scratch, &out.out));
    let _ = fs::remove_dir_all(&scratch);
    let n = result?;
    println!("check passed: {n} files identical in {}", out.out.display());
    Ok(())
}

fn files_under(root: &Path, rel: &Path, acc: &mut Vec<PathBuf>) -> Result<()> {
    let dir = root.join(rel);
    let mut entries: Vec<_> = fs::read_dir(&dir)
        .map_err(|e| Error::io(&dir, e))?
        .collect::<std::io::Result<_>>()
        .map_err(|e| Error::io(&dir, e))?;
    entries.sort_by_key(|e| e.file_name());
    for e in entries {
        let r = rel.join(e.file_name());
        if e.path().is_dir() {
            files_under(root, &r, acc)?;
        } else {
            acc.push(r);
        }
    }
    Ok(())
}

fn compare_trees(fresh: &Path, existing: &Path) -> Result<usize> {
    let mut files = Vec::new();
    files_under(fresh, Path::new(""), &mut files)?;
    let mut bad = Vec::new();
    for rel in &files {
        let a = fs::read(fresh.join(rel)).map_err(|e| Error::io(fresh.join(rel), e))?;
        match fs::read(existing.join(rel)) {
            Ok(b) if a == b => {}
            Ok(_) => bad.push(format!("{} differs", rel.display())),
            Err(_) => bad.push(format!("{} is missing", rel.display())),
        }
    }
    if bad.is_empty() {
        Ok(files.len())
    } else {
        Err(Error::Dataset(format!("reproduction check failed: {}", bad.join(", "))))
    }
}

fn parse_list<T: std::str::FromStr<Err = Error> + Copy>(s: &str, all: &[T]) -> Result<Vec<T>> {
    if s == "all" {
        return Ok(all.to_vec());
    }
    s.split(',').map(|x| x.trim().parse()).collect()
}

fn run_name(run: &SimRun) -> String {
    format!("{}_{}_s{}.csv", run.mode_id, run.fault_id, run.seed)
}

fn simulate_parallel(c: &ExperimentConfig, jobs: Vec<(ModeId, FaultId, u64)>, n_threads: usize) -> Result<Vec<SimRun>> {
    let one = |&(m, f, s): &(ModeId, FaultId, u64)| cstr::simulate(&c.cstr, &ModeSpec::new(&c.cstr, m), &FaultSpec::table(f), s);
    let n_threads = n_threads.clamp(1, jobs.len().max(1));
    if n_threads == 1 {
        return jobs.iter().map(one).collect();
    }
    let chunk = jobs.len().div_ceil(n_threads);
    std::thread::scope(|scope| {
        let handles: Vec<_> = jobs
            .chunks(chunk)
            .map(|part| scope.spawn(move || part.iter().map(one).collect::<Result<Vec<_>>>()))
            .collect();
        let mut out = Vec::with_capacity(jobs.len());
        for h in handles {
            out.extend(h.join().expect("simulation thread panicked")?);
        }
        Ok(out)
    })
}

fn cmd_simulate(
    c: &ExperimentConfig,
    per_task: bool,
    mode: Option<&str>,
    fault: Option<&str>,
    jobs: usize,
    out: &Path,
) -> Result<()> {
    if per_task {
        let task = TaskConfig::cstr(&c.task)?;
        let mut plan = Vec::new();
        for (split, domain, label) in task.required_pairs() {
            let (m, f): (ModeId, FaultId) = (domain.parse()?, label.parse()?);
            let reps = match split {
                Split::Train => c.data.train_runs_per_class,
                Split::Test => c.data.test_runs_per_class,
            };
            for r in 0..reps {
                plan.push((split, (m, f, run_seed(c.seed, m.index(), f.index(), split, r))));
            }
        }
        let runs = simulate_parallel(c, plan.iter().map(|p| p.1).collect(), jobs)?;
        for ((split, _), run) in plan.iter().zip(&runs) {
            cstr::export_run(run, &out.join(split.as_str()).join(run_name(run)))?;
        }
        println!("wrote {} runs for task {} to {}", runs.len(), task.task_id, out.display());
        return Ok(());
    }
    let (Some(mode), Some(fault)) = (mode, fault) else {
        return Err(Error::Usage("simulate needs --mode and --fault, or --task".into()));
    };
    let modes = parse_list(mode, &ModeId::ALL)?;
    let faults = parse_list(fault, &FaultId::ALL)?;
    let plan: Vec<_> = modes
        .iter()
        .flat_map(|&m| faults.iter().map(move |&f| (m, f, c.seed)))
        .collect();
    let runs = simulate_parallel(c, plan, jobs)?;
    for run in &runs {
        cstr::export_run(run, &out.join(run_name(run)))?;
    }
    println!("wrote {} runs to {}", runs.len(), out.display());
    Ok(())
}

/// Loads `<dir>/train/*.csv` and `<dir>/test/*.csv` in file-name order.
pub fn load_runs(dir: &Path) -> Result<RunRegistry> {
    let mut reg = RunRegistry::new();
    for split in [Split::Train, Split::Test] {
        let sub = dir.join(split.as_str());
        if !sub.is_dir() {
            continue;
        }
        let mut files: Vec<PathBuf> = fs::read_dir(&sub)
            .map_err(|e| Error::io(&sub, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "csv"))
            .collect();
        files.sort();
        for f in files {
            let run = cstr::import_run(&f)?;
            reg.add(split, run, Some(f))?;
        }
    }
    Ok(reg)
}

/// Fails with the simulate commands that would fill every missing pair.
fn require_runs(c: &ExperimentConfig, task: &TaskConfig, reg: &RunRegistry, runs_dir: &Path) -> Result<()> {
    let missing: Vec<(Split, String, String)> = task
        .required_pairs()
        .into_iter()
        .filter(|(s, d, l)| !reg.runs().iter().any(|r| r.split == *s && &r.run.mode_id == d && &r.run.fault_id == l))
        .collect();
    if missing.is_empty() {
        return Ok(());
    }
    let mut msg = format!(
        "{} of {} (split, mode, fault) runs for task {} are missing in {}. Simulate them all with\n  hdfd simulate --task {} --seed {} --out {}\nor individually with",
        missing.len(),
        task.required_pairs().len(),
        task.task_id,
        runs_dir.display(),
        task.task_id,
        c.seed,
        runs_dir.display()
    );
    for (split, d, l) in &missing {
        let (m, f): (ModeId, FaultId) = (d.parse()?, l.parse()?);
        msg.push_str(&format!(
            "\n  hdfd simulate --mode {d} --fault {l} --seed {} --out {}",
            run_seed(c.seed, m.index(), f.index(), *split, 0),
            runs_dir.join(split.as_str()).display()
        ));
    }
    Err(Error::Dataset(msg))
}

fn cmd_build(c: &ExperimentConfig, runs: &Path, out: &Path) -> Result<()> {
    let task = TaskConfig::cstr(&c.task)?;
    let reg = load_runs(runs)?;
    require_runs(c, &task, &reg, runs)?;
    let (train, test, manifest) = build_task(&task, &reg, c.data.stride, c.seed)?;
    jsonio::write_json(&out.join("config.json"), c)?;
    datasets::write_windows(&out.join("train.csv"), &train)?;
    datasets::write_windows(&out.join("test.csv"), &test)?;
    datasets::write_manifest(&out.join("manifest.json"), &manifest)?;
    println!("task {}: {} training and {} test windows", task.task_id, train.len(), test.len());
    Ok(())
}

fn dataset_task(dataset: &Path) -> Result<TaskConfig> {
    TaskConfig::cstr(&read_manifest(&dataset.join("manifest.json"))?.task_id)
}

fn cmd_generate(c: &ExperimentConfig, dataset: &Path, out: &Path) -> Result<()> {
    let task = dataset_task(dataset)?;
    let train = read_windows(&dataset.join("train.csv"))?;
    let gen = GenConfig {
        dasg: c.ablation.dasg,
        iss: c.ablation.iss,
        iss_ratio: c.generation.iss_ratio,
        alpha: c.generation.alpha,
    };
    let g = samplegen::generate(&train, &task, &gen, generation_seed(c.seed))?;
    jsonio::write_json(&out.join("config.json"), c)?;
    datasets::write_windows(&out.join("generated.csv"), &g.windows)?;
    samplegen::write_stats(&out.join("stats.json"), &g.stats)?;
    println!("generated {} windows", g.windows.len());
    Ok(())
}

fn cmd_train(c: &ExperimentConfig, dataset: &Path, generated: Option<&Path>, out: &Path) -> Result<()> {
    let task = dataset_task(dataset)?;
    let real = read_windows(&dataset.join("train.csv"))?;
    let scaler = InputScaler::fit(&real, &task, c.input_space)?;
    let mut windows = real;
    if let Some(g) = generated {
        windows.extend(read_windows(&g.join("generated.csv"))?);
    }
    let data = Prepared::new(&windows, &scaler, &task)?;
    let v = windows.first().map_or(0, |w| w.n_vars);
    let arch = ArchConfig {
        sain: c.ablation.sain,
        tsam: c.ablation.tsam,
        ..ArchConfig::new(v, task.n_classes())
    };
    let mut model = Model::new(arch, init_seed(c.trainer.seed))?;
    let curve = train(&mut model, &data, &c.trainer)?;
    let manifest = serde_json::json!({
        "task": task.task_id,
        "ablation": c.ablation.label(),
        "config_hash": config_hash(c),
        "seed": c.seed,
        "epochs": c.trainer.epochs,
        "train_windows": data.len(),
    });
    jsonio::write_json(&out.join("config.json"), c)?;
    let mut lc = String::from("epoch,lr,loss\n");
    for e in &curve {
        lc.push_str(&format!("{},{},{}\n", e.epoch, e.lr, e.loss));
    }
    jsonio::write_text(&out.join("loss_curve.csv"), &lc)?;
    save_checkpoint(&out.join("checkpoint.json"), &ModelCheckpoint::from_model(&model, &task.categories, Some(scaler), manifest))?;
    if let Some(last) = curve.last() {
        println!("trained {} epochs, final loss {:.6}", curve.len(), last.loss);
    }
    Ok(())
}

fn cmd_evaluate(checkpoint: &Path, dataset: &Path, out: &Path) -> Result<MetricsSummary> {
    let ckpt = load_checkpoint(checkpoint)?;
    let task = dataset_task(dataset)?;
    if ckpt.categories != task.categories {
        return Err(Error::Dataset(format!(
            "checkpoint classes {:?} do not match task {} classes {:?}",
            ckpt.categories, task.task_id, task.categories
        )));
    }
    let scaler = ckpt
        .input_scaler
        .clone()
        .ok_or_else(|| Error::Dataset(format!("{} has no input scaler", checkpoint.display())))?;
    let model = ckpt.to_model()?;
    let test = read_windows(&dataset.join("test.csv"))?;
    let data = Prepared::new(&test, &scaler, &task)?;
    let report = evaluate(&model, &data, &test, &task, 512)?;
    let m = &ckpt.manifest;
    let summary = MetricsSummary {
        task: task.task_id.clone(),
        ablation: m["ablation"].as_str().unwrap_or("custom").to_string(),
        seed: m["seed"].as_u64().or_else(|| m["seeds"]["simulation"].as_u64()).unwrap_or(0),
        config_hash: m["config_hash"].as_str().unwrap_or_default().to_string(),
        acc: report.acc,
        mean_fdr: report.mean_fdr,
        mean_fpr: report.mean_fpr,
        n_test: report.n,
        categories: report.categories.clone(),
        fdr: report.fdr.clone(),
        fpr: report.fpr.clone(),
        per_domain: report.per_domain.clone(),
        final_loss: None,
    };
    jsonio::write_json(&out.join("metrics.json"), &summary)?;
    jsonio::write_text(&out.join("confusion.csv"), &report.confusion_csv())?;
    println!("ACC {:.4}\n{}", report.acc, report.class_table());
    Ok(summary)
}

fn cmd_experiment(c: &ExperimentConfig, runs: Option<&Path>, out: &Path) -> Result<()> {
    let reg = match runs {
        Some(dir) => {
            let task = TaskConfig::cstr(&c.task)?;
            let reg = load_runs(dir)?;
            require_runs(c, &task, &reg, dir)?;
            Some(reg)
        }
        None => None,
    };
    let r = run_experiment(c, reg.as_ref(), out)?;
    println!(
        "task {} ({}): ACC {:.4}\n{}",
        r.summary.task,
        r.summary.ablation,
        r.summary.acc,
        r.report.class_table()
    );
    Ok(())
}

fn cmd_report(inputs: &[PathBuf]) -> Result<String> {
    let reports: Vec<MetricsSummary> = inputs.iter().map(|p| load_summary(p)).collect::<Result<_>>()?;
    compare_reports(&reports)
}
