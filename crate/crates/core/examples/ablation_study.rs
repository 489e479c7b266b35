//! Full model against the five ablations on one task, summarized with
//! `compare_reports`. Each variant trains from the same runs and seeds.
//!
//! cargo run --release --example ablation_study -- [EPOCHS] [VARIANTS...]

use hdfd::cstr::CstrParams;
use hdfd::datasets::{simulate_task_runs, TaskConfig};
use hdfd::trainer::{compare_reports, run_experiment, Ablation, ExperimentConfig, Profile};

fn main() -> hdfd::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let epochs: usize = args.first().map_or(2, |e| e.parse().expect("EPOCHS is an integer"));
    let variants: Vec<String> = if args.len() > 1 {
        args[1..].to_vec()
    } else {
        Ablation::PRESETS.iter().map(|(n, _)| n.to_string()).collect()
    };

    let mut base = ExperimentConfig::default();
    Profile::Desk.apply(&mut base);
    base.trainer.epochs = epochs;
    base.seed = 1;
    base.trainer.seed = 1;
    let task = TaskConfig::cstr(&base.task)?;
    let runs = simulate_task_runs(&CstrParams::default(), &task, base.data.train_runs_per_class, 1, base.seed)?;

    let mut reports = Vec::new();
    for v in &variants {
        let cfg = ExperimentConfig { ablation: v.parse()?, ..base.clone() };
        let out = std::env::temp_dir().join(format!("hdfd-ablation-{v}"));
        let r = run_experiment(&cfg, Some(&runs), &out)?;
        println!("{v:<5} ACC {:.4}", r.summary.acc);
        reports.push(r.summary);
    }
    print!("\n{}", compare_reports(&reports)?);
    Ok(())
}
