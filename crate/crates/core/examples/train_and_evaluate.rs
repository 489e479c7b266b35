//! A short end-to-end experiment: simulate, build, generate, train and
//! evaluate one task, writing the experiment directory.
//!
//! cargo run --release --example train_and_evaluate -- [TASK] [EPOCHS] [OUT_DIR]

use hdfd::trainer::{run_experiment, ExperimentConfig, Profile};

fn main() -> hdfd::Result<()> {
    let mut args = std::env::args().skip(1);
    let mut cfg = ExperimentConfig::default();
    Profile::Desk.apply(&mut cfg);
    cfg.task = args.next().unwrap_or_else(|| "T4".into());
    cfg.trainer.epochs = args.next().map_or(3, |e| e.parse().expect("EPOCHS is an integer"));
    cfg.seed = 1;
    cfg.trainer.seed = 1;
    let out = args.next().map_or_else(|| std::env::temp_dir().join("hdfd-experiment"), Into::into);

    let r = run_experiment(&cfg, None, &out)?;
    for e in &r.curve {
        println!("epoch {:>2}  lr {:.5}  loss {:.4}", e.epoch, e.lr, e.loss);
    }
    println!("\nACC {:.4}\n{}", r.report.acc, r.report.class_table());
    let worst = r.report.per_domain.iter().min_by(|a, b| a.accuracy.total_cmp(&b.accuracy)).unwrap();
    println!("weakest cell: {}/{} at {:.3}", worst.domain, worst.category, worst.accuracy);
    println!("artifacts in {}", out.display());
    Ok(())
}
