//! Assemble a heterogeneous-domain task: which (mode, fault) pairs each
//! split needs, the windows they yield, and the training gaps.
//!
//! cargo run --example build_task -- [TASK]

use hdfd::cstr::CstrParams;
use hdfd::datasets::{build_task, class_balance_report, simulate_task_runs, TaskConfig};

fn main() -> hdfd::Result<()> {
    let id = std::env::args().nth(1).unwrap_or_else(|| "T4".into());
    let task = TaskConfig::cstr(&id)?;
    for (mode, cats) in &task.train_categories {
        println!("train {mode}: {}", cats.join(" "));
    }

    let registry = simulate_task_runs(&CstrParams::default(), &task, 1, 1, 0)?;
    let (train, test, manifest) = build_task(&task, &registry, 8, 0)?;
    println!("{} runs, {} train windows, {} test windows", manifest.runs.len(), train.len(), test.len());

    let counts = class_balance_report(&train);
    print!("\ntrain windows    ");
    for c in &task.categories {
        print!("{c:>5}");
    }
    println!();
    for mode in &task.modes {
        print!("{mode:<17}");
        for c in &task.categories {
            match counts.get(&(mode.clone(), c.clone())) {
                Some(n) => print!("{n:>5}"),
                None => print!("{:>5}", "-"),
            }
        }
        println!();
    }
    println!("\n'-' marks pairs the model never sees for real; the test split covers all of them.");
    Ok(())
}
