//! Fill the training gaps of a task with cross-domain mapping (DASG) and
//! healthy/fault interpolation (ISS).

use hdfd::cstr::CstrParams;
use hdfd::datasets::{build_task, class_balance_report, simulate_task_runs, Source, TaskConfig};
use hdfd::samplegen::{draw_lambda, generate, map_domain, GenConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::Beta;

fn main() -> hdfd::Result<()> {
    let task = TaskConfig::cstr("T4")?;
    let registry = simulate_task_runs(&CstrParams::default(), &task, 1, 1, 0)?;
    let (train, _, _) = build_task(&task, &registry, 8, 0)?;

    let g = generate(&train, &task, &GenConfig::default(), 11)?;
    for (d, st) in &g.stats {
        let t = train[0].n_vars.min(4);
        println!("{d}: healthy mean of T = {:.3}, std = {:.4} (from {} windows)", st.mu[t - 1], st.sigma[t - 1], st.n_samples);
    }
    let count = |s: Source| g.windows.iter().filter(|w| w.source == s).count();
    println!("generated {} DASG and {} ISS windows", count(Source::Dasg), count(Source::Iss));

    let mut all = train.clone();
    all.extend(g.windows.iter().cloned());
    let covered = class_balance_report(&all).len();
    println!("(mode, category) cells covered: {} real-only, {covered} after generation, {} needed",
        class_balance_report(&train).len(), task.modes.len() * task.n_classes());

    // Mapping there and back is the identity.
    let w = train.iter().find(|w| w.label == "F1").unwrap();
    let there = map_domain(&w.features, &g.stats["M1"], &g.stats["M2"])?;
    let back = map_domain(&there, &g.stats["M2"], &g.stats["M1"])?;
    let err = w.features.iter().zip(&back).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    println!("M1 -> M2 -> M1 round trip error {err:.2e}");

    let beta = Beta::new(2.0, 2.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let l: Vec<f64> = (0..100_000).map(|_| draw_lambda(&beta, &mut rng)).collect();
    let mean = l.iter().sum::<f64>() / l.len() as f64;
    let (lo, hi) = l.iter().fold((1.0f64, 0.0f64), |(a, b), &x| (a.min(x), b.max(x)));
    println!("ISS weight over 1e5 draws: min {lo:.4}, max {hi:.4}, mean {mean:.4}");
    Ok(())
}
