use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::cstr::CstrParams;
use crate::datasets::{build_task, simulate_task_runs, CSTR_TASKS};

fn window(domain: &str, label: &str, v: usize, f: impl FnMut(usize) -> f64) -> WindowSample {
    WindowSample {
        features: (0..v * WINDOW).map(f).collect(),
        n_vars: v,
        label: label.into(),
        domain: domain.into(),
        source: Source::Real,
    }
}

fn stats(mu: &[f64], sigma: &[f64]) -> DomainStats {
    DomainStats {
        domain_id: "X".into(),
        mu: mu.to_vec(),
        sigma: sigma.to_vec(),
        n_samples: 2,
    }
}

#[test]
fn constant_data_hits_the_floor() {
    let a = window("M1", "H", 2, |_| 5.0);
    let b = a.clone();
    let s = fit_domain_stats(&[&a, &b], "M1", &[1e-6, 2e-6]).unwrap();
    assert_eq!(s.mu, vec![5.0, 5.0]);
    assert_eq!(s.sigma, vec![1e-6, 2e-6]);
    assert!(matches!(fit_domain_stats(&[&a], "M1", &[1e-6; 2]), Err(Error::Generation(_))));
    assert!(matches!(fit_domain_stats(&[], "M1", &[1e-6; 2]), Err(Error::Generation(_))));
}

#[test]
fn fit_matches_brute_force_and_is_repeatable() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let ws: Vec<WindowSample> = (0..7)
        .map(|_| window("M1", "H", 3, |k| (k / WINDOW) as f64 * 10.0 + rng.random_range(-1.0..1.0)))
        .collect();
    let refs: Vec<&WindowSample> = ws.iter().collect();
    let s = fit_domain_stats(&refs, "M1", &[1e-9; 3]).unwrap();
    for j in 0..3 {
        let vals: Vec<f64> = ws.iter().flat_map(|w| w.var(j).to_vec()).collect();
        let m = vals.iter().sum::<f64>() / vals.len() as f64;
        let sd = (vals.iter().map(|x| (x - m).powi(2)).sum::<f64>() / vals.len() as f64).sqrt();
        assert!((s.mu[j] - m).abs() < 1e-12);
        assert!((s.sigma[j] - sd).abs() < 1e-12);
    }
    assert_eq!(s, fit_domain_stats(&refs, "M1", &[1e-9; 3]).unwrap());
}

#[test]
fn map_domain_examples() {
    let from = stats(&[0.0], &[1.0]);
    let to = stats(&[10.0], &[2.0]);
    let x = vec![1.0; WINDOW];
    assert!(map_domain(&x, &from, &to).unwrap().iter().all(|&v| v == 12.0));
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x: Vec<f64> = (0..WINDOW).map(|_| rng.random_range(-5.0..5.0)).collect();
    assert_eq!(map_domain(&x, &to, &to).unwrap(), x);
    let at_mean = vec![10.0; WINDOW];
    let back = map_domain(&at_mean, &to, &stats(&[-3.0], &[7.0])).unwrap();
    assert!(back.iter().all(|&v| (v + 3.0).abs() < 1e-12));
    assert!(matches!(map_domain(&x, &from, &stats(&[0.0, 0.0], &[1.0, 1.0])), Err(Error::Dimension(_))));
}

#[test]
fn latent_round_trip_and_affine_shape() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..50 {
        let s = stats(
            &[rng.random_range(-400.0..400.0), rng.random_range(-1.0..1.0)],
            &[rng.random_range(1e-6..10.0), rng.random_range(1e-3..1.0)],
        );
        let x: Vec<f64> = (0..2 * WINDOW).map(|_| rng.random_range(-500.0..500.0)).collect();
        let back = s.from_latent(&s.to_latent(&x).unwrap()).unwrap();
        for (a, b) in x.iter().zip(&back) {
            assert!((a - b).abs() <= 1e-9 * a.abs().max(1.0));
        }
        // per-variable Pearson correlation of input and mapped output is 1
        let to = stats(&[3.0, 4.0], &[0.5, 2.0]);
        let y = map_domain(&x, &s, &to).unwrap();
        for j in 0..2 {
            let (a, b) = (&x[j * WINDOW..(j + 1) * WINDOW], &y[j * WINDOW..(j + 1) * WINDOW]);
            let (ma, mb) = (a.iter().sum::<f64>() / 64.0, b.iter().sum::<f64>() / 64.0);
            let cov: f64 = a.iter().zip(b).map(|(p, q)| (p - ma) * (q - mb)).sum();
            let va: f64 = a.iter().map(|p| (p - ma).powi(2)).sum();
            let vb: f64 = b.iter().map(|q| (q - mb).powi(2)).sum();
            assert!((cov / (va * vb).sqrt() - 1.0).abs() < 1e-12);
        }
    }
}

fn task_data(id: &str) -> (TaskConfig, Vec<WindowSample>) {
    let task = TaskConfig::cstr(id).unwrap();
    let reg = simulate_task_runs(&CstrParams::default(), &task, 1, 0, 5).unwrap();
    let train_only = TaskConfig { test_categories: Default::default(), ..task.clone() };
    let (train, _, _) = build_task(&train_only, &reg, 16, 0).unwrap();
    (task, train)
}

#[test]
fn dasg_t4_maps_each_exclusive_window_once() {
    let (task, train) = task_data("T4");
    let stats = fit_all_domain_stats(&train, &task).unwrap();
    let gen = dasg_expand(&train, &task, &stats).unwrap();
    let m1_f1 = train.iter().filter(|w| w.domain == "M1" && w.label == "F1").count();
    let m2_f1 = gen.iter().filter(|w| w.domain == "M2" && w.label == "F1").count();
    assert_eq!(m1_f1, m2_f1);
    for w in &gen {
        assert!(!task.in_train(&w.domain, &w.label));
        assert_eq!(w.source, Source::Dasg);
    }
    // count formula: each fault window × number of domains missing its label
    let expect: usize = train
        .iter()
        .filter(|w| w.label != "H")
        .map(|w| task.modes.iter().filter(|d| !task.in_train(d, &w.label)).count())
        .sum();
    assert_eq!(gen.len(), expect);
}

#[test]
fn dasg_covers_the_full_grid_on_every_task() {
    for id in CSTR_TASKS {
        let (task, train) = task_data(id);
        let stats = fit_all_domain_stats(&train, &task).unwrap();
        let gen = dasg_expand(&train, &task, &stats).unwrap();
        let covered: BTreeSet<(String, String)> =
            train.iter().chain(&gen).map(|w| (w.domain.clone(), w.label.clone())).collect();
        for d in &task.modes {
            for c in &task.categories {
                assert!(covered.contains(&(d.clone(), c.clone())), "{id}: {d}/{c} uncovered");
            }
        }
    }
}

#[test]
fn dasg_requires_stats() {
    let (task, train) = task_data("T4");
    let mut stats = fit_all_domain_stats(&train, &task).unwrap();
    stats.remove("M2");
    assert!(matches!(dasg_expand(&train, &task, &stats), Err(Error::Generation(_))));
}

#[test]
fn lambda_distribution() {
    let beta = Beta::new(2.0, 2.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let draws: Vec<f64> = (0..100_000).map(|_| draw_lambda(&beta, &mut rng)).collect();
    let min = draws.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = draws.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mean = draws.iter().sum::<f64>() / draws.len() as f64;
    assert!(min >= 0.2 && max <= 1.0);
    assert!((mean - 0.6).abs() < 0.01, "{mean}");
}

#[test]
fn iss_labels_segment_and_determinism() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let pool = |rng: &mut ChaCha8Rng| -> Vec<Vec<f64>> {
        (0..5).map(|_| (0..WINDOW).map(|_| rng.random_range(-2.0..2.0)).collect()).collect()
    };
    let (f, h) = (pool(&mut rng), pool(&mut rng));
    let fr: Vec<&[f64]> = f.iter().map(Vec::as_slice).collect();
    let hr: Vec<&[f64]> = h.iter().map(Vec::as_slice).collect();
    let out = iss_synthesize(&fr, &hr, "F4", 200, 2.0, 9).unwrap();
    assert_eq!(out.len(), 200);
    for m in &out {
        assert_eq!(m.label, "F4");
        assert!((0.2..=1.0).contains(&m.lambda));
        let (a, b) = (fr[m.parents.0], hr[m.parents.1]);
        for k in 0..WINDOW {
            let (lo, hi) = (a[k].min(b[k]), a[k].max(b[k]));
            assert!(m.features[k] >= lo - 1e-12 && m.features[k] <= hi + 1e-12);
        }
    }
    assert_eq!(out, iss_synthesize(&fr, &hr, "F4", 200, 2.0, 9).unwrap());
    assert_eq!(mix(fr[0], hr[0], 1.0), f[0]);
    assert!(matches!(iss_synthesize(&[], &hr, "F4", 3, 2.0, 0), Err(Error::Generation(_))));
    assert!(iss_synthesize(&[], &hr, "F4", 0, 2.0, 0).unwrap().is_empty());
}

#[test]
fn generate_respects_switches_and_ratio() {
    let (task, train) = task_data("T4");
    let full = generate(&train, &task, &GenConfig::default(), 1).unwrap();
    let dasg = full.windows.iter().filter(|w| w.source == Source::Dasg).count();
    let iss = full.windows.iter().filter(|w| w.source == Source::Iss).count();
    assert!(dasg > 0 && iss > 0);
    let base = train.iter().chain(&full.windows).filter(|w| w.source != Source::Iss && w.label == "F1" && w.domain == "M2").count();
    let mixed = full.windows.iter().filter(|w| w.source == Source::Iss && w.label == "F1" && w.domain == "M2").count();
    assert_eq!(mixed, (0.5 * base as f64).round() as usize);

    let no_dasg = generate(&train, &task, &GenConfig { dasg: false, ..GenConfig::default() }, 1).unwrap();
    assert!(no_dasg.windows.iter().all(|w| w.source == Source::Iss && task.in_train(&w.domain, &w.label)));
    let none = generate(&train, &task, &GenConfig { dasg: false, iss: false, ..GenConfig::default() }, 1).unwrap();
    assert!(none.windows.is_empty());
    let again = generate(&train, &task, &GenConfig::default(), 1).unwrap();
    assert_eq!(again.windows, full.windows);
}

#[test]
fn stats_json_round_trip() {
    let (task, train) = task_data("T4");
    let stats = fit_all_domain_stats(&train, &task).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("domain_stats.json");
    write_stats(&p, &stats).unwrap();
    assert_eq!(read_stats(&p).unwrap(), stats);
}
