use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Beta;

use crate::cstr::{self, CstrParams, FaultId, FaultSpec, ModeId, ModeSpec};
use crate::datasets::{Source, WindowSample, WINDOW};
use crate::diffcore::{finite_difference_check, param_gradient_check, Graph, Tensor};
use crate::error::{Error, Result};
use crate::network::{init_params, logits_forward, sain_forward, ArchConfig, SainMode};
use crate::samplegen::{draw_lambda, fit_domain_stats, map_domain};
use crate::trainer::compute_metrics;

type Check = (&'static str, fn() -> Result<f64>, f64);

fn rand_tensor(shape: &[usize], seed: u64, scale: f64, shift: f64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape.to_vec(), |_| shift + scale * rng.random_range(-1.5..1.5))
}

/// Worst FD error over a composite of the core primitives.
fn primitives() -> Result<f64> {
    let w = rand_tensor(&[4, 3], 2, 1.0, 0.0);
    finite_difference_check(
        |g, x| {
            let wv = g.input(w.clone());
            let h = g.matmul(x, wv)?;
            let h = g.tanh(h);
            let s = g.sigmoid(h);
            let p = g.softmax(s);
            let v = g.std_last(p);
            let q = g.square(h);
            let q = g.mean_last(q);
            let y = g.add(v, q)?;
            Ok(g.sum_all(y))
        },
        &rand_tensor(&[2, 4], 1, 1.0, 0.0),
        1e-5,
    )
}

fn end_to_end() -> Result<f64> {
    let arch = ArchConfig::new(3, 4);
    let p = init_params(&arch, 13)?;
    let x = rand_tensor(&[2, 3, WINDOW], 14, 1.0, 0.0);
    param_gradient_check(
        &p,
        |g, b| {
            let xv = g.input(x.clone());
            let logits = logits_forward(g, b, &arch, xv)?;
            g.softmax_cross_entropy(logits, &[1, 3])
        },
        1e-4,
        8,
    )
}

fn softmax_rows() -> Result<f64> {
    let mut g = Graph::new();
    let x = g.input(rand_tensor(&[50, 10], 3, 20.0, 0.0));
    let p = g.softmax(x);
    Ok(g.value(p).data().chunks(10).map(|r| (r.iter().sum::<f64>() - 1.0).abs()).fold(0.0, f64::max))
}

fn plain_in_means() -> Result<f64> {
    let arch = ArchConfig {
        sain: SainMode::PlainIn,
        ..ArchConfig::new(3, 4)
    };
    let p = init_params(&arch, 1)?;
    let mut g = Graph::new();
    let b = p.bind(&mut g);
    let f = g.input(rand_tensor(&[2, 12, WINDOW], 4, 3.0, 7.0));
    let y = sain_forward(&mut g, &b, &arch, f)?;
    let m = g.mean_last(y);
    Ok(g.value(m).data().iter().fold(0.0, |a, v| a.max(v.abs())))
}

fn windows(domain: &str, offset: f64, seed: u64) -> Vec<WindowSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..8)
        .map(|_| WindowSample {
            features: (0..3 * WINDOW).map(|i| offset * (1 + i / WINDOW) as f64 + rng.random_range(-1.0..1.0)).collect(),
            n_vars: 3,
            label: "H".into(),
            domain: domain.into(),
            source: Source::Real,
        })
        .collect()
}

fn dasg_round_trip() -> Result<f64> {
    let floor = [1e-9; 3];
    let (a, b) = (windows("M1", 5.0, 1), windows("M2", 50.0, 2));
    let sa = fit_domain_stats(&a.iter().collect::<Vec<_>>(), "M1", &floor)?;
    let sb = fit_domain_stats(&b.iter().collect::<Vec<_>>(), "M2", &floor)?;
    let x = &a[0].features;
    let back = map_domain(&map_domain(x, &sa, &sb)?, &sb, &sa)?;
    Ok(x.iter().zip(&back).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max))
}

fn lambda_mean() -> Result<f64> {
    let beta = Beta::new(2.0, 2.0).map_err(|e| Error::Config(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let draws: Vec<f64> = (0..100_000).map(|_| draw_lambda(&beta, &mut rng)).collect();
    if draws.iter().any(|l| !(0.2..=1.0).contains(l)) {
        return Ok(f64::INFINITY);
    }
    Ok((draws.iter().sum::<f64>() / draws.len() as f64 - 0.6).abs())
}

fn metric_oracle() -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let y: Vec<usize> = (0..60).map(|_| rng.random_range(0..10)).collect();
        let p: Vec<usize> = (0..60).map(|_| rng.random_range(0..10)).collect();
        let (_, acc, fdr, fpr) = compute_metrics(&p, &y, 10);
        let hits = p.iter().zip(&y).filter(|(a, b)| a == b).count();
        worst = worst.max((acc - hits as f64 / 60.0).abs());
        for l in 0..10 {
            let pos = y.iter().filter(|&&v| v == l).count();
            let tp = p.iter().zip(&y).filter(|&(&a, &b)| a == l && b == l).count();
            let fp = p.iter().zip(&y).filter(|&(&a, &b)| a == l && b != l).count();
            if pos > 0 {
                worst = worst.max((fdr[l].unwrap_or(f64::NAN) - tp as f64 / pos as f64).abs());
            }
            worst = worst.max((fpr[l].unwrap_or(f64::NAN) - fp as f64 / (60 - pos) as f64).abs());
        }
    }
    Ok(worst)
}

/// Largest |dT| per minute over noiseless healthy runs in every mode.
fn healthy_drift() -> Result<f64> {
    let p = CstrParams::default().noiseless();
    let mut worst = 0.0f64;
    for m in ModeId::ALL {
        let run = cstr::simulate(&p, &ModeSpec::new(&p, m), &FaultSpec::table(FaultId::H), 0)?;
        let t = run.column_by_name("T").expect("T is monitored by default");
        worst = worst.max(t.windows(2).map(|w| (w[1] - w[0]).abs()).fold(0.0, f64::max));
    }
    Ok(worst)
}

const CHECKS: [Check; 8] = [
    ("primitive gradients (FD rel. error)", primitives, 1e-4),
    ("end-to-end gradient, v=3 N=2", end_to_end, 1e-3),
    ("softmax row sums |Σ−1|", softmax_rows, 1e-12),
    ("plain IN channel means", plain_in_means, 1e-9),
    ("DASG round trip", dasg_round_trip, 1e-9),
    ("ISS λ mean − 0.6", lambda_mean, 1e-2),
    ("metrics vs recount", metric_oracle, 1e-12),
    ("healthy |dT| per min", healthy_drift, 1e-2),
];

pub fn run_all() -> Result<()> {
    let mut failed = Vec::new();
    for (name, f, tol) in CHECKS {
        let (ok, detail) = match f() {
            Ok(v) => (v < tol, format!("{v:.2e} (< {tol:e})")),
            Err(e) => (false, e.to_string()),
        };
        println!("{} {name}: {detail}", if ok { "PASS" } else { "FAIL" });
        if !ok {
            failed.push(name);
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Error::Training(format!("self-check failed: {}", failed.join(", "))))
    }
}
