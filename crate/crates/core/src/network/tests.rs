use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::datasets::{Source, WindowSample, WINDOW};
use crate::diffcore::param_gradient_check;

fn rand_input(n: usize, v: usize, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn([n, v, 64], |_| rng.random_range(-2.0..2.0))
}

fn fill(p: &mut ParamSet, name: &str, value: f64) {
    p.get_mut(name).unwrap().data_mut().iter_mut().for_each(|x| *x = value);
}

/// Runs one stage on a fresh graph and returns its output value.
fn run_stage(
    arch: &ArchConfig,
    p: &ParamSet,
    x: &Tensor,
    stage: impl Fn(&mut Graph, &BoundParams, Var) -> Result<Var>,
) -> Tensor {
    let mut g = Graph::new();
    let b = p.bind(&mut g);
    let xv = g.input(x.clone());
    let _ = arch;
    let out = stage(&mut g, &b, xv).unwrap();
    g.value(out).clone()
}

#[test]
fn msdc_shape_and_branch_order() {
    let arch = ArchConfig::new(7, 10);
    let mut p = init_params(&arch, 1).unwrap();
    let x = rand_input(2, 7, 2);
    let out = run_stage(&arch, &p, &x, |g, b, x| msdc_forward(g, b, &arch, x));
    assert_eq!(out.shape(), &[2, 28, 64]);

    fill(&mut p, "msdc.k5.kernel", 0.0);
    let out = run_stage(&arch, &p, &x, |g, b, x| msdc_forward(g, b, &arch, x));
    for n in 0..2 {
        for c in 0..28 {
            let zero = (0..64).all(|t| out.at(&[n, c, t]) == 0.0);
            assert_eq!(zero, (7..14).contains(&c), "channel {c}");
        }
    }
    for k in [3, 7, 9] {
        fill(&mut p, &format!("msdc.k{k}.kernel"), 0.0);
    }
    let out = run_stage(&arch, &p, &x, |g, b, x| msdc_forward(g, b, &arch, x));
    assert!(out.data().iter().all(|&v| v == 0.0));
}

fn sain_as_in(arch: &ArchConfig) -> ParamSet {
    let mut p = init_params(arch, 3).unwrap();
    for b in ["gamma", "beta"] {
        for l in ["fc1", "fc2"] {
            fill(&mut p, &format!("sain.{b}.{l}.weight"), 0.0);
            fill(&mut p, &format!("sain.{b}.{l}.bias"), 0.0);
        }
    }
    fill(&mut p, "sain.gamma.fc2.bias", 1.0);
    p
}

#[test]
fn sain_reduces_to_instance_norm() {
    let arch = ArchConfig::new(3, 4);
    let p = sain_as_in(&arch);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let f = Tensor::from_fn([5, 12, 64], |_| rng.random_range(-30.0..50.0));
    let out = run_stage(&arch, &p, &f, |g, b, x| sain_forward(g, b, &arch, x));
    for row in out.data().chunks(64) {
        let m = row.iter().sum::<f64>() / 64.0;
        let v = row.iter().map(|x| (x - m).powi(2)).sum::<f64>() / 64.0;
        assert!(m.abs() < 1e-9, "mean {m}");
        assert!((v - 1.0).abs() < 1e-6, "var {v}");
    }
    let plain = ArchConfig { sain: SainMode::PlainIn, ..arch.clone() };
    let q = init_params(&plain, 3).unwrap();
    let out2 = run_stage(&plain, &q, &f, |g, b, x| sain_forward(g, b, &plain, x));
    assert_eq!(out.data(), out2.data());
}

#[test]
fn sain_constant_channel_outputs_beta() {
    let arch = ArchConfig::new(3, 4);
    let mut p = sain_as_in(&arch);
    fill(&mut p, "sain.beta.fc2.bias", 0.25);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut f = Tensor::from_fn([1, 12, 64], |_| rng.random_range(-1.0..1.0));
    for t in 0..64 {
        f.data_mut()[2 * 64 + t] = 7.0;
    }
    let out = run_stage(&arch, &p, &f, |g, b, x| sain_forward(g, b, &arch, x));
    for t in 0..64 {
        assert_eq!(out.at(&[0, 2, t]), 0.25);
    }
}

#[test]
fn sain_gradients_through_statistics() {
    let arch = ArchConfig::new(2, 3);
    for seed in 0..5 {
        let mut p = init_params(&arch, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        for b in ["gamma", "beta"] {
            for l in ["fc1", "fc2"] {
                p.get_mut(&format!("sain.{b}.{l}.bias"))
                    .unwrap()
                    .data_mut()
                    .iter_mut()
                    .for_each(|x| *x = rng.random_range(-0.5..0.5));
            }
        }
        let f = Tensor::from_fn([2, 8, 64], |_| rng.random_range(-1.0..1.0));
        let w = Tensor::from_fn([2, 8, 64], |_| rng.random_range(-1.0..1.0));
        let err = param_gradient_check(
            &p,
            |g, b| {
                let x = g.input(f.clone());
                let y = sain_forward(g, b, &arch, x)?;
                let wv = g.input(w.clone());
                let y = g.mul(y, wv)?;
                Ok(g.sum_all(y))
            },
            1e-5,
            16,
        )
        .unwrap();
        assert!(err < 1e-4, "{err}");
    }
}

#[test]
fn tsam_unit_attention_is_time_sum_and_map_is_rank_one() {
    let arch = ArchConfig::new(3, 4);
    let mut p = init_params(&arch, 6).unwrap();
    let f = rand_input(2, 6, 7);
    // random attention: a_TS has rank one
    {
        let mut g = Graph::new();
        let b = p.bind(&mut g);
        let x = g.input(f.clone());
        let out = tsam_forward(&mut g, &b, &arch, x).unwrap();
        let a = g.value(out.attention.unwrap());
        assert_eq!(a.shape(), &[2, 6, 64]);
        for n in 0..2 {
            for (c1, c2) in [(0, 1), (2, 5), (3, 4)] {
                for (t1, t2) in [(0, 63), (5, 17)] {
                    let minor = a.at(&[n, c1, t1]) * a.at(&[n, c2, t2]) - a.at(&[n, c1, t2]) * a.at(&[n, c2, t1]);
                    assert!(minor.abs() < 1e-12);
                }
            }
        }
    }
    for axis in ["temporal", "spatial"] {
        fill(&mut p, &format!("tsam.{axis}.conv.weight"), 0.0);
        fill(&mut p, &format!("tsam.{axis}.conv.bias"), 1.0);
    }
    let mut g = Graph::new();
    let b = p.bind(&mut g);
    let x = g.input(f.clone());
    let out = tsam_forward(&mut g, &b, &arch, x).unwrap();
    let fused = g.value(out.fused);
    for n in 0..2 {
        for c in 0..6 {
            let s: f64 = (0..64).map(|t| f.at(&[n, c, t])).sum();
            assert!((fused.at(&[n, c]) - s).abs() < 1e-12);
        }
    }
    // disabled attention is the same plain sum
    let off = ArchConfig { tsam: false, ..arch.clone() };
    let q = init_params(&off, 6).unwrap();
    let s = run_stage(&off, &q, &f, |g, b, x| Ok(tsam_forward(g, b, &off, x)?.fused));
    for (a, e) in s.data().iter().zip(fused.data()) {
        assert!((a - e).abs() < 1e-12);
    }
}

#[test]
fn tsam_gradients_through_both_branches() {
    let arch = ArchConfig::new(3, 4);
    let p = init_params(&arch, 8).unwrap();
    let f = rand_input(2, 6, 9);
    let err = param_gradient_check(
        &p,
        |g, b| {
            let x = g.input(f.clone());
            let fused = tsam_forward(g, b, &arch, x)?.fused;
            let sq = g.square(fused);
            Ok(g.sum_all(sq))
        },
        1e-5,
        usize::MAX,
    )
    .unwrap();
    assert!(err < 1e-3, "{err}");
}

#[test]
fn forward_shape_rows_and_permutation() {
    let m = Model::new(ArchConfig::new(7, 10), 11).unwrap();
    let x = rand_input(4, 7, 12);
    let p = m.forward(x.clone()).unwrap();
    assert_eq!(p.shape(), &[4, 10]);
    for row in p.data().chunks(10) {
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }
    let perm = [2, 0, 3, 1];
    let mut xd = Vec::new();
    for &i in &perm {
        xd.extend_from_slice(&x.data()[i * 448..(i + 1) * 448]);
    }
    let pp = m.forward(Tensor::new([4, 7, 64], xd).unwrap()).unwrap();
    for (r, &i) in perm.iter().enumerate() {
        assert_eq!(&pp.data()[r * 10..(r + 1) * 10], &p.data()[i * 10..(i + 1) * 10]);
    }
    assert_eq!(m.forward(x.clone()).unwrap(), p);
}

#[test]
fn loss_examples() {
    let onehot = Tensor::new([2, 10], (0..20).map(|i| if i == 3 || i == 17 { 1.0 } else { 0.0 }).collect()).unwrap();
    assert_eq!(loss(&onehot, &[3, 7]).unwrap(), 0.0);
    let uniform = Tensor::full([3, 10], 0.1);
    assert!((loss(&uniform, &[0, 5, 9]).unwrap() - 10f64.ln()).abs() < 1e-12);
    assert!(loss(&uniform, &[0, 5, 10]).is_err());
}

#[test]
fn end_to_end_gradient_check() {
    let arch = ArchConfig::new(3, 4);
    let p = init_params(&arch, 13).unwrap();
    let x = rand_input(2, 3, 14);
    let err = param_gradient_check(
        &p,
        |g, b| {
            let xv = g.input(x.clone());
            let logits = logits_forward(g, b, &arch, xv)?;
            g.softmax_cross_entropy(logits, &[1, 3])
        },
        1e-4,
        12,
    )
    .unwrap();
    assert!(err < 1e-3, "end-to-end relative error {err}");
}

#[test]
fn ablation_variants_build_and_run() {
    for (sain, tsam) in [(SainMode::PlainIn, true), (SainMode::None, true), (SainMode::Adaptive, false)] {
        let arch = ArchConfig { sain, tsam, ..ArchConfig::new(7, 10) };
        let m = Model::new(arch, 1).unwrap();
        let p = m.forward(rand_input(3, 7, 1)).unwrap();
        assert_eq!(p.shape(), &[3, 10]);
        assert!(!m.params.names().iter().any(|n| n.starts_with("sain") && sain != SainMode::Adaptive));
        assert!(!m.params.names().iter().any(|n| n.starts_with("tsam") && !tsam));
    }
}

#[test]
fn channel_bookkeeping() {
    let arch = ArchConfig::new(7, 10);
    let p = init_params(&arch, 0).unwrap();
    assert_eq!(p.get("msdc.k9.kernel").unwrap().shape(), &[7, 9]);
    assert_eq!(p.get("sain.gamma.fc1.weight").unwrap().shape(), &[28, 28]);
    assert_eq!(p.get("gru.weight_ih").unwrap().shape(), &[28, 42]);
    assert_eq!(p.get("tsam.temporal.avg.fc1.weight").unwrap().shape(), &[64, 4]);
    assert_eq!(p.get("tsam.spatial.std.fc1.weight").unwrap().shape(), &[14, 1]);
    assert_eq!(p.get("classifier.weight").unwrap().shape(), &[14, 10]);
    let mut bad = p.clone();
    *bad.get_mut("classifier.bias").unwrap() = Tensor::zeros([9]);
    assert!(matches!(Model::from_parts(arch.clone(), bad), Err(Error::Dimension(_))));
    assert!(ArchConfig { kernel_sizes: vec![3, 4], ..arch.clone() }.validate().is_err());
    let m = Model::new(arch, 0).unwrap();
    assert!(matches!(m.forward(rand_input(1, 6, 0)), Err(Error::Dimension(_))));
}

#[test]
fn non_finite_input_names_the_stage() {
    let m = Model::new(ArchConfig::new(3, 4), 0).unwrap();
    let mut x = rand_input(1, 3, 0);
    x.data_mut()[10] = f64::NAN;
    match m.forward(x).unwrap_err() {
        Error::Inference { stage, .. } => assert_eq!(stage, "msdc"),
        e => panic!("{e}"),
    }
}

#[test]
fn checkpoint_round_trip_is_bit_identical() {
    let m = Model::new(ArchConfig::new(3, 4), 21).unwrap();
    let cats: Vec<String> = ["H", "F1", "F2", "F3"].iter().map(|s| s.to_string()).collect();
    let ck = ModelCheckpoint::from_model(&m, &cats, None, serde_json::json!({"task": "toy"}));
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("checkpoint.json");
    save_checkpoint(&path, &ck).unwrap();
    let back = load_checkpoint(&path).unwrap();
    assert_eq!(back, ck);
    let m2 = back.to_model().unwrap();
    let x = rand_input(3, 3, 22);
    assert_eq!(m.forward(x.clone()).unwrap().data(), m2.forward(x).unwrap().data());

    let mut broken = ck.clone();
    broken.params.remove("gru.bias_hh");
    assert!(broken.to_model().is_err());
}

fn windows(seed: u64, n: usize, scale_var0: f64) -> Vec<WindowSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| WindowSample {
            features: (0..3 * WINDOW)
                .map(|k| {
                    let base = [300.0, 1.0, -4.0][k / WINDOW] + rng.random_range(-1.0..1.0);
                    if k < WINDOW { base * scale_var0 } else { base }
                })
                .collect(),
            n_vars: 3,
            label: if i % 2 == 0 { "H".into() } else { "F1".into() },
            domain: if i % 3 == 0 { "M1".into() } else { "M2".into() },
            source: Source::Real,
        })
        .collect()
}

#[test]
fn per_variable_rescaling_is_absorbed_by_the_scaler() {
    let task = crate::datasets::TaskConfig {
        task_id: "toy".into(),
        modes: vec!["M1".into(), "M2".into()],
        categories: vec!["H".into(), "F1".into()],
        train_categories: [("M1".into(), vec!["H".into(), "F1".into()]), ("M2".into(), vec!["H".into()])].into(),
        test_categories: Default::default(),
    };
    let m = Model::new(ArchConfig::new(3, 2), 5).unwrap();
    for space in [InputSpace::DomainLatent, InputSpace::TaskGlobal] {
        let a = windows(1, 12, 1.0);
        let b = windows(1, 12, 37.5);
        let sa = InputScaler::fit(&a, &task, space).unwrap();
        let sb = InputScaler::fit(&b, &task, space).unwrap();
        let idx: Vec<usize> = (0..12).collect();
        let pa = m.forward(sa.batch(&a, &idx).unwrap()).unwrap();
        let pb = m.forward(sb.batch(&b, &idx).unwrap()).unwrap();
        for (x, y) in pa.data().iter().zip(pb.data()) {
            assert!((x - y).abs() < 1e-9, "{space:?}: {x} vs {y}");
        }
    }
}
