use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::error::Error;

fn rand_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn(shape.to_vec(), |_| rng.random_range(-1.0..1.0))
}

fn t(shape: &[usize], data: &[f64]) -> Tensor {
    Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
}

// -------------------------------------------------------------- tensor

#[test]
fn tensor_rejects_bad_shapes() {
    assert!(matches!(Tensor::new([2, 3], vec![0.0; 5]), Err(Error::Dimension(_))));
    assert!(matches!(Tensor::new([0, 3], vec![]), Err(Error::Dimension(_))));
    let mut x = Tensor::zeros([2, 2]);
    assert!(x.grad().is_none());
    x.set_requires_grad(true);
    assert_eq!(x.grad().unwrap().len(), 4);
}

// -------------------------------------------------------------- affine

#[test]
fn affine_identity_and_bias() {
    let mut g = Graph::new();
    let x = g.input(t(&[1, 2], &[1.0, 2.0]));
    let w = g.input(Tensor::identity(2));
    let b = g.input(Tensor::zeros([2]));
    let y = g.affine(x, w, b).unwrap();
    assert_eq!(g.value(y).data(), &[1.0, 2.0]);

    let w0 = g.input(Tensor::zeros([2, 2]));
    let b34 = g.input(t(&[2], &[3.0, 4.0]));
    let y = g.affine(x, w0, b34).unwrap();
    assert_eq!(g.value(y).data(), &[3.0, 4.0]);
}

#[test]
fn affine_shape_mismatch_names_both_shapes() {
    let mut g = Graph::new();
    let x = g.input(Tensor::zeros([2, 3]));
    let w = g.input(Tensor::zeros([4, 2]));
    let err = g.matmul(x, w).unwrap_err().to_string();
    assert!(err.contains("[2, 3]") && err.contains("[4, 2]"), "{err}");
}

#[test]
fn affine_weight_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..20 {
        let x = rand_tensor(&[3, 4], &mut rng);
        let w = rand_tensor(&[4, 5], &mut rng);
        let b = rand_tensor(&[5], &mut rng);
        let err = finite_difference_check(
            |g, wv| {
                let xv = g.input(x.clone());
                let bv = g.input(b.clone());
                let y = g.affine(xv, wv, bv)?;
                Ok(g.sum_all(y))
            },
            &w,
            1e-4,
        )
        .unwrap();
        assert!(err < 1e-6, "W gradient rel. error {err}");
        let err = finite_difference_check(
            |g, xv| {
                let wv = g.input(w.clone());
                let bv = g.input(b.clone());
                let y = g.affine(xv, wv, bv)?;
                let y = g.tanh(y);
                Ok(g.sum_all(y))
            },
            &x,
            1e-4,
        )
        .unwrap();
        assert!(err < 1e-6, "x gradient rel. error {err}");
    }
}

// -------------------------------------------------------- depthwise conv

#[test]
fn depthwise_identity_kernel() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = rand_tensor(&[3, 10], &mut rng);
    let mut g = Graph::new();
    let xv = g.input(x.clone());
    let k = g.input(Tensor::full([3, 1], 1.0));
    let b = g.input(Tensor::zeros([3]));
    let y = g.depthwise_conv1d(xv, k, b).unwrap();
    assert_eq!(g.value(y), &x);
}

#[test]
fn depthwise_constant_channel_zero_padding() {
    let c = 2.5;
    let mut g = Graph::new();
    let xv = g.input(Tensor::full([1, 6], c));
    let k = g.input(Tensor::full([1, 3], 1.0));
    let b = g.input(Tensor::zeros([1]));
    let y = g.depthwise_conv1d(xv, k, b).unwrap();
    assert_eq!(g.value(y).data(), &[2.0 * c, 3.0 * c, 3.0 * c, 3.0 * c, 3.0 * c, 2.0 * c]);
}

#[test]
fn depthwise_matches_direct_convolution() {
    // Independent oracle: explicit zero-padded signal and a plain dot product.
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (c, len, k) = (3, 12, 5);
    let x = rand_tensor(&[2, c, len], &mut rng);
    let ker = rand_tensor(&[c, k], &mut rng);
    let bias = rand_tensor(&[c], &mut rng);
    let mut g = Graph::new();
    let (xv, kv, bv) = (g.input(x.clone()), g.input(ker.clone()), g.input(bias.clone()));
    let y = g.depthwise_conv1d(xv, kv, bv).unwrap();
    for n in 0..2 {
        for ch in 0..c {
            let mut padded = vec![0.0; k / 2];
            padded.extend((0..len).map(|i| x.at(&[n, ch, i])));
            padded.extend(vec![0.0; k / 2]);
            for i in 0..len {
                let expect: f64 = bias.at(&[ch])
                    + (0..k).map(|j| ker.at(&[ch, j]) * padded[i + j]).sum::<f64>();
                assert!((g.value(y).at(&[n, ch, i]) - expect).abs() < 1e-14);
            }
        }
    }
}

#[test]
fn depthwise_even_kernel_is_config_error() {
    let mut g = Graph::new();
    let xv = g.input(Tensor::zeros([2, 8]));
    let k = g.input(Tensor::zeros([2, 4]));
    let b = g.input(Tensor::zeros([2]));
    assert!(matches!(g.depthwise_conv1d(xv, k, b), Err(Error::Config(_))));
}

#[test]
fn depthwise_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..20 {
        let x = rand_tensor(&[2, 3, 9], &mut rng);
        let ker = rand_tensor(&[3, 3], &mut rng);
        let bias = rand_tensor(&[3], &mut rng);
        let wts = rand_tensor(&[2, 3, 9], &mut rng);
        let obj = |g: &mut Graph, y: Var| -> Result<Var> {
            let w = g.input(wts.clone());
            let p = g.mul(y, w)?;
            Ok(g.sum_all(p))
        };
        let ek = finite_difference_check(
            |g, kv| {
                let (xv, bv) = (g.input(x.clone()), g.input(bias.clone()));
                let y = g.depthwise_conv1d(xv, kv, bv)?;
                obj(g, y)
            },
            &ker,
            1e-4,
        )
        .unwrap();
        let ex = finite_difference_check(
            |g, xv| {
                let (kv, bv) = (g.input(ker.clone()), g.input(bias.clone()));
                let y = g.depthwise_conv1d(xv, kv, bv)?;
                obj(g, y)
            },
            &x,
            1e-4,
        )
        .unwrap();
        let eb = finite_difference_check(
            |g, bv| {
                let (xv, kv) = (g.input(x.clone()), g.input(ker.clone()));
                let y = g.depthwise_conv1d(xv, kv, bv)?;
                obj(g, y)
            },
            &bias,
            1e-4,
        )
        .unwrap();
        assert!(ek < 1e-6 && ex < 1e-6 && eb < 1e-6, "{ek} {ex} {eb}");
    }
}

// ------------------------------------------------------------------- GRU

fn gru_params(cin: usize, h: usize, seed: u64) -> ParamSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = ParamSet::new();
    init_gru(&mut p, "gru", cin, h, &mut rng).unwrap();
    // non-zero biases so every term is exercised
    for name in ["gru.bias_ih", "gru.bias_hh"] {
        let b = p.get_mut(name).unwrap();
        for v in b.data_mut() {
            *v = rng.random_range(-0.5..0.5);
        }
    }
    p
}

#[test]
fn gru_zero_weights_stay_at_zero() {
    let mut p = ParamSet::new();
    p.insert("gru.weight_ih", Tensor::zeros([3, 6])).unwrap();
    p.insert("gru.weight_hh", Tensor::zeros([2, 6])).unwrap();
    p.insert("gru.bias_ih", Tensor::zeros([6])).unwrap();
    p.insert("gru.bias_hh", Tensor::zeros([6])).unwrap();
    let mut g = Graph::new();
    let b = p.bind(&mut g);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = g.input(rand_tensor(&[3, 7], &mut rng));
    let out = gru_forward(&mut g, x, &GruVars::from_bound(&b, "gru"), None).unwrap();
    assert_eq!(g.shape(out), &[2, 7]);
    assert!(g.value(out).data().iter().all(|&v| v == 0.0));
}

/// Plain-loop GRU cell, written independently of the graph.
fn hand_gru_cell(p: &ParamSet, x: &[f64], h: &[f64]) -> Vec<f64> {
    let wih = p.get("gru.weight_ih").unwrap();
    let whh = p.get("gru.weight_hh").unwrap();
    let bih = p.get("gru.bias_ih").unwrap().data();
    let bhh = p.get("gru.bias_hh").unwrap().data();
    let hid = h.len();
    let gate = |col: usize| -> (f64, f64) {
        let gi: f64 = bih[col] + (0..x.len()).map(|i| x[i] * wih.at(&[i, col])).sum::<f64>();
        let gh: f64 = bhh[col] + (0..hid).map(|i| h[i] * whh.at(&[i, col])).sum::<f64>();
        (gi, gh)
    };
    let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
    (0..hid)
        .map(|j| {
            let (ri, rh) = gate(j);
            let (zi, zh) = gate(hid + j);
            let (ni, nh) = gate(2 * hid + j);
            let r = sig(ri + rh);
            let z = sig(zi + zh);
            let n = (ni + r * nh).tanh();
            (1.0 - z) * n + z * h[j]
        })
        .collect()
}

#[test]
fn gru_single_step_matches_hand_cell() {
    let p = gru_params(4, 3, 6);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let x = rand_tensor(&[4, 1], &mut rng);
    let h0 = rand_tensor(&[3], &mut rng);
    let mut g = Graph::new();
    let b = p.bind(&mut g);
    let (xv, hv) = (g.input(x.clone()), g.input(h0.clone()));
    let out = gru_forward(&mut g, xv, &GruVars::from_bound(&b, "gru"), Some(hv)).unwrap();
    let expect = hand_gru_cell(&p, x.data(), h0.data());
    for (a, e) in g.value(out).data().iter().zip(&expect) {
        assert!((a - e).abs() < 1e-14, "{a} vs {e}");
    }
}

#[test]
fn gru_unroll_matches_hand_cell_over_batch() {
    let p = gru_params(2, 3, 8);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let x = rand_tensor(&[2, 2, 5], &mut rng);
    let mut g = Graph::new();
    let b = p.bind(&mut g);
    let xv = g.input(x.clone());
    let out = gru_forward(&mut g, xv, &GruVars::from_bound(&b, "gru"), None).unwrap();
    assert_eq!(g.shape(out), &[2, 3, 5]);
    for n in 0..2 {
        let mut h = vec![0.0; 3];
        for step in 0..5 {
            let xt: Vec<f64> = (0..2).map(|c| x.at(&[n, c, step])).collect();
            h = hand_gru_cell(&p, &xt, &h);
            for j in 0..3 {
                assert!((g.value(out).at(&[n, j, step]) - h[j]).abs() < 1e-13);
            }
        }
    }
}

#[test]
fn gru_gradients_through_three_steps() {
    for seed in 0..20 {
        let p = gru_params(3, 2, 100 + seed);
        let mut rng = ChaCha8Rng::seed_from_u64(200 + seed);
        let x = rand_tensor(&[2, 3, 3], &mut rng);
        let wts = rand_tensor(&[2, 2, 3], &mut rng);
        let loss = |g: &mut Graph, b: &BoundParams, xv: Var| -> Result<Var> {
            let out = gru_forward(g, xv, &GruVars::from_bound(b, "gru"), None)?;
            let w = g.input(wts.clone());
            let y = g.mul(out, w)?;
            Ok(g.sum_all(y))
        };
        let err = param_gradient_check(
            &p,
            |g, b| {
                let xv = g.input(x.clone());
                loss(g, b, xv)
            },
            1e-4,
            usize::MAX,
        )
        .unwrap();
        assert!(err < 1e-4, "param grad error {err}");
        let err = finite_difference_check(
            |g, xv| {
                let b = p.bind(g);
                loss(g, &b, xv)
            },
            &x,
            1e-4,
        )
        .unwrap();
        assert!(err < 1e-4, "input grad error {err}");
    }
}

#[test]
fn gru_rejects_bad_initial_state() {
    let p = gru_params(2, 3, 1);
    let mut g = Graph::new();
    let b = p.bind(&mut g);
    let xv = g.input(Tensor::zeros([2, 4]));
    let h0 = g.input(Tensor::zeros([4]));
    assert!(gru_forward(&mut g, xv, &GruVars::from_bound(&b, "gru"), Some(h0)).is_err());
}

// --------------------------------------------------------- instance stats

#[test]
fn instance_stats_simple_cases() {
    let mut g = Graph::new();
    let x = g.input(t(&[2, 2], &[5.0, 5.0, 1.0, 3.0]));
    let (mu, sd) = g.instance_stats(x);
    assert_eq!(g.value(mu).data(), &[5.0, 2.0]);
    assert_eq!(g.value(sd).data(), &[0.0, 1.0]);
}

#[test]
fn instance_stats_match_two_pass_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let x = Tensor::from_fn([4, 64], |_| rng.random_range(-3.0..7.0));
    let mut g = Graph::new();
    let xv = g.input(x.clone());
    let (mu, sd) = g.instance_stats(xv);
    for c in 0..4 {
        let row: Vec<f64> = (0..64).map(|i| x.at(&[c, i])).collect();
        let mut m = 0.0;
        for v in &row {
            m += v;
        }
        m /= 64.0;
        let mut ss = 0.0;
        for v in &row {
            ss += (v - m) * (v - m);
        }
        let s = (ss / 64.0).sqrt();
        assert!((g.value(mu).data()[c] - m).abs() < 1e-12);
        assert!((g.value(sd).data()[c] - s).abs() < 1e-12);
    }
}

#[test]
fn reduction_and_broadcast_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..20 {
        let x = rand_tensor(&[2, 3, 6], &mut rng);
        let v = Tensor::from_fn([2, 3], |_| rng.random_range(0.5..1.5));
        let w = rand_tensor(&[2, 3, 6], &mut rng);
        let err = finite_difference_check(
            |g, xv| {
                let (mu, sd) = g.instance_stats(xv);
                let var = g.var_last(xv);
                let vv = g.input(v.clone());
                let a = g.sub_last(xv, mu)?;
                let den = g.add_scalar(var, 1e-3);
                let den = g.sqrt(den);
                let a = g.div_last(a, den)?;
                let a = g.mul_last(a, sd)?;
                let a = g.add_last(a, vv)?;
                let a = g.div_last(a, vv)?;
                let ww = g.input(w.clone());
                let a = g.mul(a, ww)?;
                let a = g.square(a);
                Ok(g.sum_all(a))
            },
            &x,
            1e-4,
        )
        .unwrap();
        assert!(err < 1e-4, "{err}");
    }
}

#[test]
fn shape_ops_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..20 {
        let x = rand_tensor(&[2, 3, 4], &mut rng);
        let w = rand_tensor(&[2, 3, 8], &mut rng);
        let err = finite_difference_check(
            |g, xv| {
                let tr = g.swap_last_two(xv)?; // [2,4,3]
                let s = g.select(tr, 1)?; // [2,3]
                let s2 = g.slice_last(xv, 1, 2)?; // [2,3,2]
                let st = g.stack_last(&[s, s])?; // [2,3,2]
                let c = g.concat(&[s2, st, xv], 2)?; // [2,3,8]
                let sm = g.sum_last(tr); // [2,4]
                let smr = g.reshape(sm, &[2, 4])?;
                let o = g.outer(s, smr)?; // [2,3,4]
                let o = g.sigmoid(o);
                let o = g.relu(o);
                let ww = g.input(w.clone());
                let c = g.mul(c, ww)?;
                let c = g.scale(c, 0.7);
                let a = g.sum_all(c);
                let b = g.sum_all(o);
                let r = g.add(a, b)?;
                Ok(r)
            },
            &x,
            1e-4,
        )
        .unwrap();
        assert!(err < 1e-4, "{err}");
    }
}

// -------------------------------------------------- softmax / cross entropy

#[test]
fn softmax_examples() {
    let mut g = Graph::new();
    let x = g.input(t(&[2, 2], &[0.0, 0.0, 1000.0, 0.0]));
    let p = g.softmax(x);
    let d = g.value(p).data();
    assert_eq!(&d[..2], &[0.5, 0.5]);
    assert!((d[2] - 1.0).abs() < 1e-15 && d[3] >= 0.0 && d[3] < 1e-300);
    assert!(g.value(p).all_finite());
}

#[test]
fn softmax_rows_sum_to_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for _ in 0..50 {
        let x = Tensor::from_fn([8, 10], |_| rng.random_range(-50.0..50.0));
        let mut g = Graph::new();
        let xv = g.input(x);
        let p = g.softmax(xv);
        for row in g.value(p).data().chunks(10) {
            assert!(row.iter().all(|&v| v >= 0.0));
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}

#[test]
fn cross_entropy_examples() {
    let mut g = Graph::new();
    let p = g.input(t(&[2, 3], &[0.0, 1.0, 0.0, 1.0, 0.0, 0.0]));
    let l = g.cross_entropy(p, &[1, 0]).unwrap();
    assert_eq!(g.scalar_value(l), 0.0);

    let u = g.input(Tensor::full([3, 4], 0.25));
    let l = g.cross_entropy(u, &[0, 3, 2]).unwrap();
    assert!((g.scalar_value(l) - 4f64.ln()).abs() < 1e-15);

    let z = g.input(Tensor::zeros([3, 4]));
    let l = g.softmax_cross_entropy(z, &[0, 3, 2]).unwrap();
    assert!((g.scalar_value(l) - 4f64.ln()).abs() < 1e-15);
}

#[test]
fn cross_entropy_label_out_of_range() {
    let mut g = Graph::new();
    let p = g.input(Tensor::full([2, 3], 1.0 / 3.0));
    assert!(matches!(g.cross_entropy(p, &[0, 3]), Err(Error::Index(_))));
    assert!(matches!(g.softmax_cross_entropy(p, &[5, 0]), Err(Error::Index(_))));
}

#[test]
fn fused_softmax_cross_entropy_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    for _ in 0..20 {
        let logits = Tensor::from_fn([5, 4], |_| rng.random_range(-3.0..3.0));
        let labels: Vec<usize> = (0..5).map(|_| rng.random_range(0..4)).collect();
        let mut g = Graph::new();
        let lv = g.param(&logits);
        let loss = g.softmax_cross_entropy(lv, &labels).unwrap();
        let grads = g.backward(loss).unwrap();
        let p = super::graph::softmax_rows(logits.data(), 4);
        for i in 0..5 {
            for j in 0..4 {
                let onehot = if labels[i] == j { 1.0 } else { 0.0 };
                let expect = (p[i * 4 + j] - onehot) / 5.0;
                assert!((grads.get(lv).unwrap()[i * 4 + j] - expect).abs() < 1e-15);
            }
        }
        let err = finite_difference_check(
            |g, lv| g.softmax_cross_entropy(lv, &labels),
            &logits,
            1e-4,
        )
        .unwrap();
        assert!(err < 1e-6, "{err}");
        // unfused route agrees
        let err = finite_difference_check(
            |g, lv| {
                let p = g.softmax(lv);
                g.cross_entropy(p, &labels)
            },
            &logits,
            1e-4,
        )
        .unwrap();
        assert!(err < 1e-6, "{err}");
    }
}

// ------------------------------------------------------------------ Adam

fn one_param(value: f64, grad: f64) -> ParamSet {
    let mut p = ParamSet::new();
    p.insert("w", Tensor::full([2, 2], value)).unwrap();
    p.get_mut("w").unwrap().accumulate_grad(&[grad; 4]);
    p
}

#[test]
fn adam_zero_gradient_is_identity() {
    let mut p = one_param(0.3, 0.0);
    let mut s = AdamState::new(&p);
    for _ in 0..5 {
        adam_step(&mut p, &mut s, 0.1).unwrap();
    }
    assert!(p.get("w").unwrap().data().iter().all(|&v| v == 0.3));
    assert_eq!(s.step_count, 5);
}

#[test]
fn adam_first_step_moves_by_lr() {
    // t = 1: m = 0.1, v = 0.001, m̂ = 1, v̂ = 1, update = lr · 1/(1 + ε)
    let mut p = one_param(1.0, 1.0);
    let mut s = AdamState::new(&p);
    adam_step(&mut p, &mut s, 0.1).unwrap();
    let expect = 1.0 - 0.1 / (1.0 + 1e-8);
    for &v in p.get("w").unwrap().data() {
        assert!((v - expect).abs() < 1e-15);
    }
    assert!((s.first_moment()[0][0] - 0.1).abs() < 1e-15);
    assert!((s.second_moment()[0][0] - 0.001).abs() < 1e-15);
}

#[test]
fn adam_is_deterministic() {
    let run = || {
        let mut p = one_param(0.5, -0.7);
        let mut s = AdamState::new(&p);
        for _ in 0..3 {
            adam_step(&mut p, &mut s, 0.01).unwrap();
        }
        (p, s)
    };
    assert_eq!(run(), run());
}

#[test]
fn adam_rejects_non_finite_gradient() {
    let mut p = one_param(0.5, f64::NAN);
    let before = p.clone();
    let mut s = AdamState::new(&p);
    let err = adam_step(&mut p, &mut s, 0.01).unwrap_err();
    assert!(matches!(err, Error::Training(ref m) if m.contains("`w`")));
    assert_eq!(p.get("w").unwrap().data(), before.get("w").unwrap().data());
    assert_eq!(s.step_count, 0);
}

// ------------------------------------------------------ FD harness itself

#[test]
fn fd_check_on_linear_and_quadratic() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let x = rand_tensor(&[3, 3], &mut rng);
    let err = finite_difference_check(|g, v| Ok(g.sum_all(v)), &x, 1e-4).unwrap();
    assert!(err < 1e-10, "{err}");

    let x = t(&[2], &[1.0, 2.0]);
    let mut g = Graph::new();
    let v = g.param(&x);
    let sq = g.square(v);
    let s = g.sum_all(sq);
    assert_eq!(g.backward(s).unwrap().get(v).unwrap(), &[2.0, 4.0]);
    let err = finite_difference_check(
        |g, v| {
            let sq = g.square(v);
            Ok(g.sum_all(sq))
        },
        &x,
        1e-4,
    )
    .unwrap();
    assert!(err < 1e-8, "{err}");
    assert!(finite_difference_check(|g, v| Ok(g.sum_all(v)), &x, 0.0).is_err());
}

#[test]
fn forward_is_bit_deterministic() {
    let p = gru_params(3, 4, 21);
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let x = rand_tensor(&[4, 3, 16], &mut rng);
    let run = || {
        let mut g = Graph::new();
        let b = p.bind(&mut g);
        let xv = g.input(x.clone());
        let out = gru_forward(&mut g, xv, &GruVars::from_bound(&b, "gru"), None).unwrap();
        g.value(out).clone()
    };
    assert_eq!(run().data(), run().data());
}
