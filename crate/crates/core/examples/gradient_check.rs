//! Reverse-mode gradients against central differences, from one primitive
//! up to the full network loss.

use hdfd::diffcore::{finite_difference_check, param_gradient_check, Tensor};
use hdfd::network::{init_params, logits_forward, ArchConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> hdfd::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let x = Tensor::from_fn([3, 16], |_| rng.random_range(-1.0..1.0));
    let k = Tensor::from_fn([3, 5], |_| rng.random_range(-1.0..1.0));
    let b = Tensor::zeros([3]);

    let err = finite_difference_check(
        |g, x| {
            let kv = g.input(k.clone());
            let bv = g.input(b.clone());
            let y = g.depthwise_conv1d(x, kv, bv)?;
            let y = g.tanh(y);
            let (mu, sigma) = g.instance_stats(y);
            let s = g.mul(mu, sigma)?;
            Ok(g.sum_all(s))
        },
        &x,
        1e-5,
    )?;
    println!("conv -> tanh -> instance stats   max rel. error {err:.2e}");

    // A step of 1e-4 can straddle a ReLU kink in the attention FC layers for
    // some draws; 1e-6 stays on one side and is still far above roundoff.
    let arch = ArchConfig::new(3, 4);
    let params = init_params(&arch, 1)?;
    let input = Tensor::from_fn([2, 3, 64], |_| rng.random_range(-2.0..2.0));
    let err = param_gradient_check(
        &params,
        |g, b| {
            let xv = g.input(input.clone());
            let logits = logits_forward(g, b, &arch, xv)?;
            g.softmax_cross_entropy(logits, &[0, 2])
        },
        1e-6,
        6,
    )?;
    println!("full network loss ({} tensors)  max rel. error {err:.2e}", params.len());
    Ok(())
}
