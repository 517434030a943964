//! Tape autodiff in a nutshell: record a forward pass, run backward, and
//! verify the analytic gradients against central finite differences.
//!
//! Run: cargo run --release --example autodiff_basics

use omib::gradcheck::gradient_check;
use omib::mat::rng_from;
use omib::nn::{softmax_cross_entropy, Activation, Mlp, MlpConfig};
use omib::tensor::{ParamSet, Tape};

fn main() -> omib::Result<()> {
    // A scalar function of a parameter vector: loss = sum(x * x).
    let mut ps = ParamSet::new();
    let x = ps.add(&[3], vec![1.0, 2.0, 3.0]);

    let tape = Tape::new();
    let sess = ps.bind(&tape);
    let xt = sess.tensor(&ps, x);
    let loss = xt.mul(&xt)?.sum(None)?;
    println!("loss = sum(x^2) at x = [1, 2, 3]  ->  {}", loss.scalar_value());

    let grads = tape.backward(&loss)?;
    println!("d loss / d x = {:?}   (expected [2, 4, 6])\n", sess.grad(&grads, x).unwrap());

    // The same machinery drives whole networks. Check a micro MLP with a
    // cross-entropy loss against finite differences.
    let mut rng = rng_from(7);
    let mut ps = ParamSet::new();
    let mlp = Mlp::new(
        &mut ps,
        MlpConfig {
            widths: vec![4, 16, 3],
            activation: Activation::Gelu,
            final_activation: Activation::None,
        },
        &mut rng,
    )?;
    let inputs: Vec<f64> = (0..8).map(|i| (i as f64 * 0.7).sin()).collect();
    let labels = vec![0usize, 2];

    let max_rel_err = gradient_check(
        &mut ps,
        move |ps, tape, sess| {
            let x = tape.constant(&[2, 4], inputs.clone())?;
            let logits = mlp.forward(ps, sess, &x)?;
            softmax_cross_entropy(&logits, &labels)
        },
        1e-6,
        32,
        0,
    )?;
    println!("micro MLP + cross-entropy gradient check:");
    println!("max relative error vs central differences = {max_rel_err:.3e}");
    assert!(max_rel_err < 1e-5);
    println!("(all primitives verified the same way in the test suite)");
    Ok(())
}
