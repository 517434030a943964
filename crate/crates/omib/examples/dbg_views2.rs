use omib::mat::derive_seed;
use omib::nn::{Activation, Mlp, MlpConfig};
use omib::optim::{Adam, AdamConfig};
use omib::synth::{generate_sim_named, oracle_feature_view, split_train_test, FeatureView, SimConfig};
use omib::tensor::{ParamSet, Tape};
use omib::train::Targets;
use omib::mat::{permutation, rng_from};
use omib::nn::softmax_cross_entropy;
use std::time::Instant;

fn train_head(xt: &omib::mat::Matrix, yt: &[usize], xe: &omib::mat::Matrix, ye: &[usize],
              act: Activation, epochs: usize, batch: usize, lr: f64, seed: u64) -> f64 {
    let mut ps = ParamSet::new();
    let mut rng = rng_from(derive_seed(seed, "init"));
    let head = Mlp::new(&mut ps, MlpConfig {
        widths: vec![xt.cols, 512, 2], activation: act, final_activation: Activation::None,
    }, &mut rng).unwrap();
    let mut adam = Adam::new(AdamConfig::with_lr(lr), &ps);
    let mut trng = rng_from(derive_seed(seed, "train"));
    for _ in 0..epochs {
        let order = permutation(xt.rows, &mut trng);
        for idx in order.chunks(batch) {
            let xb = xt.take_rows(idx);
            let yb: Vec<usize> = idx.iter().map(|&i| yt[i]).collect();
            let tape = Tape::new();
            let sess = ps.bind(&tape);
            let logits = head.forward(&ps, &sess, &tape.matrix(&xb).unwrap()).unwrap();
            let loss = softmax_cross_entropy(&logits, &yb).unwrap();
            let grads = tape.backward(&loss).unwrap();
            adam.step(&mut ps, &sess, &grads).unwrap();
        }
    }
    let tape = Tape::new();
    let sess = ps.bind(&tape);
    let logits = head.forward(&ps, &sess, &tape.matrix(xe).unwrap()).unwrap();
    let preds = omib::model::argmax_rows(&logits.to_matrix());
    let hits = preds.iter().zip(ye).filter(|(a, b)| *a == *b).count();
    let _ = Targets::None;
    hits as f64 / ye.len() as f64
}

fn main() {
    let cfg = SimConfig::preset("sim1", 10_000, 7).unwrap();
    let ds = generate_sim_named(&cfg, "sim1").unwrap();
    let (train, test) = split_train_test(&ds, 0.9).unwrap();
    let yt: Vec<usize> = train.y.iter().map(|&v| v as usize).collect();
    let ye: Vec<usize> = test.y.iter().map(|&v| v as usize).collect();
    let xt = oracle_feature_view(&train, FeatureView::AuthenticOptimal);
    let xe = oracle_feature_view(&test, FeatureView::AuthenticOptimal);

    for (act, name) in [(Activation::Gelu, "gelu"), (Activation::None, "linear")] {
        for (epochs, batch) in [(40usize, 256usize), (100, 256), (100, 512)] {
            let t = Instant::now();
            let acc = train_head(&xt, &yt, &xe, &ye, act, epochs, batch, 1e-4, 5);
            println!("authentic {name} e{epochs} b{batch}: acc {acc:.4} ({:.0}s)", t.elapsed().as_secs_f64());
        }
    }
}
