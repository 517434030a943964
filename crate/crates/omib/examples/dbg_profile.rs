use omib::commands::split_dataset;
use omib::mat::{rng_from, Matrix};
use omib::model::{ModelConfig, OmibModel};
use omib::nn::{kl_diag_gauss_std, reparameterize, softmax_cross_entropy};
use omib::optim::{Adam, AdamConfig};
use omib::synth::{generate_sim_named, Dataset, SimConfig};
use omib::tensor::{Tape, Tensor};
use omib::train::Targets;
use rand::Rng;
use rand_distr::StandardNormal;
use std::time::Instant;

fn main() {
    let b: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(256);
    let cfg = SimConfig::preset("sim1", 10_000, 7).unwrap();
    let ds = Dataset::Two(generate_sim_named(&cfg, "sim1").unwrap());
    let (train, _) = split_dataset(&ds).unwrap();
    let dims: Vec<usize> = train.views.iter().map(|v| v.cols).collect();
    let model = OmibModel::new(ModelConfig::classification(dims, 2, 99)).unwrap();
    let mut params = model.params.clone();
    let mut adam = Adam::new(AdamConfig::with_lr(1e-4), &params);

    let idx: Vec<usize> = (0..b).collect();
    let v1 = train.views[0].take_rows(&idx);
    let v2 = train.views[1].take_rows(&idx);
    let y: Vec<usize> = match &train.targets { Targets::Classes(y) => y[..b].to_vec(), _ => vec![] };
    let mut rng = rng_from(3);
    let e1 = Matrix::new(b, 256, (0..b*256).map(|_| rng.sample::<f64,_>(StandardNormal)).collect());
    let e2 = Matrix::new(b, 256, (0..b*256).map(|_| rng.sample::<f64,_>(StandardNormal)).collect());

    let reps = 20;
    let mut t_fwd = 0.0; let mut t_bwd = 0.0; let mut t_adam = 0.0; let mut t_bind = 0.0;
    for _ in 0..reps {
        let t0 = Instant::now();
        let tape = Tape::new();
        let sess = params.bind(&tape);
        // force-bind all params like a real step does lazily
        let x1 = tape.matrix(&v1).unwrap();
        let x2 = tape.matrix(&v2).unwrap();
        t_bind += t0.elapsed().as_secs_f64();

        let t1 = Instant::now();
        let z1 = model.encoders[0].forward(&params, &sess, &x1).unwrap();
        let z2 = model.encoders[1].forward(&params, &sess, &x2).unwrap();
        let o1 = model.vaes[0].forward(&params, &sess, &z1).unwrap();
        let o2 = model.vaes[1].forward(&params, &sess, &z2).unwrap();
        let kl1 = kl_diag_gauss_std(&o1.mu, &o1.log_var).unwrap().mean(None).unwrap();
        let kl2 = kl_diag_gauss_std(&o2.mu, &o2.log_var).unwrap().mean(None).unwrap();
        let ze1 = reparameterize(&o1, &tape.matrix(&e1).unwrap()).unwrap();
        let ze2 = reparameterize(&o2, &tape.matrix(&e2).unwrap()).unwrap();
        let xi = model.can.forward(&params, &sess, &[&ze1, &ze2]).unwrap();
        let fp = model.fused_head.forward(&params, &sess, &xi).unwrap();
        let mut loss = softmax_cross_entropy(&fp, &y).unwrap();
        loss = loss.add(&kl1.add(&kl2.scale(0.5).unwrap()).unwrap().scale(0.025).unwrap()).unwrap();
        for m in 0..2 {
            let z = if m == 0 { &z1 } else { &z2 };
            let joined = Tensor::concat(&[z, &xi], 1).unwrap();
            let preds = model.trb_heads[m].forward(&params, &sess, &joined).unwrap();
            loss = loss.add(&softmax_cross_entropy(&preds, &y).unwrap()).unwrap();
        }
        t_fwd += t1.elapsed().as_secs_f64();

        let t2 = Instant::now();
        let grads = tape.backward(&loss).unwrap();
        t_bwd += t2.elapsed().as_secs_f64();

        let t3 = Instant::now();
        adam.step(&mut params, &sess, &grads).unwrap();
        t_adam += t3.elapsed().as_secs_f64();
    }
    let n = reps as f64;
    println!("batch {b}: bind {:.1}ms fwd {:.1}ms bwd {:.1}ms adam {:.1}ms total {:.1}ms/step",
        1e3*t_bind/n, 1e3*t_fwd/n, 1e3*t_bwd/n, 1e3*t_adam/n,
        1e3*(t_bind+t_fwd+t_bwd+t_adam)/n);
    let steps_per_epoch = (9000 + b - 1) / b;
    println!("=> {:.1}s/epoch at {} steps", (t_bind+t_fwd+t_bwd+t_adam)/n * steps_per_epoch as f64, steps_per_epoch);
}
