use omib::synth::{generate_sim_named, oracle_feature_view, split_train_test, FeatureView, SimConfig};
use omib::train::{train_feature_classifier, HeadTrainConfig};
use std::time::Instant;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let epochs: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(40);
    let batch: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(256);
    let preset = args.get(3).map(|s| s.as_str()).unwrap_or("sim1");

    let cfg = SimConfig::preset(preset, 10_000, 7).unwrap();
    let ds = generate_sim_named(&cfg, preset).unwrap();
    let (train, test) = split_train_test(&ds, 0.9).unwrap();
    let y_train: Vec<usize> = train.y.iter().map(|&v| v as usize).collect();
    let y_test: Vec<usize> = test.y.iter().map(|&v| v as usize).collect();

    let t_all = Instant::now();
    for view in FeatureView::ALL {
        let xt = oracle_feature_view(&train, view);
        let xe = oracle_feature_view(&test, view);
        let hc = HeadTrainConfig { epochs, batch, lr: 1e-4, hidden: 512, seed: 1000 + view as u64 };
        let t = Instant::now();
        let acc = train_feature_classifier(&xt, &y_train, &xe, &y_test, 2, &hc).unwrap();
        println!("{preset} {} (w={}): acc {acc:.4} ({:.0}s)", view.name(), xt.cols, t.elapsed().as_secs_f64());
    }
    println!("all views: {:.0}s at {epochs} epochs batch {batch}", t_all.elapsed().as_secs_f64());
}
