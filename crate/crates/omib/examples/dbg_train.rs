use omib::commands::split_dataset;
use omib::model::{ModelConfig, OmibModel, TaskKind};
use omib::synth::{generate_sim_named, Dataset, SimConfig};
use omib::train::{main_train, BetaPolicy, TrainConfig};
use std::time::Instant;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let warm: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(5);
    let main_ep: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(25);
    let batch: usize = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(128);
    let beta: f64 = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(0.025);
    let preset = args.get(5).map(|s| s.as_str()).unwrap_or("sim1");

    let cfg = SimConfig::preset(preset, 10_000, 7).unwrap();
    let ds = Dataset::Two(generate_sim_named(&cfg, preset).unwrap());
    let (train, test) = split_dataset(&ds).unwrap();

    let dims: Vec<usize> = train.views.iter().map(|v| v.cols).collect();
    let mut model = OmibModel::new(ModelConfig::classification(dims, 2, 99)).unwrap();

    let tc = TrainConfig {
        warm_epochs: warm,
        main_epochs: main_ep,
        batch,
        lr: 1e-4,
        seed: 21,
        beta_policy: BetaPolicy::Fixed(beta),
        verbose: true,
        ..TrainConfig::default()
    };
    let t = Instant::now();
    let rec = main_train(&mut model, &train, Some(&test), None, &tc).unwrap();
    println!(
        "preset {preset} warm {warm} main {main_ep} batch {batch} beta {beta}: acc {:?} mean_r {:?} wall {:.0}s (total {:.0}s)",
        rec.final_metrics.accuracy,
        rec.final_metrics.mean_r,
        rec.wall_seconds,
        t.elapsed().as_secs_f64()
    );
    let _ = TaskKind::Svdd;
}
