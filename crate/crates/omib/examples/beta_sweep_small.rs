//! The achievability property in miniature: accuracy holds up while the
//! redundancy weight stays at or below the estimated upper bound and
//! collapses when it is pushed far past it.
//!
//! Run: cargo run --release --example beta_sweep_small

use omib::commands::split_dataset;
use omib::mine::{estimate_beta_bounds, MineConfig};
use omib::model::{ModelConfig, OmibModel};
use omib::synth::{generate_sim, Dataset, SimConfig};
use omib::train::{main_train, BetaPolicy, TrainConfig};

fn main() -> omib::Result<()> {
    let cfg = SimConfig {
        d0: 40,
        d0p: 40,
        d11: 100,
        d12: 40,
        d21: 20,
        d22: 40,
        n: 4000,
        seed: 13,
        train_fraction: 0.9,
    };
    let ds = Dataset::Two(generate_sim(&cfg)?);
    let (train, test) = split_dataset(&ds)?;

    let mine = MineConfig {
        epochs: 50,
        batch: 1024,
        ..MineConfig::with_seed(19)
    };
    let views: Vec<&omib::mat::Matrix> = train.views.iter().collect();
    let bounds = estimate_beta_bounds(&views, &mine)?;
    let (lower, upper) = bounds.range(2)?;
    println!("estimated interval: [{lower:.4e}, {upper:.4e}]\n");

    let grid = [0.25 * lower, 0.5 * (lower + upper), upper, 10.0 * upper, 10.0];
    println!("{:>12} {:>10} {:>8}", "beta", "accuracy", "<= upper");
    for (i, beta) in grid.iter().enumerate() {
        let dims: Vec<usize> = train.views.iter().map(|v| v.cols).collect();
        let mut model = OmibModel::new(ModelConfig::classification(dims, 2, 100 + i as u64))?;
        let tc = TrainConfig {
            warm_epochs: 3,
            main_epochs: 10,
            batch: 256,
            lr: 1e-4,
            seed: 200 + i as u64,
            beta_policy: BetaPolicy::Fixed(*beta),
            ..TrainConfig::default()
        };
        let record = main_train(&mut model, &train, Some(&test), Some(&bounds), &tc)?;
        println!(
            "{:>12.4e} {:>10.4} {:>8}",
            beta,
            record.final_metrics.accuracy.unwrap(),
            *beta <= upper
        );
    }
    println!("\n(the full grid over the published presets runs via `omib sweep`)");
    Ok(())
}
