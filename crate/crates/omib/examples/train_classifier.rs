//! End-to-end two-phase training on a downscaled imbalanced benchmark:
//! warm-up of the per-modality branches against Gaussian noise, then joint
//! main training of the fusion block with the dynamic per-modality weight.
//!
//! Run: cargo run --release --example train_classifier

use omib::commands::split_dataset;
use omib::model::{ModelConfig, OmibModel};
use omib::synth::{generate_sim, Dataset, SimConfig};
use omib::train::{main_train, BetaPolicy, TrainConfig};

fn main() -> omib::Result<()> {
    // Downscaled sim1-like dims so the example finishes in well under a
    // minute; the full presets live behind the `omib` binary.
    let cfg = SimConfig {
        d0: 40,
        d0p: 40,
        d11: 100,
        d12: 40,
        d21: 20,
        d22: 40,
        n: 4000,
        seed: 5,
        train_fraction: 0.9,
    };
    let ds = Dataset::Two(generate_sim(&cfg)?);
    let (train, test) = split_dataset(&ds)?;

    let dims: Vec<usize> = train.views.iter().map(|v| v.cols).collect();
    let mut model = OmibModel::new(ModelConfig::classification(dims, 2, 17))?;

    let tc = TrainConfig {
        warm_epochs: 5,
        main_epochs: 15,
        batch: 256,
        lr: 1e-4,
        seed: 23,
        beta_policy: BetaPolicy::Fixed(0.03),
        ..TrainConfig::default()
    };
    let record = main_train(&mut model, &train, Some(&test), None, &tc)?;

    println!("warm-up branch losses per epoch:");
    for e in &record.warm_epochs {
        println!("  epoch {:>2}: {:?}", e.epoch, e.trb_loss);
    }
    println!("\nmain training (fusion loss | head | per-modality KL | r):");
    for e in record.main_epochs.iter().step_by(3) {
        println!(
            "  epoch {:>3}: {:.4} | {:.4} | {:?} | {:?}",
            e.epoch,
            e.omf_loss,
            e.head_loss,
            e.kl.iter().map(|v| (v * 100.0).round() / 100.0).collect::<Vec<_>>(),
            e.r_mean.iter().map(|v| (v * 100.0).round() / 100.0).collect::<Vec<_>>(),
        );
    }
    println!(
        "\ntest accuracy = {:.4}, run-averaged r = {:?}, beta = {}",
        record.final_metrics.accuracy.unwrap(),
        record.final_metrics.mean_r,
        record.beta
    );
    // every logged dynamic weight stays inside the open interval (0, 2)
    assert!(record.r_steps.iter().flatten().all(|&r| r > 0.0 && r < 2.0));
    Ok(())
}
