//! Build a two-modality Gaussian benchmark, inspect its block layout, and
//! slice oracle feature views out of the recorded structure.
//!
//! Run: cargo run --release --example generate_data

use omib::synth::{
    generate_sim_named, oracle_feature_view, split_train_test, FeatureView, SimConfig,
};

fn main() -> omib::Result<()> {
    // Imbalanced preset: modality 1 carries five times the specific
    // task-relevant width of modality 2.
    let cfg = SimConfig::preset("sim1", 10_000, 7)?;
    let ds = generate_sim_named(&cfg, "sim1")?;

    let l = &ds.layout;
    println!("n = {}", ds.n());
    println!(
        "x1 [{} wide] = [b0:{} | b1:{} | a0:{} | a1:{}]",
        l.x1_width(),
        l.d0p,
        l.d12,
        l.d0,
        l.d11
    );
    println!(
        "x2 [{} wide] = [b0:{} | b2:{} | a0:{} | a2:{}]",
        l.x2_width(),
        l.d0p,
        l.d22,
        l.d0,
        l.d21
    );

    let positives = ds.y.iter().filter(|&&v| v == 1).count();
    println!(
        "label balance: {:.1}% positive (hyperplane through the origin)",
        100.0 * positives as f64 / ds.n() as f64
    );

    println!("\noracle feature views (exact column slices):");
    for view in FeatureView::ALL {
        let m = oracle_feature_view(&ds, view);
        println!("  {:<20} width {}", view.name(), m.cols);
    }

    let (train, test) = split_train_test(&ds, 0.9)?;
    println!("\nseeded 9:1 split: {} train / {} test rows", train.n(), test.n());

    // Labels depend only on the a-blocks: flipping the hyperplane flips
    // every label.
    let neg: Vec<f64> = ds.delta.iter().map(|v| -v).collect();
    let flipped = ds.labels_for_delta(&neg);
    assert!(ds.y.iter().zip(&flipped).all(|(a, b)| a != b));
    println!("flipping the labeling hyperplane flips every label, as designed");
    Ok(())
}
