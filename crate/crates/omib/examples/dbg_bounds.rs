use omib::commands::split_dataset;
use omib::mine::{estimate_beta_bounds, MineConfig};
use omib::synth::{generate_sim_named, Dataset, SimConfig};
use std::time::Instant;

fn main() {
    let cfg = SimConfig::preset("sim1", 10_000, 7).unwrap();
    let ds = Dataset::Two(generate_sim_named(&cfg, "sim1").unwrap());
    let (train, _) = split_dataset(&ds).unwrap();
    for epochs in [30usize, 60] {
        let mc = MineConfig { epochs, ..MineConfig::with_seed(11) };
        let t = Instant::now();
        let views: Vec<&omib::mat::Matrix> = train.views.iter().collect();
        let b = estimate_beta_bounds(&views, &mc).unwrap();
        println!(
            "epochs {epochs}: H = {:?}, I = {:?}, m_l = {:.5e}, m_u = {:.5e}, mid = {:.5e} ({:.0}s)",
            b.h.iter().map(|v| (v * 100.0).round() / 100.0).collect::<Vec<_>>(),
            b.mi_clamped.iter().map(|p| (p.nats * 100.0).round() / 100.0).collect::<Vec<_>>(),
            b.m_l, b.m_u, 0.5 * (b.m_l + b.m_u),
            t.elapsed().as_secs_f64()
        );
    }
}
