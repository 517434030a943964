use omib::mine::{analytic_gaussian_mi, correlated_gaussian_pair, estimate_mi, MineConfig};

fn main() {
    for seed in [7u64, 42, 1001] {
        for rho in [0.0f64, 0.5, 0.9] {
            let (x, z) = correlated_gaussian_pair(10_000, rho, 12345 + seed);
            let cfg = MineConfig { lr: 1e-3, ..MineConfig::with_seed(seed) };
            let est = estimate_mi(&x, &z, &cfg).unwrap();
            let truth = analytic_gaussian_mi(rho, 1).unwrap();
            println!("seed {seed} rho={rho}: err {:+.4}", est - truth);
        }
    }
}
