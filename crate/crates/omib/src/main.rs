use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use omib::commands::{self, DimOverrides, FileConfig, GridSpec};
use omib::mine::MineConfig;
use omib::model::TaskKind;
use omib::train::{BetaPolicy, RMode, TrainConfig};
use omib::Error;

/// Multimodal information-bottleneck experiment driver.
#[derive(Parser)]
#[command(name = "omib", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset (two- or three-modality presets).
    Gen(GenArgs),
    /// Estimate entropies/MIs on the training split and derive beta bounds.
    Bounds(BoundsArgs),
    /// Warm-up plus main training; writes a run record and optional model.
    Train(TrainArgs),
    /// One training per beta grid point; writes a CSV of accuracies.
    Sweep(SweepArgs),
    /// Feature-ablation table: oracle views vs the trained pipeline.
    Table1(Table1Args),
}

#[derive(Args)]
struct CommonArgs {
    /// Flat dotted-key JSON config; flags override file values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Global seed (falls back to config `seed`, then $OMIB_SEED, then 42).
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct GenArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// sim1 | sim2 | sim3 | sim3mod | custom
    #[arg(long)]
    preset: String,
    #[arg(long)]
    n: Option<usize>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// File stem (defaults to the preset name).
    #[arg(long)]
    name: Option<String>,
    #[arg(long)]
    d0: Option<usize>,
    #[arg(long)]
    d0p: Option<usize>,
    #[arg(long)]
    d11: Option<usize>,
    #[arg(long)]
    d12: Option<usize>,
    #[arg(long)]
    d21: Option<usize>,
    #[arg(long)]
    d22: Option<usize>,
    #[arg(long)]
    train_fraction: Option<f64>,
}

#[derive(Args)]
struct MineArgs {
    #[arg(long)]
    mine_hidden: Option<usize>,
    #[arg(long)]
    mine_epochs: Option<usize>,
    #[arg(long)]
    mine_batch: Option<usize>,
    #[arg(long)]
    mine_lr: Option<f64>,
    #[arg(long)]
    mine_eval_batches: Option<usize>,
}

impl MineArgs {
    fn build(&self, file: &FileConfig, seed: u64) -> MineConfig {
        let d = MineConfig::default();
        MineConfig {
            hidden: file.usize_or("mine.hidden", self.mine_hidden, d.hidden),
            epochs: file.usize_or("mine.epochs", self.mine_epochs, d.epochs),
            batch: file.usize_or("mine.batch", self.mine_batch, d.batch),
            lr: file.f64_or("mine.lr", self.mine_lr, d.lr),
            seed,
            eval_batches: file.usize_or(
                "mine.eval-batches",
                self.mine_eval_batches,
                d.eval_batches,
            ),
        }
    }
}

#[derive(Args)]
struct BoundsArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Dataset stem (path without extension).
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    mine: MineArgs,
}

#[derive(Args)]
struct TrainFlags {
    #[arg(long)]
    warm_epochs: Option<usize>,
    #[arg(long)]
    main_epochs: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// midpoint | sample | <number>
    #[arg(long)]
    beta: Option<String>,
    /// dynamic | fixed:<value>
    #[arg(long)]
    r_mode: Option<String>,
    #[arg(long)]
    mc_samples: Option<usize>,
    /// Cut fusion-loss gradients at the encoder outputs.
    #[arg(long)]
    stop_grad_encoders: bool,
    #[arg(long)]
    svdd_lambda: Option<f64>,
    /// Per-epoch progress on stderr.
    #[arg(long)]
    verbose: bool,
}

fn parse_beta(s: &str) -> Result<BetaPolicy, Error> {
    match s {
        "midpoint" => Ok(BetaPolicy::MidpointOfBounds),
        "sample" => Ok(BetaPolicy::SampleInBounds),
        other => other
            .parse::<f64>()
            .map(BetaPolicy::Fixed)
            .map_err(|_| Error::Config(format!("bad --beta '{other}'"))),
    }
}

fn parse_r_mode(s: &str) -> Result<RMode, Error> {
    if s == "dynamic" {
        return Ok(RMode::Dynamic);
    }
    if let Some(v) = s.strip_prefix("fixed:") {
        return v
            .parse::<f64>()
            .map(RMode::Fixed)
            .map_err(|_| Error::Config(format!("bad --r-mode '{s}'")));
    }
    Err(Error::Config(format!("bad --r-mode '{s}'")))
}

impl TrainFlags {
    fn build(&self, file: &FileConfig, seed: u64) -> Result<TrainConfig, Error> {
        let d = TrainConfig::default();
        let beta_str = match &self.beta {
            Some(s) => s.clone(),
            None => file.str_or("train.beta", None, "midpoint"),
        };
        let r_str = match &self.r_mode {
            Some(s) => s.clone(),
            None => file.str_or("train.r-mode", None, "dynamic"),
        };
        Ok(TrainConfig {
            warm_epochs: file.usize_or("train.warm-epochs", self.warm_epochs, d.warm_epochs),
            main_epochs: file.usize_or("train.main-epochs", self.main_epochs, d.main_epochs),
            batch: file.usize_or("train.batch", self.batch, d.batch),
            lr: file.f64_or("train.lr", self.lr, d.lr),
            seed,
            beta_policy: parse_beta(&beta_str)?,
            mc_samples: file.usize_or("train.mc-samples", self.mc_samples, d.mc_samples),
            r_mode: parse_r_mode(&r_str)?,
            stop_grad_encoders: file.bool_or("train.stop-grad-encoders", self.stop_grad_encoders),
            svdd_lambda: file.f64_or("train.svdd-lambda", self.svdd_lambda, d.svdd_lambda),
            verbose: self.verbose,
        })
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long)]
    data: PathBuf,
    /// Bounds JSON from the `bounds` command (required for midpoint/sample
    /// beta policies).
    #[arg(long)]
    bounds: Option<PathBuf>,
    /// Run-record output path.
    #[arg(long)]
    out: PathBuf,
    /// Optional model stem to save the trained parameters.
    #[arg(long)]
    model_out: Option<PathBuf>,
    /// classification | svdd
    #[arg(long, default_value = "classification")]
    task: String,
    #[command(flatten)]
    flags: TrainFlags,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    bounds: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// `default` or comma-separated beta values.
    #[arg(long)]
    grid: Option<String>,
    /// Concurrent sweep points.
    #[arg(long)]
    jobs: Option<usize>,
    /// Share one warm-up across all sweep points.
    #[arg(long)]
    share_warmup: bool,
    #[command(flatten)]
    flags: TrainFlags,
}

#[derive(Args)]
struct Table1Args {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    bounds: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    jobs: Option<usize>,
    #[command(flatten)]
    flags: TrainFlags,
}

fn parse_task(s: &str) -> Result<TaskKind, Error> {
    match s {
        "classification" => Ok(TaskKind::Classification { classes: 2 }),
        "svdd" => Ok(TaskKind::Svdd),
        other => Err(Error::Config(format!("unknown task '{other}'"))),
    }
}

fn run() -> Result<(), Error> {
    match Cli::parse().command {
        Command::Gen(a) => {
            let file = FileConfig::load(a.common.config.as_deref())?;
            let seed = commands::resolve_seed(a.common.seed, &file);
            let n = file.usize_or("gen.n", a.n, 10_000);
            let dims = DimOverrides {
                d0: a.d0,
                d0p: a.d0p,
                d11: a.d11,
                d12: a.d12,
                d21: a.d21,
                d22: a.d22,
                train_fraction: a.train_fraction,
            };
            commands::cmd_gen(&a.preset, n, seed, &a.out, a.name.as_deref(), &dims)?;
            Ok(())
        }
        Command::Bounds(a) => {
            let file = FileConfig::load(a.common.config.as_deref())?;
            let seed = commands::resolve_seed(a.common.seed, &file);
            let cfg = a.mine.build(&file, seed);
            let out = commands::cmd_bounds(&a.data, &cfg, &a.out)?;
            println!(
                "m_l = {:.6e}, m_u = {:.6e}{}",
                out.bounds.m_l,
                out.bounds.m_u,
                match (out.bounds.m_l2, out.bounds.m_u2) {
                    (Some(l), Some(u)) => format!(", m_l2 = {l:.6e}, m_u2 = {u:.6e}"),
                    _ => String::new(),
                }
            );
            Ok(())
        }
        Command::Train(a) => {
            let file = FileConfig::load(a.common.config.as_deref())?;
            let seed = commands::resolve_seed(a.common.seed, &file);
            let cfg = a.flags.build(&file, seed)?;
            let task = parse_task(&a.task)?;
            let record = commands::cmd_train(
                &a.data,
                a.bounds.as_deref(),
                &cfg,
                task,
                &a.out,
                a.model_out.as_deref(),
            )?;
            if let Some(acc) = record.final_metrics.accuracy {
                println!("test accuracy = {acc:.4} (beta = {:.6e})", record.beta);
            } else {
                println!("run complete (beta = {:.6e})", record.beta);
            }
            Ok(())
        }
        Command::Sweep(a) => {
            let file = FileConfig::load(a.common.config.as_deref())?;
            let seed = commands::resolve_seed(a.common.seed, &file);
            let cfg = a.flags.build(&file, seed)?;
            let grid = GridSpec::parse(&file.str_or("sweep.grid", a.grid.clone(), "default"))?;
            let jobs = file.usize_or("sweep.jobs", a.jobs, 1);
            let share = file.bool_or("sweep.share-warmup", a.share_warmup);
            let rows =
                commands::cmd_beta_sweep(&a.data, &a.bounds, &grid, &cfg, share, jobs, &a.out)?;
            for r in &rows {
                println!(
                    "beta {:.3e}: accuracy {:.4} (mean r {:.3})",
                    r.beta, r.accuracy, r.mean_r
                );
            }
            Ok(())
        }
        Command::Table1(a) => {
            let file = FileConfig::load(a.common.config.as_deref())?;
            let seed = commands::resolve_seed(a.common.seed, &file);
            let cfg = a.flags.build(&file, seed)?;
            let jobs = file.usize_or("table1.jobs", a.jobs, 1);
            let rows = commands::cmd_table1(&a.data, a.bounds.as_deref(), &cfg, jobs, &a.out)?;
            for r in &rows {
                println!("{:<20} {:.4}", r.view, r.accuracy);
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_numeric() {
                ExitCode::from(3)
            } else {
                ExitCode::from(2)
            }
        }
    }
}
