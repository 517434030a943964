//! The experiment driver behind the `omib` binary: dataset generation,
//! bound estimation, training runs, sweeps over the redundancy weight, and
//! the feature-ablation table. Every command is a pure function of its
//! flags, config file, and seed; reruns produce byte-identical artifacts
//! except for wall-time fields.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mat::derive_seed;
use crate::mine::{estimate_beta_bounds, BetaBounds, MineConfig};
use crate::model::{ModelConfig, OmibModel, TaskKind};
use crate::synth::{self, Dataset, FeatureView, Sim3Config, SimConfig};
use crate::train::{
    main_train, warmup_train, HeadTrainConfig, RunRecord, TrainConfig, TrainData,
};

pub const SCHEMA_VERSION: u32 = 1;

/// Flat dotted-key JSON config file; flags override these values.
#[derive(Debug, Clone, Default)]
pub struct FileConfig {
    map: serde_json::Map<String, serde_json::Value>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<FileConfig> {
        match path {
            None => Ok(FileConfig::default()),
            Some(p) => {
                let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(p)?)?;
                match v {
                    serde_json::Value::Object(map) => Ok(FileConfig { map }),
                    _ => Err(Error::Config(format!(
                        "config file {} must hold a JSON object",
                        p.display()
                    ))),
                }
            }
        }
    }

    fn get(&self, key: &str) -> Option<&serde_json::Value> {
        self.map.get(key)
    }

    pub fn u64_or(&self, key: &str, flag: Option<u64>, default: u64) -> u64 {
        flag.or_else(|| self.get(key).and_then(|v| v.as_u64())).unwrap_or(default)
    }

    pub fn usize_or(&self, key: &str, flag: Option<usize>, default: usize) -> usize {
        flag.or_else(|| self.get(key).and_then(|v| v.as_u64()).map(|v| v as usize))
            .unwrap_or(default)
    }

    pub fn f64_or(&self, key: &str, flag: Option<f64>, default: f64) -> f64 {
        flag.or_else(|| self.get(key).and_then(|v| v.as_f64())).unwrap_or(default)
    }

    pub fn str_or(&self, key: &str, flag: Option<String>, default: &str) -> String {
        flag.or_else(|| self.get(key).and_then(|v| v.as_str().map(String::from)))
            .unwrap_or_else(|| default.to_string())
    }

    pub fn bool_or(&self, key: &str, flag: bool) -> bool {
        if flag {
            return true;
        }
        self.get(key).and_then(|v| v.as_bool()).unwrap_or(false)
    }
}

/// Global seed resolution: explicit flag, then config key `seed`, then the
/// `OMIB_SEED` environment variable, then 42.
pub fn resolve_seed(flag: Option<u64>, file: &FileConfig) -> u64 {
    flag.or_else(|| file.get("seed").and_then(|v| v.as_u64()))
        .or_else(|| {
            std::env::var("OMIB_SEED")
                .ok()
                .and_then(|s| s.parse::<u64>().ok())
        })
        .unwrap_or(42)
}

// ---------------------------------------------------------------------------
// gen
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Default)]
pub struct DimOverrides {
    pub d0: Option<usize>,
    pub d0p: Option<usize>,
    pub d11: Option<usize>,
    pub d12: Option<usize>,
    pub d21: Option<usize>,
    pub d22: Option<usize>,
    pub train_fraction: Option<f64>,
}

/// Generate a dataset and write `<out>/<name>.{f64,json}`. Returns the stem.
pub fn cmd_gen(
    preset: &str,
    n: usize,
    seed: u64,
    out_dir: &Path,
    name: Option<&str>,
    dims: &DimOverrides,
) -> Result<PathBuf> {
    fs::create_dir_all(out_dir)?;
    let stem = out_dir.join(name.unwrap_or(preset));
    let ds = match preset {
        "sim3mod" => {
            let mut cfg = Sim3Config::preset(preset, n, seed)?;
            if let Some(f) = dims.train_fraction {
                cfg.train_fraction = f;
            }
            Dataset::Three(synth::generate_sim3_named(&cfg, preset)?)
        }
        _ => {
            let mut cfg = if preset == "custom" {
                // start from the imbalanced preset and override
                SimConfig::preset("sim1", n, seed)?
            } else {
                SimConfig::preset(preset, n, seed)?
            };
            if let Some(v) = dims.d0 {
                cfg.d0 = v;
            }
            if let Some(v) = dims.d0p {
                cfg.d0p = v;
            }
            if let Some(v) = dims.d11 {
                cfg.d11 = v;
            }
            if let Some(v) = dims.d12 {
                cfg.d12 = v;
            }
            if let Some(v) = dims.d21 {
                cfg.d21 = v;
            }
            if let Some(v) = dims.d22 {
                cfg.d22 = v;
            }
            if let Some(f) = dims.train_fraction {
                cfg.train_fraction = f;
            }
            Dataset::Two(synth::generate_sim_named(&cfg, preset)?)
        }
    };
    synth::save_dataset(&stem, &ds)?;

    // layout summary
    match &ds {
        Dataset::Two(d) => {
            let l = &d.layout;
            println!(
                "{}: n={} x1[{}] = [b0:{} b1:{} a0:{} a1:{}], x2[{}] = [b0:{} b2:{} a0:{} a2:{}]",
                stem.display(),
                d.n(),
                l.x1_width(),
                l.d0p,
                l.d12,
                l.d0,
                l.d11,
                l.x2_width(),
                l.d0p,
                l.d22,
                l.d0,
                l.d21,
            );
        }
        Dataset::Three(d) => {
            println!(
                "{}: n={} three modalities, widths {:?}",
                stem.display(),
                d.n(),
                d.xs.iter().map(|x| x.cols).collect::<Vec<_>>()
            );
        }
    }
    Ok(stem)
}

// ---------------------------------------------------------------------------
// bounds
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
pub struct BoundsFile {
    pub schema_version: u32,
    pub dataset: String,
    pub mine_config: MineConfig,
    pub bounds: BetaBounds,
}

/// Estimate entropies/MIs on the training split and write the bounds JSON.
pub fn cmd_bounds(data_stem: &Path, mine_cfg: &MineConfig, out: &Path) -> Result<BoundsFile> {
    let ds = synth::load_dataset(data_stem)?;
    let (train, _) = split_dataset(&ds)?;
    let views: Vec<&crate::mat::Matrix> = train.views.iter().collect();
    let bounds = estimate_beta_bounds(&views, mine_cfg)?;
    let file = BoundsFile {
        schema_version: SCHEMA_VERSION,
        dataset: data_stem.display().to_string(),
        mine_config: mine_cfg.clone(),
        bounds,
    };
    if let Some(dir) = out.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    fs::write(out, serde_json::to_string_pretty(&file)?)?;
    Ok(file)
}

pub fn load_bounds(path: &Path) -> Result<BetaBounds> {
    if !path.exists() {
        return Err(Error::Data(format!("bounds file '{}' not found", path.display())));
    }
    let file: BoundsFile = serde_json::from_str(&fs::read_to_string(path)?)?;
    Ok(file.bounds)
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

/// Train/test split as TrainData pairs using the dataset's recorded
/// fraction and seed.
pub fn split_dataset(ds: &Dataset) -> Result<(TrainData, TrainData)> {
    match ds {
        Dataset::Two(d) => {
            let (tr, te) = synth::split_train_test(d, d.train_fraction)?;
            Ok((
                TrainData::from_labeled(vec![tr.x1, tr.x2], &tr.y)?,
                TrainData::from_labeled(vec![te.x1, te.x2], &te.y)?,
            ))
        }
        Dataset::Three(d) => {
            let (tr, te) = synth::split3_train_test(d, d.cfg.train_fraction)?;
            Ok((
                TrainData::from_labeled(tr.xs, &tr.y)?,
                TrainData::from_labeled(te.xs, &te.y)?,
            ))
        }
    }
}

fn model_for(ds: &Dataset, task: TaskKind, init_seed: u64) -> Result<OmibModel> {
    let dims: Vec<usize> = ds.views().iter().map(|v| v.cols).collect();
    let cfg = match task {
        TaskKind::Classification { .. } => ModelConfig::classification(dims, 2, init_seed),
        TaskKind::Svdd => ModelConfig::svdd(dims, init_seed),
        TaskKind::Regression => {
            return Err(Error::Config(
                "regression training is not wired to the synthetic datasets".into(),
            ))
        }
    };
    OmibModel::new(cfg)
}

pub struct TrainOutcome {
    pub record: RunRecord,
    pub model: OmibModel,
}

/// Warm-up plus main training on a stored dataset; returns the record and
/// the trained model.
pub fn run_training(
    ds: &Dataset,
    bounds: Option<&BetaBounds>,
    cfg: &TrainConfig,
    task: TaskKind,
) -> Result<TrainOutcome> {
    let (train, test) = split_dataset(ds)?;
    let mut model = model_for(ds, task, derive_seed(cfg.seed, "init"))?;
    let (train_data, eval_data) = match task {
        TaskKind::Svdd => (
            TrainData::new(train.views, crate::train::Targets::None)?,
            None,
        ),
        _ => (train, Some(test)),
    };
    let record = main_train(&mut model, &train_data, eval_data.as_ref(), bounds, cfg)?;
    Ok(TrainOutcome { record, model })
}

/// The `train` command: run, then write the record JSON and optionally the
/// model files.
pub fn cmd_train(
    data_stem: &Path,
    bounds_path: Option<&Path>,
    cfg: &TrainConfig,
    task: TaskKind,
    out_record: &Path,
    out_model: Option<&Path>,
) -> Result<RunRecord> {
    let ds = synth::load_dataset(data_stem)?;
    let bounds = match bounds_path {
        Some(p) => Some(load_bounds(p)?),
        None => None,
    };
    let outcome = run_training(&ds, bounds.as_ref(), cfg, task)?;
    if let Some(dir) = out_record.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    fs::write(out_record, serde_json::to_string_pretty(&outcome.record)?)?;
    if let Some(stem) = out_model {
        outcome.model.save(stem)?;
    }
    Ok(outcome.record)
}

// ---------------------------------------------------------------------------
// sweep
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepRow {
    pub beta: f64,
    pub m_l: f64,
    pub m_u: f64,
    pub accuracy: f64,
    pub mean_r: f64,
    pub wall_seconds: f64,
    pub seed: u64,
    /// Marker: beta at or below the estimated upper bound.
    pub within_upper: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub enum GridSpec {
    Default,
    Explicit(Vec<f64>),
}

impl GridSpec {
    pub fn parse(s: &str) -> Result<GridSpec> {
        if s == "default" {
            return Ok(GridSpec::Default);
        }
        let vals: Vec<f64> = s
            .split(',')
            .filter(|t| !t.trim().is_empty())
            .map(|t| {
                t.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::Config(format!("bad grid value '{t}'")))
            })
            .collect::<Result<_>>()?;
        if vals.is_empty() {
            return Err(Error::Config("empty sweep grid".into()));
        }
        Ok(GridSpec::Explicit(vals))
    }

    /// Resolve against estimated bounds: the default grid brackets the
    /// estimated interval with fixed probe points.
    pub fn resolve(&self, lower: f64, upper: f64) -> Vec<f64> {
        let mut grid = match self {
            GridSpec::Explicit(v) => v.clone(),
            GridSpec::Default => vec![
                1e-6,
                1e-4,
                1e-2,
                lower,
                0.5 * (lower + upper),
                upper,
                2.0 * upper,
                1.0,
                10.0,
            ],
        };
        grid.sort_by(|a, b| a.partial_cmp(b).unwrap());
        grid.dedup();
        grid
    }
}

/// One full training per grid point (optionally sharing a single warm-up),
/// collecting test accuracy and the averaged dynamic weight.
pub fn cmd_beta_sweep(
    data_stem: &Path,
    bounds_path: &Path,
    grid: &GridSpec,
    cfg: &TrainConfig,
    share_warmup: bool,
    jobs: usize,
    out_csv: &Path,
) -> Result<Vec<SweepRow>> {
    let ds = synth::load_dataset(data_stem)?;
    let bounds = load_bounds(bounds_path)?;
    let (lower, upper) = bounds.range(ds.modalities())?;
    let grid = grid.resolve(lower, upper);
    if grid.is_empty() {
        return Err(Error::Config("empty sweep grid".into()));
    }

    let (train, test) = split_dataset(&ds)?;
    // Optional shared warm-up: branches are trained once, each sweep point
    // clones the warm model and runs main training only.
    let warm_model = if share_warmup {
        let mut model = model_for(&ds, TaskKind::Classification { classes: 2 }, derive_seed(cfg.seed, "init"))?;
        warmup_train(&mut model, &train, cfg)?;
        Some(model)
    } else {
        None
    };

    let run_point = |(pi, beta): (usize, f64)| -> Result<SweepRow> {
        let point_seed = derive_seed(cfg.seed, &format!("sweep-{pi}"));
        let point_cfg = TrainConfig {
            seed: point_seed,
            beta_policy: crate::train::BetaPolicy::Fixed(beta),
            warm_epochs: if share_warmup { 0 } else { cfg.warm_epochs },
            ..cfg.clone()
        };
        let mut model = match &warm_model {
            Some(m) => m.clone(),
            None => model_for(&ds, TaskKind::Classification { classes: 2 }, derive_seed(point_seed, "init"))?,
        };
        let record = main_train(&mut model, &train, Some(&test), Some(&bounds), &point_cfg)?;
        Ok(SweepRow {
            beta,
            m_l: lower,
            m_u: upper,
            accuracy: record.final_metrics.accuracy.unwrap_or(f64::NAN),
            mean_r: record
                .final_metrics
                .mean_r
                .first()
                .copied()
                .unwrap_or(f64::NAN),
            wall_seconds: record.wall_seconds,
            seed: point_seed,
            within_upper: beta <= upper,
        })
    };

    let points: Vec<(usize, f64)> = grid.iter().copied().enumerate().collect();
    let mut rows: Vec<SweepRow> = if jobs > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
        pool.install(|| {
            use rayon::prelude::*;
            points.par_iter().map(|p| run_point(*p)).collect::<Result<Vec<_>>>()
        })?
    } else {
        points.into_iter().map(run_point).collect::<Result<Vec<_>>>()?
    };
    rows.sort_by(|a, b| a.beta.partial_cmp(&b.beta).unwrap());

    let mut csv = String::from("beta,m_l,m_u,accuracy,mean_r,wall_seconds,seed,within_upper\n");
    for r in &rows {
        csv.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.beta, r.m_l, r.m_u, r.accuracy, r.mean_r, r.wall_seconds, r.seed, r.within_upper
        ));
    }
    if let Some(dir) = out_csv.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    fs::write(out_csv, csv)?;
    Ok(rows)
}

// ---------------------------------------------------------------------------
// table1
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationRow {
    pub view: String,
    pub accuracy: f64,
}

/// Accuracy of a fresh classifier head on each oracle feature view plus the
/// full pipeline, in the published row order.
pub fn cmd_table1(
    data_stem: &Path,
    bounds_path: Option<&Path>,
    cfg: &TrainConfig,
    jobs: usize,
    out_csv: &Path,
) -> Result<Vec<AblationRow>> {
    let ds = synth::load_dataset(data_stem)?;
    let two = match &ds {
        Dataset::Two(d) => d.clone(),
        Dataset::Three(_) => {
            return Err(Error::Config(
                "the ablation table needs a two-modality dataset with recorded layout".into(),
            ))
        }
    };
    let bounds = match bounds_path {
        Some(p) => Some(load_bounds(p)?),
        None => None,
    };

    let (train_ds, test_ds) = synth::split_train_test(&two, two.train_fraction)?;
    let y_train: Vec<usize> = train_ds.y.iter().map(|&v| v as usize).collect();
    let y_test: Vec<usize> = test_ds.y.iter().map(|&v| v as usize).collect();

    enum Job {
        View(FeatureView),
        Pipeline,
    }
    let mut jobs_list: Vec<Job> = FeatureView::ALL.into_iter().map(Job::View).collect();
    jobs_list.push(Job::Pipeline);

    let run_job = |job: &Job| -> Result<AblationRow> {
        match job {
            Job::View(view) => {
                let x_train = synth::oracle_feature_view(&train_ds, *view);
                let x_test = synth::oracle_feature_view(&test_ds, *view);
                let head_cfg = HeadTrainConfig::from_train(
                    cfg,
                    512,
                    derive_seed(cfg.seed, &format!("view-{}", view.name())),
                );
                let acc = crate::train::train_feature_classifier(
                    &x_train, &y_train, &x_test, &y_test, 2, &head_cfg,
                )?;
                Ok(AblationRow {
                    view: view.name().to_string(),
                    accuracy: acc,
                })
            }
            Job::Pipeline => {
                let outcome = run_training(
                    &ds,
                    bounds.as_ref(),
                    cfg,
                    TaskKind::Classification { classes: 2 },
                )?;
                Ok(AblationRow {
                    view: "omib".to_string(),
                    accuracy: outcome
                        .record
                        .final_metrics
                        .accuracy
                        .ok_or_else(|| Error::Numeric("pipeline produced no accuracy".into()))?,
                })
            }
        }
    };

    let rows: Vec<AblationRow> = if jobs > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
        pool.install(|| {
            use rayon::prelude::*;
            jobs_list
                .par_iter()
                .map(run_job)
                .collect::<Result<Vec<_>>>()
        })?
    } else {
        jobs_list.iter().map(run_job).collect::<Result<Vec<_>>>()?
    };

    let mut csv = String::from("view,accuracy\n");
    for r in &rows {
        csv.push_str(&format!("{},{}\n", r.view, r.accuracy));
    }
    if let Some(dir) = out_csv.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    fs::write(out_csv, csv)?;
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_parsing() {
        assert_eq!(GridSpec::parse("default").unwrap(), GridSpec::Default);
        assert_eq!(
            GridSpec::parse("0.1, 1, 10").unwrap(),
            GridSpec::Explicit(vec![0.1, 1.0, 10.0])
        );
        assert!(GridSpec::parse("").is_err());
        assert!(GridSpec::parse("a,b").is_err());
    }

    #[test]
    fn default_grid_brackets_bounds_sorted_and_deduped() {
        let g = GridSpec::Default.resolve(0.02, 0.04);
        assert!(g.windows(2).all(|w| w[0] < w[1]));
        assert!(g.contains(&0.02) && g.contains(&0.04) && g.contains(&0.08));
        assert!(g.contains(&10.0) && g.contains(&1e-6));
        assert_eq!(g.len(), 9);
    }

    #[test]
    fn file_config_merging_prefers_flags() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        fs::write(&path, r#"{"train.lr": 0.5, "seed": 9}"#).unwrap();
        let fc = FileConfig::load(Some(&path)).unwrap();
        assert_eq!(fc.f64_or("train.lr", None, 1e-4), 0.5);
        assert_eq!(fc.f64_or("train.lr", Some(0.25), 1e-4), 0.25);
        assert_eq!(fc.f64_or("train.batch", None, 128.0), 128.0);
        assert_eq!(resolve_seed(None, &fc), 9);
        assert_eq!(resolve_seed(Some(3), &fc), 3);
    }

    #[test]
    fn seed_env_fallback() {
        let fc = FileConfig::default();
        std::env::set_var("OMIB_SEED", "77");
        assert_eq!(resolve_seed(None, &fc), 77);
        std::env::remove_var("OMIB_SEED");
        assert_eq!(resolve_seed(None, &fc), 42);
    }
}
