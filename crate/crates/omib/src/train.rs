//! Two-phase training.
//!
//! Warm-up trains each modality branch alone: the encoder output is
//! concatenated with fresh Gaussian noise before its prediction head, which
//! pushes the encoder to keep every task-relevant bit. Main training adds
//! the fusion block: VAE heads produce per-modality Gaussians, samples are
//! fused by cross-attention into `xi`, which both feeds the fused head and
//! replaces the noise in every branch. The fusion loss is
//!
//! `mean[-log q(y|xi)] + beta * (KL_1 + r * KL_2)`   (two modalities)
//! `mean[-log q(y|xi)] + beta * (KL_1 + r1 * KL_2 + r2 * KL_3)`  (three)
//!
//! where each KL is taken against the standard normal and `r` is recomputed
//! every batch from how much predictive information each branch still holds
//! beyond the fused head: `r = 1 - tanh(ln mean(KL_2 / KL_1))` over
//! per-sample KLs between branch and fused predictive distributions. The
//! total step loss is the fusion loss plus every branch loss, optimized
//! jointly by one Adam step.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mat::{derive_seed, permutation, rng_from, Matrix};
use crate::metrics;
use crate::mine::BetaBounds;
use crate::model::{svdd_center, OmibModel, SvddState, TaskKind};
use crate::nn::{kl_categorical_rows, kl_diag_gauss_std, reparameterize, softmax_cross_entropy};
use crate::optim::{Adam, AdamConfig};
use crate::tensor::{ParamId, ParamSet, Session, Tape, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "policy", content = "value")]
pub enum BetaPolicy {
    Fixed(f64),
    MidpointOfBounds,
    SampleInBounds,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "mode", content = "value")]
pub enum RMode {
    Dynamic,
    Fixed(f64),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub warm_epochs: usize,
    pub main_epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub seed: u64,
    pub beta_policy: BetaPolicy,
    /// Monte Carlo draws for the noise expectation in the fusion loss.
    pub mc_samples: usize,
    pub r_mode: RMode,
    /// Stricter update split: cut fusion-loss gradients at the encoder
    /// outputs so encoders learn from branch losses only.
    pub stop_grad_encoders: bool,
    /// Parameter regularization weight for the one-class task.
    pub svdd_lambda: f64,
    #[serde(default)]
    pub verbose: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            warm_epochs: 20,
            main_epochs: 100,
            batch: 128,
            lr: 1e-4,
            seed: 0,
            beta_policy: BetaPolicy::MidpointOfBounds,
            mc_samples: 1,
            r_mode: RMode::Dynamic,
            stop_grad_encoders: false,
            svdd_lambda: 1e-4,
            verbose: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch < 2 {
            return Err(Error::Config("batch size must be at least 2".into()));
        }
        if self.mc_samples == 0 {
            return Err(Error::Config("mc_samples must be positive".into()));
        }
        if self.lr <= 0.0 {
            return Err(Error::Config("lr must be positive".into()));
        }
        if let BetaPolicy::Fixed(v) = self.beta_policy {
            if v < 0.0 {
                return Err(Error::Config("fixed beta must be nonnegative".into()));
            }
        }
        if let RMode::Fixed(v) = self.r_mode {
            if v <= 0.0 {
                return Err(Error::Config("fixed r must be positive".into()));
            }
        }
        Ok(())
    }
}

/// Supervision targets; `None` is the one-class setting.
#[derive(Debug, Clone)]
pub enum Targets {
    Classes(Vec<usize>),
    Real(Matrix),
    None,
}

impl Targets {
    fn take(&self, idx: &[usize]) -> Targets {
        match self {
            Targets::Classes(v) => Targets::Classes(idx.iter().map(|&i| v[i]).collect()),
            Targets::Real(m) => Targets::Real(m.take_rows(idx)),
            Targets::None => Targets::None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainData {
    pub views: Vec<Matrix>,
    pub targets: Targets,
}

impl TrainData {
    pub fn new(views: Vec<Matrix>, targets: Targets) -> Result<Self> {
        if views.is_empty() {
            return Err(Error::Data("need at least one view".into()));
        }
        let n = views[0].rows;
        if views.iter().any(|v| v.rows != n) {
            return Err(Error::Data("views disagree on row count".into()));
        }
        if let Targets::Classes(y) = &targets {
            if y.len() != n {
                return Err(Error::Data("labels do not match row count".into()));
            }
        }
        Ok(TrainData { views, targets })
    }

    pub fn from_labeled(views: Vec<Matrix>, y: &[u8]) -> Result<Self> {
        TrainData::new(views, Targets::Classes(y.iter().map(|&v| v as usize).collect()))
    }

    pub fn n(&self) -> usize {
        self.views[0].rows
    }

    fn batch(&self, idx: &[usize]) -> TrainData {
        TrainData {
            views: self.views.iter().map(|v| v.take_rows(idx)).collect(),
            targets: self.targets.take(idx),
        }
    }
}

/// Task-specific branch/head data loss (parameter regularization for the
/// one-class task is added once per step, not per branch).
pub fn trb_loss(
    task: TaskKind,
    preds: &Tensor,
    targets: &Targets,
    svdd: Option<&SvddState>,
) -> Result<Tensor> {
    match (task, targets) {
        (TaskKind::Classification { .. }, Targets::Classes(y)) => {
            softmax_cross_entropy(preds, y)
        }
        (TaskKind::Svdd, _) => {
            let state = svdd.ok_or_else(|| {
                Error::Config("one-class loss needs an initialized center".into())
            })?;
            let shape = preds.shape();
            let c = preds
                .tape()
                .constant(&[1, state.center.len()], state.center.clone())?
                .broadcast_to(&shape)?;
            let d = preds.sub(&c)?;
            d.mul(&d)?.sum(Some(1))?.mean(None)
        }
        (TaskKind::Regression, Targets::Real(y)) => {
            let yt = preds.tape().matrix(y)?;
            let d = preds.sub(&yt)?;
            d.mul(&d)?.mean(None)
        }
        (t, _) => Err(Error::Config(format!(
            "targets do not match task {t:?}"
        ))),
    }
}

/// Sum of squared parameters over the given ids, weighted by `lambda`.
fn param_penalty(
    ps: &ParamSet,
    sess: &Session,
    ids: &[ParamId],
    lambda: f64,
) -> Result<Option<Tensor>> {
    if lambda == 0.0 {
        return Ok(None);
    }
    let mut acc: Option<Tensor> = None;
    for &id in ids {
        let t = sess.tensor(ps, id);
        let sq = t.mul(&t)?.sum(None)?;
        acc = Some(match acc {
            None => sq,
            Some(a) => a.add(&sq)?,
        });
    }
    Ok(match acc {
        None => None,
        Some(a) => Some(a.scale(lambda)?),
    })
}

const KL_FLOOR: f64 = 1e-8;
const RATIO_CLIP: (f64, f64) = (1e-6, 1e6);

/// Dynamic redundancy rebalancing weight from per-sample predictive KLs:
/// `r = 1 - tanh(ln mean(num / den))`, numerator and denominator floored at
/// 1e-8 and each ratio clipped to `[1e-6, 1e6]`. Always in (0, 2).
pub fn compute_r(kl_num: &[f64], kl_den: &[f64]) -> Result<f64> {
    if kl_num.is_empty() || kl_num.len() != kl_den.len() {
        return Err(Error::Data(format!(
            "compute_r needs matched nonempty KL vectors, got {} and {}",
            kl_num.len(),
            kl_den.len()
        )));
    }
    let mut sum = 0.0;
    for (n, d) in kl_num.iter().zip(kl_den) {
        let ratio = (n.max(KL_FLOOR) / d.max(KL_FLOOR)).clamp(RATIO_CLIP.0, RATIO_CLIP.1);
        sum += ratio;
    }
    let rho = sum / kl_num.len() as f64;
    Ok(1.0 - rho.ln().tanh())
}

/// Per-modality weights for three modalities: modality 1 is the common
/// denominator, `r_j = 1 - tanh(ln mean(KL_{j+1} / KL_1))`.
pub fn compute_r_multi(kls: &[Vec<f64>]) -> Result<Vec<f64>> {
    if kls.len() < 2 {
        return Err(Error::Data("compute_r_multi needs at least two modalities".into()));
    }
    (1..kls.len()).map(|j| compute_r(&kls[j], &kls[0])).collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WarmEpoch {
    pub epoch: usize,
    pub trb_loss: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MainEpoch {
    pub epoch: usize,
    pub omf_loss: f64,
    pub head_loss: f64,
    pub kl: Vec<f64>,
    pub trb_loss: Vec<f64>,
    pub r_mean: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FinalMetrics {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub accuracy: Option<f64>,
    pub mean_r: Vec<f64>,
}

/// Everything one run produces, serialized by the experiment driver.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunRecord {
    pub schema_version: u32,
    pub config: TrainConfig,
    pub beta: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bounds_used: Option<(f64, f64)>,
    pub warm_epochs: Vec<WarmEpoch>,
    pub main_epochs: Vec<MainEpoch>,
    /// Per-step dynamic weights, one row per optimization step, one column
    /// per non-reference modality.
    pub r_steps: Vec<Vec<f64>>,
    pub final_metrics: FinalMetrics,
    pub wall_seconds: f64,
    pub seed: u64,
}

fn batches(n: usize, batch: usize, rng: &mut rand_chacha::ChaCha8Rng) -> Vec<Vec<usize>> {
    let order = permutation(n, rng);
    order.chunks(batch).map(|c| c.to_vec()).collect()
}

fn noise_matrix(rows: usize, cols: usize, rng: &mut rand_chacha::ChaCha8Rng) -> Matrix {
    let data = (0..rows * cols).map(|_| rng.sample(StandardNormal)).collect();
    Matrix::new(rows, cols, data)
}

fn softmax_rows(m: &Matrix) -> Matrix {
    let mut out = m.clone();
    for i in 0..out.rows {
        let row = &mut out.data[i * out.cols..(i + 1) * out.cols];
        let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - mx).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    out
}

/// Per-sample divergence between a branch predictive distribution and the
/// fused one. Classification uses the categorical KL over softmax outputs;
/// for one-class and regression heads the outputs are treated as
/// unit-variance Gaussian means, where the KL reduces to half the squared
/// distance.
fn predictive_kl(task: TaskKind, branch: &Matrix, fused: &Matrix) -> Result<Vec<f64>> {
    match task {
        TaskKind::Classification { .. } => {
            kl_categorical_rows(&softmax_rows(branch), &softmax_rows(fused))
        }
        TaskKind::Svdd | TaskKind::Regression => Ok((0..branch.rows)
            .map(|i| {
                0.5 * branch
                    .row(i)
                    .iter()
                    .zip(fused.row(i))
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
            })
            .collect()),
    }
}

/// Initialize a frozen center from the mean head output over the dataset,
/// before any gradient step uses it.
fn init_center(
    model: &OmibModel,
    data: &TrainData,
    lambda: f64,
    head: CenterHead,
) -> Result<SvddState> {
    let n = data.n();
    let chunk = 2048usize;
    let mut rows = Vec::new();
    let mut start = 0;
    while start < n {
        let len = chunk.min(n - start);
        let idx: Vec<usize> = (start..start + len).collect();
        let tape = Tape::new();
        let sess = model.params.bind(&tape);
        let preds = match head {
            CenterHead::Branch(m) => {
                let x = tape.matrix(&data.views[m].take_rows(&idx))?;
                let z = model.encode(&sess, m, &x)?;
                // center from the noise-free branch view of the embedding
                let zero_side = tape.constant(&[len, model.cfg.k], vec![0.0; len * model.cfg.k])?;
                model.trb_predict(&sess, m, &z, &zero_side)?
            }
            CenterHead::Fused => {
                let mut mus = Vec::new();
                for (m, v) in data.views.iter().enumerate() {
                    let x = tape.matrix(&v.take_rows(&idx))?;
                    let z = model.encode(&sess, m, &x)?;
                    mus.push(model.vae_forward(&sess, m, &z)?.mu);
                }
                let xi = model.fuse(&sess, &mus.iter().collect::<Vec<_>>())?;
                model.fused_predict(&sess, &xi)?
            }
        };
        rows.push(preds.to_matrix());
        start += len;
    }
    let all = Matrix::new(
        n,
        rows[0].cols,
        rows.iter().flat_map(|m| m.data.iter().copied()).collect(),
    );
    Ok(SvddState {
        center: svdd_center(&all)?,
        lambda,
    })
}

#[derive(Clone, Copy)]
enum CenterHead {
    Branch(usize),
    Fused,
}

/// Warm-up: per batch and modality, encode, concatenate fresh noise, train
/// encoder and branch head on the branch loss. Returns per-epoch losses.
pub fn warmup_train(
    model: &mut OmibModel,
    data: &TrainData,
    cfg: &TrainConfig,
) -> Result<Vec<WarmEpoch>> {
    cfg.validate()?;
    if data.views.len() != model.modalities() {
        return Err(Error::Data("data modality count does not match model".into()));
    }
    if data.n() == 0 {
        return Err(Error::Data("warm-up needs at least one batch".into()));
    }
    let task = model.cfg.task;
    if task == TaskKind::Svdd && model.svdd_trb.is_empty() {
        for m in 0..model.modalities() {
            let st = init_center(model, data, cfg.svdd_lambda, CenterHead::Branch(m))?;
            model.svdd_trb.push(st);
        }
    }

    let mut adam = Adam::new(AdamConfig::with_lr(cfg.lr), &model.params);
    let mut rng = rng_from(derive_seed(cfg.seed, "warmup"));
    let k = model.cfg.k;
    let mut record = Vec::with_capacity(cfg.warm_epochs);

    for epoch in 0..cfg.warm_epochs {
        let mut epoch_losses = vec![Vec::new(); model.modalities()];
        for idx in batches(data.n(), cfg.batch, &mut rng) {
            let b = data.batch(&idx);
            let noises: Vec<Matrix> = (0..model.modalities())
                .map(|_| noise_matrix(idx.len(), k, &mut rng))
                .collect();

            let step = |model: &OmibModel| -> Result<(Tape, Session, Tensor, Vec<f64>)> {
                let tape = Tape::new();
                let sess = model.params.bind(&tape);
                let mut total: Option<Tensor> = None;
                let mut per_modality = Vec::new();
                for m in 0..model.modalities() {
                    let x = tape.matrix(&b.views[m])?;
                    let z = model.encode(&sess, m, &x)?;
                    let e = tape.matrix(&noises[m])?;
                    let preds = model.trb_predict(&sess, m, &z, &e)?;
                    let l = trb_loss(task, &preds, &b.targets, model.svdd_trb.get(m))?;
                    per_modality.push(l.scalar_value());
                    total = Some(match total {
                        None => l,
                        Some(t) => t.add(&l)?,
                    });
                }
                let mut total = total.unwrap();
                if task == TaskKind::Svdd {
                    if let Some(pen) =
                        param_penalty(&model.params, &sess, &model.branch_param_ids(), cfg.svdd_lambda)?
                    {
                        total = total.add(&pen)?;
                    }
                }
                Ok((tape, sess, total, per_modality))
            };

            let (tape, sess, total, per_modality) = step(model).map_err(|e| {
                wrap_step_error(e, "warm-up", epoch, &per_step_context(&idx))
            })?;
            for (m, l) in per_modality.iter().enumerate() {
                epoch_losses[m].push(*l);
            }
            let grads = tape.backward(&total)?;
            adam.step(&mut model.params, &sess, &grads)?;
        }
        let trb: Vec<f64> = epoch_losses.iter().map(|l| crate::mat::mean(l)).collect();
        if cfg.verbose {
            eprintln!("warm epoch {epoch}: trb = {trb:?}");
        }
        record.push(WarmEpoch { epoch, trb_loss: trb });
    }
    Ok(record)
}

fn per_step_context(idx: &[usize]) -> String {
    format!("batch of {}", idx.len())
}

fn wrap_step_error(e: Error, phase: &str, epoch: usize, ctx: &str) -> Error {
    match e {
        Error::NonFinite { op, .. } => Error::NonFinite {
            op,
            context: Some(format!("{phase} epoch {epoch}, {ctx}")),
        },
        other => other,
    }
}

/// Resolve the redundancy weight for main training.
fn resolve_beta(
    policy: BetaPolicy,
    bounds: Option<&BetaBounds>,
    modalities: usize,
    seed: u64,
) -> Result<(f64, Option<(f64, f64)>)> {
    match policy {
        BetaPolicy::Fixed(v) => Ok((v, None)),
        BetaPolicy::MidpointOfBounds | BetaPolicy::SampleInBounds => {
            let b = bounds.ok_or_else(|| {
                Error::Config(
                    "beta policy references estimated bounds; run the `bounds` command and pass \
                     its output"
                        .into(),
                )
            })?;
            let (l, u) = b.range(modalities)?;
            let beta = match policy {
                BetaPolicy::MidpointOfBounds => 0.5 * (l + u),
                // drawn once before training
                _ => rng_from(derive_seed(seed, "beta-sample")).gen_range(l..=u),
            };
            Ok((beta, Some((l, u))))
        }
    }
}

/// Main training: fusion block plus branches under the summed loss, one
/// optimizer step per batch, the dynamic weight recomputed from each
/// batch's predictive KLs. Returns the run record; `eval` fills the final
/// metrics from held-out data.
pub fn main_train(
    model: &mut OmibModel,
    data: &TrainData,
    eval: Option<&TrainData>,
    bounds: Option<&BetaBounds>,
    cfg: &TrainConfig,
) -> Result<RunRecord> {
    cfg.validate()?;
    let started = std::time::Instant::now();
    let modalities = model.modalities();
    if data.views.len() != modalities {
        return Err(Error::Data("data modality count does not match model".into()));
    }
    let task = model.cfg.task;

    let warm_record = warmup_train(model, data, cfg)?;

    let (beta, bounds_used) = resolve_beta(cfg.beta_policy, bounds, modalities, cfg.seed)?;
    model.beta = Some(beta);
    if task == TaskKind::Svdd && model.svdd_fused.is_none() {
        model.svdd_fused = Some(init_center(model, data, cfg.svdd_lambda, CenterHead::Fused)?);
    }

    let mut adam = Adam::new(AdamConfig::with_lr(cfg.lr), &model.params);
    let mut rng = rng_from(derive_seed(cfg.seed, "main"));
    let k = model.cfg.k;
    let mut main_record = Vec::with_capacity(cfg.main_epochs);
    let mut r_steps: Vec<Vec<f64>> = Vec::new();

    for epoch in 0..cfg.main_epochs {
        let mut ep_omf = Vec::new();
        let mut ep_head = Vec::new();
        let mut ep_kl = vec![Vec::new(); modalities];
        let mut ep_trb = vec![Vec::new(); modalities];
        let mut ep_r: Vec<Vec<f64>> = vec![Vec::new(); modalities - 1];

        for (step_i, idx) in batches(data.n(), cfg.batch, &mut rng).into_iter().enumerate() {
            let b = data.batch(&idx);
            let nb = idx.len();
            // freeze this step's noise draws up front
            let eps: Vec<Vec<Matrix>> = (0..cfg.mc_samples)
                .map(|_| {
                    (0..modalities)
                        .map(|_| noise_matrix(nb, k, &mut rng))
                        .collect()
                })
                .collect();

            let tape = Tape::new();
            let sess = model.params.bind(&tape);
            let outcome = (|| -> Result<(Tensor, StepDiag)> {
                omf_step(model, &tape, &sess, &b, &eps, beta, cfg)
            })()
            .map_err(|e| wrap_step_error(e, "main", epoch, &format!("step {step_i}")))?;
            let (total, diag) = outcome;

            ep_omf.push(diag.omf);
            ep_head.push(diag.head);
            for m in 0..modalities {
                ep_kl[m].push(diag.kl[m]);
                ep_trb[m].push(diag.trb[m]);
            }
            for (j, r) in diag.r.iter().enumerate() {
                ep_r[j].push(*r);
            }
            r_steps.push(diag.r.clone());

            let grads = tape.backward(&total)?;
            adam.step(&mut model.params, &sess, &grads)?;
        }

        let rec = MainEpoch {
            epoch,
            omf_loss: crate::mat::mean(&ep_omf),
            head_loss: crate::mat::mean(&ep_head),
            kl: ep_kl.iter().map(|v| crate::mat::mean(v)).collect(),
            trb_loss: ep_trb.iter().map(|v| crate::mat::mean(v)).collect(),
            r_mean: ep_r.iter().map(|v| crate::mat::mean(v)).collect(),
        };
        if cfg.verbose {
            eprintln!(
                "main epoch {epoch}: omf {:.4} head {:.4} kl {:?} r {:?}",
                rec.omf_loss, rec.head_loss, rec.kl, rec.r_mean
            );
        }
        main_record.push(rec);
    }

    // final metrics on held-out data when provided
    let accuracy = match (eval, task) {
        (Some(ev), TaskKind::Classification { .. }) => {
            let views: Vec<&Matrix> = ev.views.iter().collect();
            let preds = model.classify(&views)?;
            match &ev.targets {
                Targets::Classes(y) => Some(metrics::accuracy(&preds, y)?),
                _ => None,
            }
        }
        _ => None,
    };
    let mean_r: Vec<f64> = if r_steps.is_empty() {
        vec![]
    } else {
        (0..modalities - 1)
            .map(|j| crate::mat::mean(&r_steps.iter().map(|s| s[j]).collect::<Vec<_>>()))
            .collect()
    };

    Ok(RunRecord {
        schema_version: crate::synth::SCHEMA_VERSION,
        config: cfg.clone(),
        beta,
        bounds_used,
        warm_epochs: warm_record,
        main_epochs: main_record,
        r_steps,
        final_metrics: FinalMetrics { accuracy, mean_r },
        wall_seconds: started.elapsed().as_secs_f64(),
        seed: cfg.seed,
    })
}

struct StepDiag {
    omf: f64,
    head: f64,
    kl: Vec<f64>,
    trb: Vec<f64>,
    r: Vec<f64>,
}

/// One main-training step on an already-bound tape: builds the full loss
/// `L_OMF + sum L_TRB` and reports per-term diagnostics.
fn omf_step(
    model: &OmibModel,
    tape: &Tape,
    sess: &Session,
    b: &TrainData,
    eps: &[Vec<Matrix>],
    beta: f64,
    cfg: &TrainConfig,
) -> Result<(Tensor, StepDiag)> {
    let modalities = model.modalities();
    let task = model.cfg.task;

    let mut zs = Vec::with_capacity(modalities);
    for m in 0..modalities {
        let x = tape.matrix(&b.views[m])?;
        zs.push(model.encode(sess, m, &x)?);
    }
    let mut kls = Vec::with_capacity(modalities);
    let mut vae_outs = Vec::with_capacity(modalities);
    for m in 0..modalities {
        let z_in = if cfg.stop_grad_encoders {
            zs[m].detach()?
        } else {
            zs[m].clone()
        };
        let out = model.vae_forward(sess, m, &z_in)?;
        kls.push(kl_diag_gauss_std(&out.mu, &out.log_var)?.mean(None)?);
        vae_outs.push(out);
    }

    // Monte Carlo over the frozen noise draws
    let inv_draws = 1.0 / eps.len() as f64;
    let mut head_acc: Option<Tensor> = None;
    let mut trb_acc: Vec<Option<Tensor>> = vec![None; modalities];
    let mut ratio_num: Vec<Vec<f64>> = vec![Vec::new(); modalities];
    for draw in eps {
        let mut zetas = Vec::with_capacity(modalities);
        for m in 0..modalities {
            let e = tape.matrix(&draw[m])?;
            zetas.push(reparameterize(&vae_outs[m], &e)?);
        }
        let xi = model.fuse(sess, &zetas.iter().collect::<Vec<_>>())?;
        let fused_preds = model.fused_predict(sess, &xi)?;
        let head_l = trb_loss(task, &fused_preds, &b.targets, model.svdd_fused.as_ref())?;
        head_acc = Some(match head_acc {
            None => head_l,
            Some(a) => a.add(&head_l)?,
        });

        let fused_mat = fused_preds.to_matrix();
        for m in 0..modalities {
            let preds = model.trb_predict(sess, m, &zs[m], &xi)?;
            let l = trb_loss(task, &preds, &b.targets, model.svdd_trb.get(m))?;
            trb_acc[m] = Some(match trb_acc[m].take() {
                None => l,
                Some(a) => a.add(&l)?,
            });
            // detached predictive divergences feed the dynamic weight
            ratio_num[m].extend(predictive_kl(task, &preds.to_matrix(), &fused_mat)?);
        }
    }
    let head_loss = head_acc.unwrap().scale(inv_draws)?;
    let trb_losses: Vec<Tensor> = trb_acc
        .into_iter()
        .map(|t| t.unwrap().scale(inv_draws))
        .collect::<Result<_>>()?;

    let r_values: Vec<f64> = match cfg.r_mode {
        RMode::Fixed(v) => vec![v; modalities - 1],
        RMode::Dynamic => (1..modalities)
            .map(|m| compute_r(&ratio_num[m], &ratio_num[0]))
            .collect::<Result<_>>()?,
    };

    // L_OMF = head + beta * (KL_1 + sum_j r_j KL_{j+1})
    let mut kl_term = kls[0].clone();
    for (j, r) in r_values.iter().enumerate() {
        kl_term = kl_term.add(&kls[j + 1].scale(*r)?)?;
    }
    let omf = head_loss.add(&kl_term.scale(beta)?)?;

    let mut total = omf.clone();
    for l in &trb_losses {
        total = total.add(l)?;
    }
    if task == TaskKind::Svdd {
        if let Some(pen) =
            param_penalty(&model.params, sess, &model.all_param_ids(), cfg.svdd_lambda)?
        {
            total = total.add(&pen)?;
        }
    }

    let diag = StepDiag {
        omf: omf.scalar_value(),
        head: head_loss.scalar_value(),
        kl: kls.iter().map(|k| k.scalar_value()).collect(),
        trb: trb_losses.iter().map(|t| t.scalar_value()).collect(),
        r: r_values,
    };
    Ok((total, diag))
}

/// Fusion loss on one batch with explicit weights; exposed for term-level
/// verification. Returns the loss tensor and (head, kl-per-modality)
/// diagnostics.
pub fn omf_loss(
    model: &OmibModel,
    batch: &TrainData,
    beta: f64,
    r_values: &[f64],
    eps: &[Vec<Matrix>],
) -> Result<(f64, f64, Vec<f64>)> {
    if r_values.len() + 1 != model.modalities() {
        return Err(Error::Config(format!(
            "expected {} r values, got {}",
            model.modalities() - 1,
            r_values.len()
        )));
    }
    let tape = Tape::new();
    let sess = model.params.bind(&tape);
    let cfg = TrainConfig {
        r_mode: RMode::Fixed(1.0),
        ..TrainConfig::default()
    };
    // reuse the step builder with fixed weights by substituting afterwards
    let task = model.cfg.task;
    let modalities = model.modalities();
    let mut zs = Vec::new();
    for m in 0..modalities {
        let x = tape.matrix(&batch.views[m])?;
        zs.push(model.encode(&sess, m, &x)?);
    }
    let mut kls = Vec::new();
    let mut vae_outs = Vec::new();
    for (m, z) in zs.iter().enumerate() {
        let out = model.vae_forward(&sess, m, z)?;
        kls.push(kl_diag_gauss_std(&out.mu, &out.log_var)?.mean(None)?);
        vae_outs.push(out);
    }
    let inv = 1.0 / eps.len() as f64;
    let mut head_acc: Option<Tensor> = None;
    for draw in eps {
        let mut zetas = Vec::new();
        for m in 0..modalities {
            let e = tape.matrix(&draw[m])?;
            zetas.push(reparameterize(&vae_outs[m], &e)?);
        }
        let xi = model.fuse(&sess, &zetas.iter().collect::<Vec<_>>())?;
        let preds = model.fused_predict(&sess, &xi)?;
        let l = trb_loss(task, &preds, &batch.targets, model.svdd_fused.as_ref())?;
        head_acc = Some(match head_acc {
            None => l,
            Some(a) => a.add(&l)?,
        });
    }
    let _ = cfg;
    let head = head_acc.unwrap().scale(inv)?;
    let mut kl_term = kls[0].clone();
    for (j, r) in r_values.iter().enumerate() {
        kl_term = kl_term.add(&kls[j + 1].scale(*r)?)?;
    }
    let loss = head.add(&kl_term.scale(beta)?)?;
    Ok((
        loss.scalar_value(),
        head.scalar_value(),
        kls.iter().map(|k| k.scalar_value()).collect(),
    ))
}

/// Budget for a standalone softmax classifier head; used by the
/// feature-ablation table and oracle baselines.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HeadTrainConfig {
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub hidden: usize,
    pub seed: u64,
}

impl HeadTrainConfig {
    pub fn from_train(cfg: &TrainConfig, hidden: usize, seed: u64) -> Self {
        HeadTrainConfig {
            epochs: cfg.main_epochs,
            batch: cfg.batch,
            lr: cfg.lr,
            hidden,
            seed,
        }
    }
}

/// Train `[d, hidden, classes]` under softmax cross-entropy and report test
/// accuracy. The head family matches the fused prediction head.
pub fn train_feature_classifier(
    x_train: &Matrix,
    y_train: &[usize],
    x_test: &Matrix,
    y_test: &[usize],
    classes: usize,
    cfg: &HeadTrainConfig,
) -> Result<f64> {
    if x_train.rows != y_train.len() || x_test.rows != y_test.len() {
        return Err(Error::Data("classifier rows and labels disagree".into()));
    }
    let mut ps = ParamSet::new();
    let mut rng = rng_from(derive_seed(cfg.seed, "head-init"));
    let head = crate::nn::Mlp::new(
        &mut ps,
        crate::nn::MlpConfig {
            widths: vec![x_train.cols, cfg.hidden, classes],
            activation: crate::nn::Activation::None,
            final_activation: crate::nn::Activation::None,
        },
        &mut rng,
    )?;
    let mut adam = Adam::new(AdamConfig::with_lr(cfg.lr), &ps);
    let mut train_rng = rng_from(derive_seed(cfg.seed, "head-train"));
    for _epoch in 0..cfg.epochs {
        for idx in batches(x_train.rows, cfg.batch, &mut train_rng) {
            let xb = x_train.take_rows(&idx);
            let yb: Vec<usize> = idx.iter().map(|&i| y_train[i]).collect();
            let tape = Tape::new();
            let sess = ps.bind(&tape);
            let logits = head.forward(&ps, &sess, &tape.matrix(&xb)?)?;
            let loss = softmax_cross_entropy(&logits, &yb)?;
            let grads = tape.backward(&loss)?;
            adam.step(&mut ps, &sess, &grads)?;
        }
    }
    // evaluate in chunks
    let mut preds = Vec::with_capacity(x_test.rows);
    let chunk = 4096;
    let mut start = 0;
    while start < x_test.rows {
        let len = chunk.min(x_test.rows - start);
        let idx: Vec<usize> = (start..start + len).collect();
        let tape = Tape::new();
        let sess = ps.bind(&tape);
        let logits = head.forward(&ps, &sess, &tape.matrix(&x_test.take_rows(&idx))?)?;
        preds.extend(crate::model::argmax_rows(&logits.to_matrix()));
        start += len;
    }
    metrics::accuracy(&preds, y_test)
}
