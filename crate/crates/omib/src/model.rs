//! Model assembly: per-modality task-relevance branches (encoder + head),
//! the fusion block (VAE heads, cross-attention, fused head), and
//! deterministic inference.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mat::{derive_seed, rng_from, Matrix};
use crate::nn::{Activation, CrossAttention, Mlp, MlpConfig, VaeHead, VaeHeadOutput};
use crate::tensor::{ParamId, ParamSet, Session, Tape, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskKind {
    Classification { classes: usize },
    Svdd,
    Regression,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Fusion-space width; also the encoder output width.
    pub k: usize,
    /// Hidden width of the task heads (classification).
    pub head_hidden: usize,
    pub task: TaskKind,
    pub input_dims: Vec<usize>,
    pub init_seed: u64,
}

impl ModelConfig {
    /// Classification config with published widths: encoders `[d, 256, 256]`
    /// with GELU, heads `[2k, 512, classes]`, fusion width 256.
    pub fn classification(input_dims: Vec<usize>, classes: usize, init_seed: u64) -> Self {
        ModelConfig {
            k: 256,
            head_hidden: 512,
            task: TaskKind::Classification { classes },
            input_dims,
            init_seed,
        }
    }

    /// One-class config: heads are `[in, 256, 256]` with LeakyReLU, scores
    /// are squared distances to a frozen center.
    pub fn svdd(input_dims: Vec<usize>, init_seed: u64) -> Self {
        ModelConfig {
            k: 256,
            head_hidden: 256,
            task: TaskKind::Svdd,
            input_dims,
            init_seed,
        }
    }

    pub fn modalities(&self) -> usize {
        self.input_dims.len()
    }

    fn head_out_width(&self) -> usize {
        match self.task {
            TaskKind::Classification { classes } => classes,
            TaskKind::Svdd => self.head_hidden,
            TaskKind::Regression => 1,
        }
    }

    fn head_cfg(&self, in_width: usize) -> MlpConfig {
        match self.task {
            // published head shape: a stack of two linear maps, softmax applied
            // in the loss
            TaskKind::Classification { .. } | TaskKind::Regression => MlpConfig {
                widths: vec![in_width, self.head_hidden, self.head_out_width()],
                activation: Activation::None,
                final_activation: Activation::None,
            },
            TaskKind::Svdd => MlpConfig {
                widths: vec![in_width, self.head_hidden, self.head_hidden],
                activation: Activation::LeakyRelu,
                final_activation: Activation::LeakyRelu,
            },
        }
    }
}

/// Frozen hypersphere center with the parameter-regularization weight.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SvddState {
    pub center: Vec<f64>,
    pub lambda: f64,
}

/// Columnwise mean of the given embeddings; the center is frozen afterwards.
pub fn svdd_center(embeddings: &Matrix) -> Result<Vec<f64>> {
    if embeddings.rows == 0 {
        return Err(Error::Data("svdd_center needs at least one embedding".into()));
    }
    let mut c = vec![0.0; embeddings.cols];
    for i in 0..embeddings.rows {
        for (acc, v) in c.iter_mut().zip(embeddings.row(i)) {
            *acc += v;
        }
    }
    for v in c.iter_mut() {
        *v /= embeddings.rows as f64;
    }
    Ok(c)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OmibModel {
    pub cfg: ModelConfig,
    #[serde(skip)]
    pub params: ParamSet,
    pub encoders: Vec<Mlp>,
    pub trb_heads: Vec<Mlp>,
    pub vaes: Vec<VaeHead>,
    pub can: CrossAttention,
    pub fused_head: Mlp,
    /// Per-modality centers (one-class task only), frozen after warm-up.
    pub svdd_trb: Vec<SvddState>,
    /// Fused-head center, frozen at the start of main training.
    pub svdd_fused: Option<SvddState>,
    /// Redundancy weight resolved for main training.
    pub beta: Option<f64>,
}

impl OmibModel {
    pub fn new(cfg: ModelConfig) -> Result<Self> {
        if cfg.modalities() < 2 || cfg.modalities() > 3 {
            return Err(Error::Config(format!(
                "model supports 2 or 3 modalities, got {}",
                cfg.modalities()
            )));
        }
        let mut params = ParamSet::new();
        let mut rng = rng_from(derive_seed(cfg.init_seed, "model-init"));
        let k = cfg.k;

        let mut encoders = Vec::new();
        let mut trb_heads = Vec::new();
        let mut vaes = Vec::new();
        for &d in &cfg.input_dims {
            encoders.push(Mlp::new(
                &mut params,
                MlpConfig {
                    widths: vec![d, k, k],
                    activation: Activation::Gelu,
                    final_activation: Activation::None,
                },
                &mut rng,
            )?);
            // branch heads consume [z_i, side] where side is noise (warm-up)
            // or the fused embedding (main), both of width k
            trb_heads.push(Mlp::new(&mut params, cfg.head_cfg(2 * k), &mut rng)?);
            vaes.push(VaeHead::new(&mut params, k, k, &mut rng)?);
        }
        let can = CrossAttention::new(&mut params, k, cfg.modalities(), &mut rng);
        let fused_head = Mlp::new(&mut params, cfg.head_cfg(k), &mut rng)?;

        Ok(OmibModel {
            cfg,
            params,
            encoders,
            trb_heads,
            vaes,
            can,
            fused_head,
            svdd_trb: Vec::new(),
            svdd_fused: None,
            beta: None,
        })
    }

    pub fn modalities(&self) -> usize {
        self.cfg.modalities()
    }

    /// Parameters of the warm-up phase (encoders and branch heads).
    pub fn branch_param_ids(&self) -> Vec<ParamId> {
        let mut ids = Vec::new();
        for e in &self.encoders {
            ids.extend(e.param_ids());
        }
        for h in &self.trb_heads {
            ids.extend(h.param_ids());
        }
        ids
    }

    pub fn all_param_ids(&self) -> Vec<ParamId> {
        let mut ids = self.branch_param_ids();
        for v in &self.vaes {
            ids.extend(v.param_ids());
        }
        ids.extend(self.can.param_ids());
        ids.extend(self.fused_head.param_ids());
        ids
    }

    pub fn encode(&self, sess: &Session, modality: usize, x: &Tensor) -> Result<Tensor> {
        self.encoders[modality].forward(&self.params, sess, x)
    }

    pub fn vae_forward(&self, sess: &Session, modality: usize, z: &Tensor) -> Result<VaeHeadOutput> {
        self.vaes[modality].forward(&self.params, sess, z)
    }

    pub fn trb_predict(&self, sess: &Session, modality: usize, z: &Tensor, side: &Tensor) -> Result<Tensor> {
        let joined = Tensor::concat(&[z, side], 1)?;
        self.trb_heads[modality].forward(&self.params, sess, &joined)
    }

    pub fn fuse(&self, sess: &Session, zetas: &[&Tensor]) -> Result<Tensor> {
        self.can.forward(&self.params, sess, zetas)
    }

    pub fn fused_predict(&self, sess: &Session, xi: &Tensor) -> Result<Tensor> {
        self.fused_head.forward(&self.params, sess, xi)
    }

    /// Deterministic fused embedding and prediction: the branches are unused
    /// and the Gaussian means stand in for samples (no noise at inference).
    pub fn infer(&self, views: &[&Matrix]) -> Result<InferenceOutput> {
        if views.len() != self.modalities() {
            return Err(Error::shape(
                "infer",
                format!("model has {} modalities, got {} views", self.modalities(), views.len()),
            ));
        }
        let n = views[0].rows;
        for (i, v) in views.iter().enumerate() {
            if v.rows != n {
                return Err(Error::shape("infer", "views disagree on row count".to_string()));
            }
            if v.cols != self.cfg.input_dims[i] {
                return Err(Error::shape(
                    "infer",
                    format!(
                        "view {i} width {} does not match encoder input {}",
                        v.cols, self.cfg.input_dims[i]
                    ),
                ));
            }
        }

        let k = self.cfg.k;
        let out_w = self.cfg.head_out_width();
        let mut xi_all = Matrix::zeros(n, k);
        let mut preds_all = Matrix::zeros(n, out_w);
        // chunk the pass to bound tape memory
        let chunk = 2048usize;
        let mut start = 0;
        while start < n {
            let len = chunk.min(n - start);
            let idx: Vec<usize> = (start..start + len).collect();
            let tape = Tape::new();
            let sess = self.params.bind(&tape);
            let mut mus = Vec::new();
            for (m, v) in views.iter().enumerate() {
                let x = tape.matrix(&v.take_rows(&idx))?;
                let z = self.encode(&sess, m, &x)?;
                let out = self.vae_forward(&sess, m, &z)?;
                mus.push(out.mu);
            }
            let xi = self.fuse(&sess, &mus.iter().collect::<Vec<_>>())?;
            let preds = self.fused_predict(&sess, &xi)?;

            let xd = xi.data();
            let pd = preds.data();
            xi_all.data[start * k..(start + len) * k].copy_from_slice(&xd);
            preds_all.data[start * out_w..(start + len) * out_w].copy_from_slice(&pd);
            start += len;
        }
        Ok(InferenceOutput {
            xi: xi_all,
            preds: preds_all,
        })
    }

    /// Predicted class indices (classification only).
    pub fn classify(&self, views: &[&Matrix]) -> Result<Vec<usize>> {
        match self.cfg.task {
            TaskKind::Classification { .. } => {}
            _ => return Err(Error::Config("classify requires a classification head".into())),
        }
        let out = self.infer(views)?;
        Ok(argmax_rows(&out.preds))
    }

    /// Squared distance to the frozen fused center, one score per row.
    pub fn anomaly_scores(&self, views: &[&Matrix]) -> Result<Vec<f64>> {
        let state = self
            .svdd_fused
            .as_ref()
            .ok_or_else(|| Error::Config("anomaly scores need a trained one-class model".into()))?;
        let out = self.infer(views)?;
        Ok((0..out.preds.rows)
            .map(|i| {
                out.preds
                    .row(i)
                    .iter()
                    .zip(&state.center)
                    .map(|(p, c)| (p - c) * (p - c))
                    .sum()
            })
            .collect())
    }

    /// Serialize config + architecture to `<stem>.json` and parameters to
    /// `<stem>.f64`.
    pub fn save(&self, stem: &Path) -> Result<()> {
        let meta = serde_json::to_value(self)?;
        let sizes = self.params.buffer_sizes();
        let mut raw = Vec::new();
        for i in 0..sizes.len() {
            let id = self.params.id_at(i);
            for v in self.params.value(id) {
                raw.extend_from_slice(&v.to_le_bytes());
            }
        }
        let doc = serde_json::json!({
            "schema_version": crate::synth::SCHEMA_VERSION,
            "model": meta,
            "param_sizes": sizes,
            "param_shapes": (0..sizes.len())
                .map(|i| self.params.shape(self.params.id_at(i)).to_vec())
                .collect::<Vec<_>>(),
        });
        fs::write(stem.with_extension("json"), serde_json::to_string_pretty(&doc)?)?;
        fs::write(stem.with_extension("f64"), raw)?;
        Ok(())
    }

    pub fn load(stem: &Path) -> Result<OmibModel> {
        let doc: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(stem.with_extension("json"))?)?;
        let mut model: OmibModel = serde_json::from_value(doc["model"].clone())?;
        let shapes: Vec<Vec<usize>> = serde_json::from_value(doc["param_shapes"].clone())?;
        let raw = fs::read(stem.with_extension("f64"))?;
        let mut params = ParamSet::new();
        let mut off = 0usize;
        for shape in &shapes {
            let len: usize = shape.iter().product();
            let bytes = raw
                .get(off * 8..(off + len) * 8)
                .ok_or_else(|| Error::Data("model parameter buffer truncated".into()))?;
            let data: Vec<f64> = bytes
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            params.add(shape, data);
            off += len;
        }
        model.params = params;
        Ok(model)
    }
}

pub struct InferenceOutput {
    pub xi: Matrix,
    pub preds: Matrix,
}

pub fn argmax_rows(m: &Matrix) -> Vec<usize> {
    (0..m.rows)
        .map(|i| {
            let row = m.row(i);
            let mut best = 0;
            for (j, v) in row.iter().enumerate() {
                if *v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_model() -> OmibModel {
        let mut cfg = ModelConfig::classification(vec![6, 5], 2, 3);
        cfg.k = 4;
        cfg.head_hidden = 8;
        OmibModel::new(cfg).unwrap()
    }

    #[test]
    fn inference_is_deterministic_and_shaped() {
        let model = tiny_model();
        let mut rng = rng_from(1);
        let v1 = Matrix::standard_normal(7, 6, &mut rng);
        let v2 = Matrix::standard_normal(7, 5, &mut rng);
        let a = model.infer(&[&v1, &v2]).unwrap();
        let b = model.infer(&[&v1, &v2]).unwrap();
        assert_eq!(a.xi.data, b.xi.data);
        assert_eq!(a.preds.rows, 7);
        assert_eq!(a.preds.cols, 2);
        assert_eq!(a.xi.cols, 4);
    }

    #[test]
    fn infer_rejects_wrong_widths() {
        let model = tiny_model();
        let mut rng = rng_from(2);
        let v1 = Matrix::standard_normal(3, 6, &mut rng);
        let bad = Matrix::standard_normal(3, 4, &mut rng);
        assert!(model.infer(&[&v1, &bad]).is_err());
        assert!(model.infer(&[&v1]).is_err());
    }

    #[test]
    fn svdd_center_examples() {
        let single = Matrix::new(1, 3, vec![1.0, -2.0, 0.5]);
        assert_eq!(svdd_center(&single).unwrap(), vec![1.0, -2.0, 0.5]);

        let pair = Matrix::new(2, 2, vec![3.0, -1.0, -3.0, 1.0]);
        assert_eq!(svdd_center(&pair).unwrap(), vec![0.0, 0.0]);

        assert!(svdd_center(&Matrix::zeros(0, 4)).is_err());
    }

    #[test]
    fn svdd_center_of_standard_normals_is_near_zero() {
        let mut rng = rng_from(9);
        let m = Matrix::standard_normal(1000, 6, &mut rng);
        let c = svdd_center(&m).unwrap();
        let bound = 3.0 / (1000f64).sqrt();
        for v in c {
            assert!(v.abs() < bound, "{v}");
        }
    }

    #[test]
    fn model_round_trips_through_files() {
        let dir = tempfile::tempdir().unwrap();
        let stem = dir.path().join("model");
        let model = tiny_model();
        let mut rng = rng_from(4);
        let v1 = Matrix::standard_normal(5, 6, &mut rng);
        let v2 = Matrix::standard_normal(5, 5, &mut rng);
        let before = model.infer(&[&v1, &v2]).unwrap();
        model.save(&stem).unwrap();
        let loaded = OmibModel::load(&stem).unwrap();
        let after = loaded.infer(&[&v1, &v2]).unwrap();
        assert_eq!(before.preds.data, after.preds.data);
    }

    #[test]
    fn anomaly_scores_are_nonnegative() {
        let mut cfg = ModelConfig::svdd(vec![6, 5], 3);
        cfg.k = 4;
        cfg.head_hidden = 4;
        let mut model = OmibModel::new(cfg).unwrap();
        model.svdd_fused = Some(SvddState {
            center: vec![0.1; 4],
            lambda: 1e-4,
        });
        let mut rng = rng_from(5);
        let v1 = Matrix::standard_normal(9, 6, &mut rng);
        let v2 = Matrix::standard_normal(9, 5, &mut rng);
        let scores = model.anomaly_scores(&[&v1, &v2]).unwrap();
        assert_eq!(scores.len(), 9);
        assert!(scores.iter().all(|s| *s >= 0.0));
    }
}
