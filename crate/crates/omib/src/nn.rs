//! Network building blocks: MLPs, VAE heads with reparameterization,
//! single-head cross-attention fusion, and the closed-form loss kernels.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mat::Matrix;
use crate::tensor::{ParamId, ParamSet, Session, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    Gelu,
    Relu,
    LeakyRelu,
    Tanh,
    None,
}

const LEAKY_SLOPE: f64 = 0.01;

pub fn apply_activation(x: &Tensor, act: Activation) -> Result<Tensor> {
    match act {
        Activation::Gelu => x.gelu(),
        Activation::Relu => x.relu(),
        // max(x, 0) + slope * min(x, 0), composed from relu and scale
        Activation::LeakyRelu => x.relu()?.sub(&x.neg()?.relu()?.scale(LEAKY_SLOPE)?),
        Activation::Tanh => x.tanh(),
        Activation::None => Ok(x.clone()),
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MlpConfig {
    /// Layer widths including input: `[in, h1, ..., out]`.
    pub widths: Vec<usize>,
    /// Activation between layers.
    pub activation: Activation,
    /// Activation after the last layer.
    pub final_activation: Activation,
}

impl MlpConfig {
    pub fn validate(&self) -> Result<()> {
        if self.widths.len() < 2 {
            return Err(Error::Config(format!(
                "mlp needs at least one linear layer, got widths {:?}",
                self.widths
            )));
        }
        if self.widths.iter().any(|&w| w == 0) {
            return Err(Error::Config("mlp widths must be positive".into()));
        }
        Ok(())
    }
}

/// Multi-layer perceptron; weights uniform Kaiming-style fan-in, biases zero.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Mlp {
    pub cfg: MlpConfig,
    weights: Vec<ParamId>,
    biases: Vec<ParamId>,
}

impl Mlp {
    pub fn new(ps: &mut ParamSet, cfg: MlpConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        cfg.validate()?;
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for win in cfg.widths.windows(2) {
            weights.push(ps.linear_weight(win[0], win[1], rng));
            biases.push(ps.zeros(&[1, win[1]]));
        }
        Ok(Mlp {
            cfg,
            weights,
            biases,
        })
    }

    pub fn input_width(&self) -> usize {
        self.cfg.widths[0]
    }

    pub fn output_width(&self) -> usize {
        *self.cfg.widths.last().unwrap()
    }

    pub fn forward(&self, ps: &ParamSet, sess: &Session, x: &Tensor) -> Result<Tensor> {
        let shape = x.shape();
        if shape.len() != 2 || shape[1] != self.input_width() {
            return Err(Error::shape(
                "mlp_forward",
                format!(
                    "input [{}x{}] does not match first layer width {}",
                    shape[0],
                    shape.get(1).copied().unwrap_or(0),
                    self.input_width()
                ),
            ));
        }
        let mut h = x.clone();
        let last = self.weights.len() - 1;
        for (i, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let wt = sess.tensor(ps, *w);
            let bt = sess.tensor(ps, *b);
            h = h.linear(&wt, &bt)?;
            let act = if i == last {
                self.cfg.final_activation
            } else {
                self.cfg.activation
            };
            h = apply_activation(&h, act)?;
        }
        Ok(h)
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        self.weights.iter().chain(&self.biases).copied().collect()
    }
}

/// Mean/log-variance pair produced by a [`VaeHead`].
pub struct VaeHeadOutput {
    pub mu: Tensor,
    pub log_var: Tensor,
}

/// Two-layer trunk with separate linear heads for the mean and the diagonal
/// log-variance of a Gaussian over the fusion space.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VaeHead {
    trunk: Mlp,
    mu_w: ParamId,
    mu_b: ParamId,
    lv_w: ParamId,
    lv_b: ParamId,
    k: usize,
}

impl VaeHead {
    pub fn new(ps: &mut ParamSet, in_dim: usize, k: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        let trunk = Mlp::new(
            ps,
            MlpConfig {
                widths: vec![in_dim, k, k],
                activation: Activation::Gelu,
                final_activation: Activation::Gelu,
            },
            rng,
        )?;
        Ok(VaeHead {
            trunk,
            mu_w: ps.linear_weight(k, k, rng),
            mu_b: ps.zeros(&[1, k]),
            lv_w: ps.linear_weight(k, k, rng),
            lv_b: ps.zeros(&[1, k]),
            k,
        })
    }

    pub fn forward(&self, ps: &ParamSet, sess: &Session, z: &Tensor) -> Result<VaeHeadOutput> {
        let h = self.trunk.forward(ps, sess, z)?;
        let mu = h.linear(&sess.tensor(ps, self.mu_w), &sess.tensor(ps, self.mu_b))?;
        let log_var = h.linear(&sess.tensor(ps, self.lv_w), &sess.tensor(ps, self.lv_b))?;
        Ok(VaeHeadOutput { mu, log_var })
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = self.trunk.param_ids();
        ids.extend([self.mu_w, self.mu_b, self.lv_w, self.lv_b]);
        ids
    }
}

/// `zeta = mu + exp(0.5 log_var) * eps`; gradients flow to `mu` and
/// `log_var`, never into the noise.
pub fn reparameterize(out: &VaeHeadOutput, eps: &Tensor) -> Result<Tensor> {
    let (sm, se) = (out.mu.shape(), eps.shape());
    if sm != se {
        return Err(Error::shape(
            "reparameterize",
            format!("mu [{},{}] vs eps [{},{}]", sm[0], sm[1], se[0], se[1]),
    ));
    }
    let sigma = out.log_var.scale(0.5)?.exp()?;
    out.mu.add(&sigma.mul(eps)?)
}

/// Single-head scaled dot-product attention over one token per modality,
/// followed by a linear map back to the fusion width.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CrossAttention {
    pub w_q: ParamId,
    pub w_k: ParamId,
    pub w_v: ParamId,
    pub w_out: ParamId,
    k: usize,
    modalities: usize,
}

impl CrossAttention {
    pub fn new(ps: &mut ParamSet, k: usize, modalities: usize, rng: &mut ChaCha8Rng) -> Self {
        CrossAttention {
            w_q: ps.linear_weight(k, k, rng),
            w_k: ps.linear_weight(k, k, rng),
            w_v: ps.linear_weight(k, k, rng),
            w_out: ps.linear_weight(modalities * k, k, rng),
            k,
            modalities,
        }
    }

    pub fn modalities(&self) -> usize {
        self.modalities
    }

    /// Fuse per-modality embeddings (each `[N x k]`) into `xi: [N x k]`.
    pub fn forward(&self, ps: &ParamSet, sess: &Session, zetas: &[&Tensor]) -> Result<Tensor> {
        if zetas.len() < 2 {
            return Err(Error::shape(
                "cross_attention",
                format!("needs at least 2 modalities, got {}", zetas.len()),
            ));
        }
        if zetas.len() != self.modalities {
            return Err(Error::shape(
                "cross_attention",
                format!("built for {} modalities, got {}", self.modalities, zetas.len()),
            ));
        }
        let shape0 = zetas[0].shape();
        for z in zetas {
            if z.shape() != shape0 {
                return Err(Error::shape(
                    "cross_attention",
                    "modality embeddings must share one shape".to_string(),
                ));
            }
        }
        let (n, k) = (shape0[0], shape0[1]);
        if k != self.k {
            return Err(Error::shape(
                "cross_attention",
                format!("embedding width {k} does not match attention width {}", self.k),
            ));
        }

        let wq = sess.tensor(ps, self.w_q);
        let wk = sess.tensor(ps, self.w_k);
        let wv = sess.tensor(ps, self.w_v);
        let qs: Vec<Tensor> = zetas.iter().map(|z| z.matmul(&wq)).collect::<Result<_>>()?;
        let ks: Vec<Tensor> = zetas.iter().map(|z| z.matmul(&wk)).collect::<Result<_>>()?;
        let vs: Vec<Tensor> = zetas.iter().map(|z| z.matmul(&wv)).collect::<Result<_>>()?;

        let inv_sqrt_k = 1.0 / (k as f64).sqrt();
        let mut heads = Vec::with_capacity(zetas.len());
        for q in &qs {
            // Per-sample scores against each modality token: [N x m].
            let mut score_cols = Vec::with_capacity(ks.len());
            for kk in &ks {
                score_cols.push(q.mul(kk)?.sum(Some(1))?.scale(inv_sqrt_k)?);
            }
            let scores = Tensor::concat(&score_cols.iter().collect::<Vec<_>>(), 1)?;
            let alpha = scores.softmax(1)?;
            // Weighted value mix.
            let mut out: Option<Tensor> = None;
            for (j, v) in vs.iter().enumerate() {
                let aj = alpha.slice(1, j, 1)?.broadcast_to(&[n, k])?;
                let term = aj.mul(v)?;
                out = Some(match out {
                    None => term,
                    Some(acc) => acc.add(&term)?,
                });
            }
            heads.push(out.unwrap());
        }
        let fused = Tensor::concat(&heads.iter().collect::<Vec<_>>(), 1)?;
        fused.matmul(&sess.tensor(ps, self.w_out))
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        vec![self.w_q, self.w_k, self.w_v, self.w_out]
    }
}

/// Per-sample `KL[N(mu, diag(exp(log_var))) || N(0, I)]`, shape `[N x 1]`.
///
/// `0.5 * sum_j (mu_j^2 + sigma_j^2 - 1 - log sigma_j^2)`; nonnegative.
pub fn kl_diag_gauss_std(mu: &Tensor, log_var: &Tensor) -> Result<Tensor> {
    let shape = mu.shape();
    if shape != log_var.shape() {
        return Err(Error::shape(
            "kl_diag_gauss_std",
            "mu/log_var shapes differ".to_string(),
        ));
    }
    let inner = mu.mul(mu)?.add(&log_var.exp()?)?.sub(log_var)?;
    let d = shape[1] as f64;
    inner.sum(Some(1))?.add_scalar(-d)?.scale(0.5)
}

/// `sum p ln(p/q)` with both operands clamped at 1e-12; nonnegative.
pub fn kl_categorical(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() || p.is_empty() {
        return Err(Error::shape(
            "kl_categorical",
            format!("support mismatch: {} vs {}", p.len(), q.len()),
        ));
    }
    let mut kl = 0.0;
    for (pi, qi) in p.iter().zip(q) {
        let pc = pi.max(1e-12);
        let qc = qi.max(1e-12);
        kl += pc * (pc / qc).ln();
    }
    Ok(kl)
}

/// Row-wise categorical KL between two `[N x C]` probability matrices.
pub fn kl_categorical_rows(p: &Matrix, q: &Matrix) -> Result<Vec<f64>> {
    if p.rows != q.rows || p.cols != q.cols {
        return Err(Error::shape(
            "kl_categorical",
            format!("support mismatch: {}x{} vs {}x{}", p.rows, p.cols, q.rows, q.cols),
        ));
    }
    (0..p.rows).map(|i| kl_categorical(p.row(i), q.row(i))).collect()
}

/// Mean over the batch of `-log softmax(logits)[label]`.
pub fn softmax_cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<Tensor> {
    let shape = logits.shape();
    if shape.len() != 2 || shape[0] != labels.len() {
        return Err(Error::shape(
            "softmax_cross_entropy",
            format!("logits [{:?}] vs {} labels", shape, labels.len()),
        ));
    }
    let classes = shape[1];
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::Data(format!(
            "label {bad} out of range for {classes} classes"
        )));
    }
    let mut onehot = vec![0.0; labels.len() * classes];
    for (i, &l) in labels.iter().enumerate() {
        onehot[i * classes + l] = 1.0;
    }
    let mask = logits.tape().constant(&shape, onehot)?;
    let logp = logits.softmax(1)?.log()?;
    mask.mul(&logp)?.sum(Some(1))?.mean(None)?.neg()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mat::{mean, rng_from};
    use crate::tensor::Tape;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn identity_single_layer_passes_input_through() {
        let mut ps = ParamSet::new();
        let mut rng = rng_from(0);
        let mlp = Mlp::new(
            &mut ps,
            MlpConfig {
                widths: vec![3, 3],
                activation: Activation::None,
                final_activation: Activation::None,
            },
            &mut rng,
        )
        .unwrap();
        // overwrite weight with identity
        let wid = mlp.param_ids()[0];
        let w = ps.value_mut(wid);
        w.fill(0.0);
        for i in 0..3 {
            w[i * 3 + i] = 1.0;
        }
        let tape = Tape::new();
        let sess = ps.bind(&tape);
        let x = tape.constant(&[2, 3], vec![1.0, -2.0, 3.0, 0.5, 0.0, -1.0]).unwrap();
        let y = mlp.forward(&ps, &sess, &x).unwrap();
        assert_eq!(y.data().as_ref(), x.data().as_ref());
    }

    #[test]
    fn zero_weight_net_outputs_bias() {
        let mut ps = ParamSet::new();
        let mut rng = rng_from(1);
        let mlp = Mlp::new(
            &mut ps,
            MlpConfig {
                widths: vec![4, 2],
                activation: Activation::None,
                final_activation: Activation::None,
            },
            &mut rng,
        )
        .unwrap();
        let ids = mlp.param_ids();
        ps.value_mut(ids[0]).fill(0.0);
        ps.value_mut(ids[1]).copy_from_slice(&[0.7, -0.3]);
        let tape = Tape::new();
        let sess = ps.bind(&tape);
        let x = tape.constant(&[3, 4], vec![1.0; 12]).unwrap();
        let y = mlp.forward(&ps, &sess, &x).unwrap();
        for r in 0..3 {
            assert_eq!(&y.data()[r * 2..r * 2 + 2], &[0.7, -0.3]);
        }
    }

    #[test]
    fn sim_encoder_shape_contract() {
        let mut ps = ParamSet::new();
        let mut rng = rng_from(2);
        let mlp = Mlp::new(
            &mut ps,
            MlpConfig {
                widths: vec![700, 256],
                activation: Activation::Gelu,
                final_activation: Activation::Gelu,
            },
            &mut rng,
        )
        .unwrap();
        let tape = Tape::new();
        let sess = ps.bind(&tape);
        let x = tape.constant(&[5, 700], vec![0.01; 5 * 700]).unwrap();
        let y = mlp.forward(&ps, &sess, &x).unwrap();
        assert_eq!(y.shape(), vec![5, 256]);

        let bad = tape.constant(&[5, 699], vec![0.0; 5 * 699]).unwrap();
        assert!(mlp.forward(&ps, &sess, &bad).is_err());
    }

    #[test]
    fn vae_head_zero_weights_yield_biases_and_positive_variance() {
        let mut ps = ParamSet::new();
        let mut rng = rng_from(3);
        let vae = VaeHead::new(&mut ps, 4, 4, &mut rng).unwrap();
        for id in vae.param_ids() {
            ps.value_mut(id).fill(0.0);
        }
        // set head biases
        let ids = vae.param_ids();
        let n_ids = ids.len();
        let mu_b = ids[n_ids - 3];
        let lv_b = ids[n_ids - 1];
        ps.value_mut(mu_b).copy_from_slice(&[1.0, 2.0, 3.0, 4.0]);
        ps.value_mut(lv_b).copy_from_slice(&[-1.0, 0.0, 1.0, 2.0]);

        let tape = Tape::new();
        let sess = ps.bind(&tape);
        let z = tape.constant(&[2, 4], vec![0.3; 8]).unwrap();
        let out = vae.forward(&ps, &sess, &z).unwrap();
        for r in 0..2 {
            assert_eq!(&out.mu.data()[r * 4..r * 4 + 4], &[1.0, 2.0, 3.0, 4.0]);
            assert_eq!(&out.log_var.data()[r * 4..r * 4 + 4], &[-1.0, 0.0, 1.0, 2.0]);
        }
        assert!(out.log_var.exp().unwrap().data().iter().all(|v| *v > 0.0));
    }

    #[test]
    fn reparameterize_trivial_cases() {
        let tape = Tape::new();
        // sigma -> 0 surrogate: log_var = -30
        let mu = tape.constant(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let lv = tape.constant(&[2, 2], vec![-30.0; 4]).unwrap();
        let eps = tape.constant(&[2, 2], vec![5.0, -5.0, 5.0, -5.0]).unwrap();
        let z = reparameterize(&VaeHeadOutput { mu: mu.clone(), log_var: lv }, &eps).unwrap();
        for (a, b) in z.data().iter().zip(mu.data().iter()) {
            assert!(close(*a, *b, 1e-5));
        }

        // mu = 0, log_var = 0 -> zeta = eps
        let mu0 = tape.constant(&[2, 2], vec![0.0; 4]).unwrap();
        let lv0 = tape.constant(&[2, 2], vec![0.0; 4]).unwrap();
        let z = reparameterize(&VaeHeadOutput { mu: mu0, log_var: lv0 }, &eps).unwrap();
        assert_eq!(z.data().as_ref(), eps.data().as_ref());
    }

    #[test]
    fn reparameterize_monte_carlo_moments() {
        let n = 100_000usize;
        let mut rng = rng_from(77);
        let tape = Tape::new();
        let mu_vals = [0.7, -1.2];
        let lv_vals = [0.4, -0.8];
        let mu = tape
            .constant(&[1, 2], mu_vals.to_vec())
            .unwrap()
            .broadcast_to(&[n, 2])
            .unwrap();
        let lv = tape
            .constant(&[1, 2], lv_vals.to_vec())
            .unwrap()
            .broadcast_to(&[n, 2])
            .unwrap();
        let eps_data: Vec<f64> = (0..n * 2).map(|_| rng.sample(StandardNormal)).collect();
        let eps = tape.constant(&[n, 2], eps_data).unwrap();
        let z = reparameterize(&VaeHeadOutput { mu, log_var: lv }, &eps).unwrap();
        let zd = z.data();
        for c in 0..2 {
            let col: Vec<f64> = (0..n).map(|r| zd[r * 2 + c]).collect();
            let m = mean(&col);
            let sigma = (lv_vals[c] as f64 * 0.5).exp();
            let se = 3.0 * sigma / (n as f64).sqrt();
            assert!(close(m, mu_vals[c], se), "mean {m} vs {} +- {se}", mu_vals[c]);
            let var = col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1) as f64;
            let want = lv_vals[c].exp();
            assert!(
                (var - want).abs() / want < 0.05,
                "var {var} vs {want}"
            );
        }
    }

    fn identity_can(ps: &mut ParamSet, k: usize, m: usize) -> CrossAttention {
        let mut rng = rng_from(9);
        let can = CrossAttention::new(ps, k, m, &mut rng);
        for w in [can.w_q, can.w_k, can.w_v] {
            let buf = ps.value_mut(w);
            buf.fill(0.0);
            for i in 0..k {
                buf[i * k + i] = 1.0;
            }
        }
        // w_out: average the modality blocks back to k dims
        let buf = ps.value_mut(can.w_out);
        buf.fill(0.0);
        for b in 0..m {
            for i in 0..k {
                buf[(b * k + i) * k + i] = 1.0 / m as f64;
            }
        }
        can
    }

    #[test]
    fn attention_over_identical_tokens_returns_the_common_value() {
        let mut ps = ParamSet::new();
        let can = identity_can(&mut ps, 3, 2);
        let tape = Tape::new();
        let sess = ps.bind(&tape);
        let z = tape
            .constant(&[2, 3], vec![0.5, -1.0, 2.0, 0.1, 0.2, 0.3])
            .unwrap();
        let xi = can.forward(&ps, &sess, &[&z, &z]).unwrap();
        for (a, b) in xi.data().iter().zip(z.data().iter()) {
            assert!(close(*a, *b, 1e-12));
        }
    }

    #[test]
    fn attention_output_shapes_and_input_validation() {
        let mut ps = ParamSet::new();
        let mut rng = rng_from(4);
        let can2 = CrossAttention::new(&mut ps, 8, 2, &mut rng);
        let can3 = CrossAttention::new(&mut ps, 8, 3, &mut rng);
        let tape = Tape::new();
        let sess = ps.bind(&tape);
        let mk = |seed: u64| {
            let mut r = rng_from(seed);
            let d: Vec<f64> = (0..5 * 8).map(|_| r.gen_range(-1.0..1.0)).collect();
            tape.constant(&[5, 8], d).unwrap()
        };
        let (a, b, c) = (mk(1), mk(2), mk(3));
        assert_eq!(can2.forward(&ps, &sess, &[&a, &b]).unwrap().shape(), vec![5, 8]);
        assert_eq!(can3.forward(&ps, &sess, &[&a, &b, &c]).unwrap().shape(), vec![5, 8]);
        assert!(can2.forward(&ps, &sess, &[&a]).is_err());
        let short = tape.constant(&[4, 8], vec![0.0; 32]).unwrap();
        assert!(can2.forward(&ps, &sess, &[&a, &short]).is_err());
    }

    #[test]
    fn attention_is_equivariant_to_batch_permutation() {
        let mut ps = ParamSet::new();
        let mut rng = rng_from(5);
        let can = CrossAttention::new(&mut ps, 4, 2, &mut rng);
        let tape = Tape::new();
        let sess = ps.bind(&tape);
        let d1: Vec<f64> = (0..12).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let d2: Vec<f64> = (0..12).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let perm = [2usize, 0, 1];
        let permute = |d: &[f64]| -> Vec<f64> {
            perm.iter().flat_map(|&r| d[r * 4..(r + 1) * 4].to_vec()).collect()
        };
        let a = tape.constant(&[3, 4], d1.clone()).unwrap();
        let b = tape.constant(&[3, 4], d2.clone()).unwrap();
        let xi = can.forward(&ps, &sess, &[&a, &b]).unwrap();
        let ap = tape.constant(&[3, 4], permute(&d1)).unwrap();
        let bp = tape.constant(&[3, 4], permute(&d2)).unwrap();
        let xip = can.forward(&ps, &sess, &[&ap, &bp]).unwrap();
        let want = permute(&xi.data());
        for (x, y) in xip.data().iter().zip(&want) {
            assert!(close(*x, *y, 1e-12));
        }
    }

    #[test]
    fn diag_gaussian_kl_closed_form_examples() {
        let tape = Tape::new();
        let mu = tape.constant(&[1, 1], vec![0.0]).unwrap();
        let lv = tape.constant(&[1, 1], vec![0.0]).unwrap();
        let kl = kl_diag_gauss_std(&mu, &lv).unwrap();
        assert!(close(kl.data()[0], 0.0, 1e-12));

        let mu = tape.constant(&[1, 1], vec![1.0]).unwrap();
        let lv = tape.constant(&[1, 1], vec![0.0]).unwrap();
        let kl = kl_diag_gauss_std(&mu, &lv).unwrap();
        assert!(close(kl.data()[0], 0.5, 1e-12));
    }

    #[test]
    fn diag_gaussian_kl_matches_monte_carlo() {
        // KL = E_q[ln q - ln p] estimated from 1e6 draws; agree within 1%.
        let mut rng = rng_from(123);
        let mu = [0.4, -0.9, 0.2];
        let lv = [0.3, -0.5, 0.0];
        let tape = Tape::new();
        let mu_t = tape.constant(&[1, 3], mu.to_vec()).unwrap();
        let lv_t = tape.constant(&[1, 3], lv.to_vec()).unwrap();
        let closed = kl_diag_gauss_std(&mu_t, &lv_t).unwrap().data()[0];

        let n = 1_000_000usize;
        let mut acc = 0.0;
        for _ in 0..n {
            let mut lr = 0.0;
            for j in 0..3 {
                let sigma = (0.5 * lv[j]).exp();
                let e: f64 = rng.sample(StandardNormal);
                let z = mu[j] + sigma * e;
                // ln q(z) - ln p(z) for diagonal Gaussians
                let ln_q = -0.5 * ((z - mu[j]) / sigma).powi(2) - sigma.ln();
                let ln_p = -0.5 * z * z;
                lr += ln_q - ln_p;
            }
            acc += lr;
        }
        let mc = acc / n as f64;
        assert!(
            (mc - closed).abs() / closed.abs() < 0.01,
            "mc {mc} vs closed {closed}"
        );
    }

    #[test]
    fn categorical_kl_examples() {
        assert!(close(kl_categorical(&[0.3, 0.7], &[0.3, 0.7]).unwrap(), 0.0, 1e-12));
        let v = kl_categorical(&[1.0, 0.0], &[0.5, 0.5]).unwrap();
        assert!(close(v, (2.0f64).ln(), 1e-6), "{v}");
        let v = kl_categorical(&[0.9, 0.1], &[0.5, 0.5]).unwrap();
        let want = 0.9 * (1.8f64).ln() + 0.1 * (0.2f64).ln();
        assert!(close(v, want, 1e-12));
        assert!(kl_categorical(&[0.5, 0.5], &[1.0]).is_err());
    }

    #[test]
    fn cross_entropy_examples() {
        let tape = Tape::new();
        let logits = tape.constant(&[1, 2], vec![0.0, 0.0]).unwrap();
        let l = softmax_cross_entropy(&logits, &[0]).unwrap();
        assert!(close(l.scalar_value(), (2.0f64).ln(), 1e-12));

        let peaked = tape.constant(&[1, 2], vec![30.0, 0.0]).unwrap();
        let l = softmax_cross_entropy(&peaked, &[0]).unwrap();
        assert!(l.scalar_value() < 1e-9);

        // batch of two mixed cases equals the mean of per-sample values
        let both = tape.constant(&[2, 2], vec![0.0, 0.0, 30.0, 0.0]).unwrap();
        let l = softmax_cross_entropy(&both, &[0, 0]).unwrap();
        let want = 0.5 * ((2.0f64).ln() + 0.0);
        assert!(close(l.scalar_value(), want, 1e-9));

        assert!(softmax_cross_entropy(&both, &[0, 5]).is_err());
    }

    #[test]
    fn uniform_logits_cross_entropy_gradient() {
        let mut ps = ParamSet::new();
        let logits = ps.add(&[1, 2], vec![0.0, 0.0]);
        let tape = Tape::new();
        let sess = ps.bind(&tape);
        let lt = sess.tensor(&ps, logits);
        let loss = softmax_cross_entropy(&lt, &[0]).unwrap();
        let grads = tape.backward(&loss).unwrap();
        let g = sess.grad(&grads, logits).unwrap();
        assert!(close(g[0], -0.5, 1e-12) && close(g[1], 0.5, 1e-12), "{g:?}");
    }

    #[test]
    fn fusion_and_vae_blocks_pass_gradient_check() {
        use crate::gradcheck::gradient_check;
        let mut rng = rng_from(21);
        let mut ps = ParamSet::new();
        let vae = VaeHead::new(&mut ps, 5, 4, &mut rng).unwrap();
        let can = CrossAttention::new(&mut ps, 4, 2, &mut rng);
        let z_data: Vec<f64> = (0..15).map(|i| (i as f64 * 0.31).cos()).collect();
        let eps_data: Vec<f64> = (0..12).map(|i| (i as f64 * 0.83).sin()).collect();

        let rel = gradient_check(
            &mut ps,
            move |ps, tape, sess| {
                let z = tape.constant(&[3, 5], z_data.clone())?;
                let out = vae.forward(ps, sess, &z)?;
                let eps = tape.constant(&[3, 4], eps_data.clone())?;
                let zeta = reparameterize(&out, &eps)?;
                let xi = can.forward(ps, sess, &[&zeta, &zeta])?;
                let kl = kl_diag_gauss_std(&out.mu, &out.log_var)?;
                xi.mul(&xi)?.mean(None)?.add(&kl.mean(None)?.scale(0.01)?)
            },
            1e-6,
            16,
            13,
        )
        .unwrap();
        assert!(rel < 1e-5, "rel = {rel}");
    }

    #[test]
    fn leaky_relu_matches_definition() {
        let tape = Tape::new();
        let x = tape.constant(&[1, 4], vec![-2.0, -0.5, 0.5, 2.0]).unwrap();
        let y = apply_activation(&x, Activation::LeakyRelu).unwrap();
        let want = [-0.02, -0.005, 0.5, 2.0];
        for (a, b) in y.data().iter().zip(&want) {
            assert!(close(*a, *b, 1e-12));
        }
    }
}
