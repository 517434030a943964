//! Seeded Gaussian benchmark generators.
//!
//! Two-modality datasets follow the block layout `x1 = [b0; b1; a0; a1]`,
//! `x2 = [b0; b2; a0; a2]`: `a0`/`b0` are shared across modalities,
//! `a1`/`a2` are modality-specific task-relevant blocks, `b1`/`b2`
//! modality-specific superfluous blocks. Labels come from a random
//! hyperplane over the concatenated task-relevant blocks only. Every block
//! is drawn from its own named sub-stream of the dataset seed, so
//! regenerating superfluous blocks under a different sub-seed provably
//! cannot move a label.
//!
//! The three-modality generator mirrors the same idea with a full Venn
//! structure: one block shared by all three modalities, one per pair, and
//! one per modality, for both task-relevant and superfluous content.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mat::{derive_seed, permutation, rng_from, Matrix};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimConfig {
    /// Shared task-relevant width (a0).
    pub d0: usize,
    /// Shared superfluous width (b0).
    pub d0p: usize,
    /// Modality-1 task-relevant width (a1).
    pub d11: usize,
    /// Modality-1 superfluous width (b1).
    pub d12: usize,
    /// Modality-2 task-relevant width (a2).
    pub d21: usize,
    /// Modality-2 superfluous width (b2).
    pub d22: usize,
    pub n: usize,
    pub seed: u64,
    pub train_fraction: f64,
}

impl SimConfig {
    /// Named presets; superfluous modality-specific widths default to 200.
    pub fn preset(name: &str, n: usize, seed: u64) -> Result<SimConfig> {
        let base = SimConfig {
            d0: 200,
            d0p: 200,
            d11: 500,
            d12: 200,
            d21: 100,
            d22: 200,
            n,
            seed,
            train_fraction: 0.9,
        };
        match name {
            "sim1" => Ok(base),
            // sim2 swaps which modality dominates in task-relevant width
            "sim2" => Ok(SimConfig {
                d11: 100,
                d21: 500,
                ..base
            }),
            // sim3 balances task-relevant information across modalities
            "sim3" => Ok(SimConfig {
                d11: 300,
                d21: 300,
                ..base
            }),
            other => Err(Error::Config(format!(
                "unknown two-modality preset '{other}'"
            ))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::Config("n must be positive".into()));
        }
        if self.d0 + self.d11 + self.d21 == 0 {
            return Err(Error::Config(
                "label must depend on something: d0 + d11 + d21 >= 1".into(),
            ));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::Config("train fraction must lie in (0, 1)".into()));
        }
        Ok(())
    }

    pub fn layout(&self) -> SimLayout {
        SimLayout {
            d0: self.d0,
            d0p: self.d0p,
            d11: self.d11,
            d12: self.d12,
            d21: self.d21,
            d22: self.d22,
        }
    }
}

/// Recorded sub-vector offsets; the ground truth for oracle feature views.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimLayout {
    pub d0: usize,
    pub d0p: usize,
    pub d11: usize,
    pub d12: usize,
    pub d21: usize,
    pub d22: usize,
}

impl SimLayout {
    pub fn x1_width(&self) -> usize {
        self.d0p + self.d12 + self.d0 + self.d11
    }

    pub fn x2_width(&self) -> usize {
        self.d0p + self.d22 + self.d0 + self.d21
    }

    /// (start, len) of blocks within x1, order [b0; b1; a0; a1].
    pub fn x1_blocks(&self) -> [(usize, usize); 4] {
        let b0 = (0, self.d0p);
        let b1 = (b0.0 + b0.1, self.d12);
        let a0 = (b1.0 + b1.1, self.d0);
        let a1 = (a0.0 + a0.1, self.d11);
        [b0, b1, a0, a1]
    }

    /// (start, len) of blocks within x2, order [b0; b2; a0; a2].
    pub fn x2_blocks(&self) -> [(usize, usize); 4] {
        let b0 = (0, self.d0p);
        let b2 = (b0.0 + b0.1, self.d22);
        let a0 = (b2.0 + b2.1, self.d0);
        let a2 = (a0.0 + a0.1, self.d21);
        [b0, b2, a0, a2]
    }
}

/// Oracle column selections used by the feature-ablation table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeatureView {
    /// a0 only.
    ConsistentRelevant,
    /// [a1; a2].
    SpecificRelevant,
    /// All of x1.
    Unimodal1,
    /// All of x2.
    Unimodal2,
    /// [a0; a1; a2] — everything the label depends on, nothing else.
    AuthenticOptimal,
    /// [a0; b0; a1; b1; a2; b2].
    Union,
}

impl FeatureView {
    pub const ALL: [FeatureView; 6] = [
        FeatureView::ConsistentRelevant,
        FeatureView::SpecificRelevant,
        FeatureView::Unimodal1,
        FeatureView::Unimodal2,
        FeatureView::AuthenticOptimal,
        FeatureView::Union,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            FeatureView::ConsistentRelevant => "consistent-relevant",
            FeatureView::SpecificRelevant => "specific-relevant",
            FeatureView::Unimodal1 => "unimodal-1",
            FeatureView::Unimodal2 => "unimodal-2",
            FeatureView::AuthenticOptimal => "authentic-optimal",
            FeatureView::Union => "union",
        }
    }

    pub fn parse(s: &str) -> Result<FeatureView> {
        FeatureView::ALL
            .iter()
            .copied()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown feature view '{s}'")))
    }
}

/// Two-modality dataset with the generating structure retained.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimDataset {
    pub x1: Matrix,
    pub x2: Matrix,
    pub y: Vec<u8>,
    pub delta: Vec<f64>,
    pub layout: SimLayout,
    pub seed: u64,
    pub preset: String,
    pub train_fraction: f64,
}

impl SimDataset {
    pub fn n(&self) -> usize {
        self.y.len()
    }

    fn a_blocks(&self) -> (Matrix, Matrix, Matrix) {
        let l = &self.layout;
        let [_, _, a0r, a1r] = l.x1_blocks();
        let [_, _, _, a2r] = l.x2_blocks();
        (
            self.x1.col_block(a0r.0, a0r.1),
            self.x1.col_block(a1r.0, a1r.1),
            self.x2.col_block(a2r.0, a2r.1),
        )
    }

    /// Labels the hyperplane `delta` would assign to this data.
    pub fn labels_for_delta(&self, delta: &[f64]) -> Vec<u8> {
        let (a0, a1, a2) = self.a_blocks();
        label_rows(&[&a0, &a1, &a2], delta)
    }
}

fn label_rows(blocks: &[&Matrix], delta: &[f64]) -> Vec<u8> {
    let n = blocks[0].rows;
    let total: usize = blocks.iter().map(|b| b.cols).sum();
    assert_eq!(total, delta.len(), "hyperplane width mismatch");
    let mut y = Vec::with_capacity(n);
    for i in 0..n {
        let mut dot = 0.0;
        let mut off = 0;
        for b in blocks {
            let row = b.row(i);
            for (v, d) in row.iter().zip(&delta[off..off + b.cols]) {
                dot += v * d;
            }
            off += b.cols;
        }
        y.push(if dot > 0.0 { 1 } else { 0 });
    }
    y
}

fn block(seed: u64, tag: &str, rows: usize, cols: usize) -> Matrix {
    let mut rng = rng_from(derive_seed(seed, tag));
    Matrix::standard_normal(rows, cols, &mut rng)
}

/// Generate a two-modality dataset; deterministic in `cfg.seed`.
pub fn generate_sim(cfg: &SimConfig) -> Result<SimDataset> {
    generate_sim_named(cfg, "custom")
}

pub fn generate_sim_named(cfg: &SimConfig, preset: &str) -> Result<SimDataset> {
    cfg.validate()?;
    let n = cfg.n;
    let a0 = block(cfg.seed, "a0", n, cfg.d0);
    let b0 = block(cfg.seed, "b0", n, cfg.d0p);
    let a1 = block(cfg.seed, "a1", n, cfg.d11);
    let b1 = block(cfg.seed, "b1", n, cfg.d12);
    let a2 = block(cfg.seed, "a2", n, cfg.d21);
    let b2 = block(cfg.seed, "b2", n, cfg.d22);
    let delta = {
        let mut rng = rng_from(derive_seed(cfg.seed, "delta"));
        Matrix::standard_normal(1, cfg.d0 + cfg.d11 + cfg.d21, &mut rng).data
    };

    let y = label_rows(&[&a0, &a1, &a2], &delta);
    let x1 = Matrix::hcat(&[&b0, &b1, &a0, &a1]);
    let x2 = Matrix::hcat(&[&b0, &b2, &a0, &a2]);
    Ok(SimDataset {
        x1,
        x2,
        y,
        delta,
        layout: cfg.layout(),
        seed: cfg.seed,
        preset: preset.to_string(),
        train_fraction: cfg.train_fraction,
    })
}

/// Column slices assembled from the recorded layout.
pub fn oracle_feature_view(ds: &SimDataset, view: FeatureView) -> Matrix {
    let l = &ds.layout;
    let [b0r, b1r, a0r, a1r] = l.x1_blocks();
    let [_, b2r, _, a2r] = l.x2_blocks();
    let take1 = |r: (usize, usize)| ds.x1.col_block(r.0, r.1);
    let take2 = |r: (usize, usize)| ds.x2.col_block(r.0, r.1);
    match view {
        FeatureView::ConsistentRelevant => take1(a0r),
        FeatureView::SpecificRelevant => Matrix::hcat(&[&take1(a1r), &take2(a2r)]),
        FeatureView::Unimodal1 => ds.x1.clone(),
        FeatureView::Unimodal2 => ds.x2.clone(),
        FeatureView::AuthenticOptimal => Matrix::hcat(&[&take1(a0r), &take1(a1r), &take2(a2r)]),
        FeatureView::Union => Matrix::hcat(&[
            &take1(a0r),
            &take1(b0r),
            &take1(a1r),
            &take1(b1r),
            &take2(a2r),
            &take2(b2r),
        ]),
    }
}

/// Disjoint seeded split preserving layout and generating metadata.
pub fn split_train_test(ds: &SimDataset, fraction: f64) -> Result<(SimDataset, SimDataset)> {
    let (train_idx, test_idx) = split_indices(ds.n(), fraction, ds.seed)?;
    Ok((subset(ds, &train_idx), subset(ds, &test_idx)))
}

pub fn split_indices(n: usize, fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Config(format!("split fraction {fraction} not in (0, 1)")));
    }
    let n_train = (n as f64 * fraction).round() as usize;
    if n_train == 0 || n_train == n {
        return Err(Error::Config(format!(
            "split of {n} rows at fraction {fraction} leaves an empty side"
        )));
    }
    let mut rng = rng_from(derive_seed(seed, "split"));
    let perm = permutation(n, &mut rng);
    Ok((perm[..n_train].to_vec(), perm[n_train..].to_vec()))
}

fn subset(ds: &SimDataset, idx: &[usize]) -> SimDataset {
    SimDataset {
        x1: ds.x1.take_rows(idx),
        x2: ds.x2.take_rows(idx),
        y: idx.iter().map(|&i| ds.y[i]).collect(),
        delta: ds.delta.clone(),
        layout: ds.layout,
        seed: ds.seed,
        preset: ds.preset.clone(),
        train_fraction: ds.train_fraction,
    }
}

// ---------------------------------------------------------------------------
// Three modalities
// ---------------------------------------------------------------------------

/// Dims of the three-modality Venn structure. `a00`/`b00` are shared by all
/// three modalities, `aij`/`bij` by pairs, `aii`/`bii` are specific.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Sim3Config {
    pub d_a00: usize,
    pub d_aii: usize,
    pub d_aij: usize,
    pub d_b00: usize,
    pub d_bii: usize,
    pub d_bij: usize,
    pub n: usize,
    pub seed: u64,
    pub train_fraction: f64,
}

impl Sim3Config {
    pub fn preset(name: &str, n: usize, seed: u64) -> Result<Sim3Config> {
        match name {
            "sim3mod" => Ok(Sim3Config {
                d_a00: 100,
                d_aii: 100,
                d_aij: 50,
                d_b00: 100,
                d_bii: 100,
                d_bij: 0,
                n,
                seed,
                train_fraction: 0.9,
            }),
            other => Err(Error::Config(format!(
                "unknown three-modality preset '{other}'"
            ))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::Config("n must be positive".into()));
        }
        if self.d_a00 + self.d_aii + self.d_aij == 0 {
            return Err(Error::Config("label must depend on some a-block".into()));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::Config("train fraction must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

/// Block names in canonical label order.
const A3_TAGS: [&str; 7] = ["a00", "a11", "a22", "a33", "a12", "a13", "a23"];
const B3_TAGS: [&str; 7] = ["b00", "b11", "b22", "b33", "b12", "b13", "b23"];

/// Per-modality block membership (indices into the tag arrays), in the
/// layout order used for x_i: [b00, bii, bij..], then [a00, aii, aij..].
const MODALITY_BLOCKS: [[usize; 4]; 3] = [
    [0, 1, 4, 5], // v1: 00, 11, 12, 13
    [0, 2, 4, 6], // v2: 00, 22, 12, 23
    [0, 3, 5, 6], // v3: 00, 33, 13, 23
];

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Sim3Dataset {
    pub xs: Vec<Matrix>,
    pub y: Vec<u8>,
    pub delta: Vec<f64>,
    pub cfg: Sim3Config,
    pub preset: String,
}

impl Sim3Dataset {
    pub fn n(&self) -> usize {
        self.y.len()
    }

    fn block_dim(cfg: &Sim3Config, tag_idx: usize, relevant: bool) -> usize {
        let (d00, dii, dij) = if relevant {
            (cfg.d_a00, cfg.d_aii, cfg.d_aij)
        } else {
            (cfg.d_b00, cfg.d_bii, cfg.d_bij)
        };
        match tag_idx {
            0 => d00,
            1..=3 => dii,
            _ => dij,
        }
    }

    /// (start, len) of each of the 8 blocks of x_i: 4 superfluous then 4
    /// relevant, in `MODALITY_BLOCKS` order.
    pub fn x_blocks(&self, modality: usize) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(8);
        let mut off = 0;
        for relevant in [false, true] {
            for &t in &MODALITY_BLOCKS[modality] {
                let d = Self::block_dim(&self.cfg, t, relevant);
                out.push((off, d));
                off += d;
            }
        }
        out
    }

    /// All task-relevant blocks in canonical order: the oracle view.
    pub fn authentic_view(&self) -> Matrix {
        // a00 from x1, a11 from x1, a22 from x2, a33 from x3, a12 from x1,
        // a13 from x1, a23 from x2.
        let pick = [
            (0usize, 4usize),
            (0, 5),
            (1, 5),
            (2, 5),
            (0, 6),
            (0, 7),
            (1, 7),
        ];
        let blocks: Vec<Matrix> = pick
            .iter()
            .map(|&(m, b)| {
                let (s, l) = self.x_blocks(m)[b];
                self.xs[m].col_block(s, l)
            })
            .collect();
        Matrix::hcat(&blocks.iter().collect::<Vec<_>>())
    }
}

/// Generate the three-modality dataset mirroring the pairwise-shared Venn
/// structure; labels come from a hyperplane over all a-blocks.
pub fn generate_sim3(cfg: &Sim3Config) -> Result<Sim3Dataset> {
    generate_sim3_named(cfg, "custom3")
}

pub fn generate_sim3_named(cfg: &Sim3Config, preset: &str) -> Result<Sim3Dataset> {
    cfg.validate()?;
    let n = cfg.n;
    let a_blocks: Vec<Matrix> = A3_TAGS
        .iter()
        .enumerate()
        .map(|(i, tag)| block(cfg.seed, tag, n, Sim3Dataset::block_dim(cfg, i, true)))
        .collect();
    let b_blocks: Vec<Matrix> = B3_TAGS
        .iter()
        .enumerate()
        .map(|(i, tag)| block(cfg.seed, tag, n, Sim3Dataset::block_dim(cfg, i, false)))
        .collect();
    let label_dim: usize = a_blocks.iter().map(|b| b.cols).sum();
    let delta = {
        let mut rng = rng_from(derive_seed(cfg.seed, "delta"));
        Matrix::standard_normal(1, label_dim, &mut rng).data
    };
    let y = label_rows(&a_blocks.iter().collect::<Vec<_>>(), &delta);

    let xs = (0..3)
        .map(|m| {
            let mut parts: Vec<&Matrix> = Vec::with_capacity(8);
            for &t in &MODALITY_BLOCKS[m] {
                parts.push(&b_blocks[t]);
            }
            for &t in &MODALITY_BLOCKS[m] {
                parts.push(&a_blocks[t]);
            }
            Matrix::hcat(&parts)
        })
        .collect();

    Ok(Sim3Dataset {
        xs,
        y,
        delta,
        cfg: cfg.clone(),
        preset: preset.to_string(),
    })
}

pub fn split3_train_test(ds: &Sim3Dataset, fraction: f64) -> Result<(Sim3Dataset, Sim3Dataset)> {
    let (train_idx, test_idx) = split_indices(ds.n(), fraction, ds.cfg.seed)?;
    let take = |idx: &[usize]| Sim3Dataset {
        xs: ds.xs.iter().map(|x| x.take_rows(idx)).collect(),
        y: idx.iter().map(|&i| ds.y[i]).collect(),
        delta: ds.delta.clone(),
        cfg: ds.cfg.clone(),
        preset: ds.preset.clone(),
    };
    Ok((take(&train_idx), take(&test_idx)))
}

// ---------------------------------------------------------------------------
// Persistence: <stem>.f64 (raw little-endian doubles) + <stem>.json sidecar
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetSidecar {
    pub schema_version: u32,
    pub kind: String,
    pub preset: String,
    pub seed: u64,
    pub train_fraction: f64,
    pub n: usize,
    /// (name, rows, cols, element offset into the .f64 buffer)
    pub matrices: Vec<(String, usize, usize, usize)>,
    pub layout: serde_json::Value,
    pub delta_offset: usize,
    pub delta_len: usize,
    pub y_offset: usize,
}

/// Either arity, as loaded from disk.
#[derive(Debug, Clone)]
pub enum Dataset {
    Two(SimDataset),
    Three(Sim3Dataset),
}

impl Dataset {
    pub fn views(&self) -> Vec<&Matrix> {
        match self {
            Dataset::Two(d) => vec![&d.x1, &d.x2],
            Dataset::Three(d) => d.xs.iter().collect(),
        }
    }

    pub fn labels(&self) -> &[u8] {
        match self {
            Dataset::Two(d) => &d.y,
            Dataset::Three(d) => &d.y,
        }
    }

    pub fn n(&self) -> usize {
        self.labels().len()
    }

    pub fn modalities(&self) -> usize {
        self.views().len()
    }

    pub fn train_fraction(&self) -> f64 {
        match self {
            Dataset::Two(d) => d.train_fraction,
            Dataset::Three(d) => d.cfg.train_fraction,
        }
    }

    pub fn seed(&self) -> u64 {
        match self {
            Dataset::Two(d) => d.seed,
            Dataset::Three(d) => d.cfg.seed,
        }
    }
}

fn write_f64s(buf: &mut Vec<u8>, xs: &[f64]) {
    for v in xs {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

fn read_f64s(bytes: &[u8], offset: usize, len: usize) -> Result<Vec<f64>> {
    let start = offset * 8;
    let end = start + len * 8;
    if end > bytes.len() {
        return Err(Error::Data(format!(
            "raw buffer too short: need {end} bytes, have {}",
            bytes.len()
        )));
    }
    Ok(bytes[start..end]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

/// Write `<stem>.f64` + `<stem>.json`.
pub fn save_dataset(stem: &Path, ds: &Dataset) -> Result<()> {
    let mut raw = Vec::new();
    let mut matrices = Vec::new();
    let mut offset = 0usize;
    let (kind, preset, seed, train_fraction, n, layout, delta, y): (
        &str,
        String,
        u64,
        f64,
        usize,
        serde_json::Value,
        &[f64],
        &[u8],
    ) = match ds {
        Dataset::Two(d) => {
            for (name, m) in [("x1", &d.x1), ("x2", &d.x2)] {
                matrices.push((name.to_string(), m.rows, m.cols, offset));
                write_f64s(&mut raw, &m.data);
                offset += m.data.len();
            }
            (
                "sim2",
                d.preset.clone(),
                d.seed,
                d.train_fraction,
                d.n(),
                serde_json::to_value(d.layout)?,
                &d.delta,
                &d.y,
            )
        }
        Dataset::Three(d) => {
            for (i, m) in d.xs.iter().enumerate() {
                matrices.push((format!("x{}", i + 1), m.rows, m.cols, offset));
                write_f64s(&mut raw, &m.data);
                offset += m.data.len();
            }
            (
                "sim3",
                d.preset.clone(),
                d.cfg.seed,
                d.cfg.train_fraction,
                d.n(),
                serde_json::to_value(&d.cfg)?,
                &d.delta,
                &d.y,
            )
        }
    };
    let delta_offset = offset;
    write_f64s(&mut raw, delta);
    offset += delta.len();
    let y_offset = offset;
    let y_f64: Vec<f64> = y.iter().map(|&v| v as f64).collect();
    write_f64s(&mut raw, &y_f64);

    let sidecar = DatasetSidecar {
        schema_version: SCHEMA_VERSION,
        kind: kind.to_string(),
        preset,
        seed,
        train_fraction,
        n,
        matrices,
        layout,
        delta_offset,
        delta_len: delta.len(),
        y_offset,
    };
    fs::write(stem.with_extension("f64"), &raw)?;
    fs::write(
        stem.with_extension("json"),
        serde_json::to_string_pretty(&sidecar)?,
    )?;
    Ok(())
}

/// Load a dataset previously written by [`save_dataset`]; bit-exact.
pub fn load_dataset(stem: &Path) -> Result<Dataset> {
    let sidecar_path = stem.with_extension("json");
    let raw_path = stem.with_extension("f64");
    if !sidecar_path.exists() || !raw_path.exists() {
        return Err(Error::Data(format!(
            "dataset '{}' not found (need .json and .f64)",
            stem.display()
        )));
    }
    let sidecar: DatasetSidecar = serde_json::from_str(&fs::read_to_string(sidecar_path)?)?;
    if sidecar.schema_version != SCHEMA_VERSION {
        return Err(Error::Data(format!(
            "unsupported dataset schema version {}",
            sidecar.schema_version
        )));
    }
    let raw = fs::read(raw_path)?;
    let mut mats = Vec::new();
    for (_, rows, cols, off) in &sidecar.matrices {
        mats.push(Matrix::new(*rows, *cols, read_f64s(&raw, *off, rows * cols)?));
    }
    let delta = read_f64s(&raw, sidecar.delta_offset, sidecar.delta_len)?;
    let y: Vec<u8> = read_f64s(&raw, sidecar.y_offset, sidecar.n)?
        .into_iter()
        .map(|v| v as u8)
        .collect();

    match sidecar.kind.as_str() {
        "sim2" => {
            let layout: SimLayout = serde_json::from_value(sidecar.layout)?;
            let mut it = mats.into_iter();
            Ok(Dataset::Two(SimDataset {
                x1: it.next().ok_or_else(|| Error::Data("missing x1".into()))?,
                x2: it.next().ok_or_else(|| Error::Data("missing x2".into()))?,
                y,
                delta,
                layout,
                seed: sidecar.seed,
                preset: sidecar.preset,
                train_fraction: sidecar.train_fraction,
            }))
        }
        "sim3" => {
            let cfg: Sim3Config = serde_json::from_value(sidecar.layout)?;
            Ok(Dataset::Three(Sim3Dataset {
                xs: mats,
                y,
                delta,
                cfg,
                preset: sidecar.preset,
            }))
        }
        other => Err(Error::Data(format!("unknown dataset kind '{other}'"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg(seed: u64) -> SimConfig {
        SimConfig {
            d0: 8,
            d0p: 6,
            d11: 10,
            d12: 4,
            d21: 5,
            d22: 3,
            n: 500,
            seed,
            train_fraction: 0.9,
        }
    }

    #[test]
    fn presets_match_published_dims() {
        let s1 = SimConfig::preset("sim1", 10_000, 7).unwrap();
        assert_eq!((s1.d0, s1.d0p, s1.d11, s1.d21), (200, 200, 500, 100));
        let s2 = SimConfig::preset("sim2", 10_000, 7).unwrap();
        assert_eq!((s2.d11, s2.d21), (100, 500));
        let s3 = SimConfig::preset("sim3", 10_000, 7).unwrap();
        assert_eq!((s3.d11, s3.d21), (300, 300));
        assert!(SimConfig::preset("sim9", 10, 7).is_err());
    }

    #[test]
    fn generation_is_deterministic() {
        let cfg = small_cfg(42);
        let a = generate_sim(&cfg).unwrap();
        let b = generate_sim(&cfg).unwrap();
        assert_eq!(a.x1.data, b.x1.data);
        assert_eq!(a.x2.data, b.x2.data);
        assert_eq!(a.y, b.y);
        assert_eq!(a.delta, b.delta);
    }

    #[test]
    fn shared_blocks_are_bit_identical_across_modalities() {
        let ds = generate_sim(&small_cfg(1)).unwrap();
        let [b0_1, _, a0_1, _] = ds.layout.x1_blocks();
        let [b0_2, _, a0_2, _] = ds.layout.x2_blocks();
        assert_eq!(
            ds.x1.col_block(a0_1.0, a0_1.1).data,
            ds.x2.col_block(a0_2.0, a0_2.1).data
        );
        assert_eq!(
            ds.x1.col_block(b0_1.0, b0_1.1).data,
            ds.x2.col_block(b0_2.0, b0_2.1).data
        );
    }

    #[test]
    fn label_balance_near_half_at_ten_thousand() {
        let cfg = SimConfig::preset("sim1", 10_000, 11).unwrap();
        let ds = generate_sim_named(&cfg, "sim1").unwrap();
        let pos = ds.y.iter().filter(|&&v| v == 1).count() as f64 / ds.n() as f64;
        assert!((0.48..=0.52).contains(&pos), "balance {pos}");
    }

    #[test]
    fn flipping_delta_flips_every_label() {
        let ds = generate_sim(&small_cfg(3)).unwrap();
        let neg: Vec<f64> = ds.delta.iter().map(|v| -v).collect();
        let flipped = ds.labels_for_delta(&neg);
        for (a, b) in ds.y.iter().zip(&flipped) {
            assert_ne!(a, b);
        }
    }

    #[test]
    fn labels_ignore_superfluous_blocks() {
        // Same seed except different b-block sub-streams => identical labels.
        let cfg = small_cfg(5);
        let ds = generate_sim(&cfg).unwrap();

        let n = cfg.n;
        let a0 = block(cfg.seed, "a0", n, cfg.d0);
        let a1 = block(cfg.seed, "a1", n, cfg.d11);
        let a2 = block(cfg.seed, "a2", n, cfg.d21);
        let b0 = block(cfg.seed, "b0-alternate", n, cfg.d0p);
        let b1 = block(cfg.seed, "b1-alternate", n, cfg.d12);
        let alt_x1 = Matrix::hcat(&[&b0, &b1, &a0, &a1]);
        assert_ne!(alt_x1.data, ds.x1.data);
        let y_alt = label_rows(&[&a0, &a1, &a2], &ds.delta);
        assert_eq!(y_alt, ds.y);
    }

    #[test]
    fn block_moments_are_standard_normal() {
        let cfg = SimConfig::preset("sim3", 10_000, 13).unwrap();
        let ds = generate_sim(&cfg).unwrap();
        for (s, l) in ds.layout.x1_blocks() {
            let b = ds.x1.col_block(s, l);
            let m = b.data.iter().sum::<f64>() / b.data.len() as f64;
            let var = b.data.iter().map(|v| (v - m) * (v - m)).sum::<f64>()
                / (b.data.len() - 1) as f64;
            let n = b.data.len() as f64;
            assert!(m.abs() < 3.0 / n.sqrt(), "mean {m}");
            assert!((var - 1.0).abs() < 3.0 * (2.0 / n).sqrt(), "var {var}");
        }
    }

    #[test]
    fn split_is_a_disjoint_partition_and_seeded() {
        let ds = generate_sim(&small_cfg(8)).unwrap();
        let (train, test) = split_train_test(&ds, 0.9).unwrap();
        assert_eq!(train.n(), 450);
        assert_eq!(test.n(), 50);

        let (train2, _) = split_train_test(&ds, 0.9).unwrap();
        assert_eq!(train.x1.data, train2.x1.data);

        // partition: every original row appears exactly once
        let key = |r: &[f64]| r.iter().flat_map(|v| v.to_le_bytes()).collect::<Vec<u8>>();
        let mut rows: Vec<Vec<u8>> = Vec::new();
        for i in 0..train.n() {
            rows.push(key(train.x1.row(i)));
        }
        for i in 0..test.n() {
            rows.push(key(test.x1.row(i)));
        }
        rows.sort();
        let mut orig: Vec<Vec<u8>> = (0..ds.n()).map(|i| key(ds.x1.row(i))).collect();
        orig.sort();
        assert_eq!(rows, orig);

        assert!(split_train_test(&ds, 1.0).is_err());
        assert!(split_train_test(&ds, 0.0001).is_err());
    }

    #[test]
    fn nine_to_one_split_counts_on_full_size() {
        let cfg = SimConfig::preset("sim1", 10_000, 2).unwrap();
        let ds = generate_sim(&cfg).unwrap();
        let (train, test) = split_train_test(&ds, 0.9).unwrap();
        assert_eq!(train.n(), 9000);
        assert_eq!(test.n(), 1000);
    }

    #[test]
    fn oracle_views_have_documented_widths() {
        let cfg = SimConfig::preset("sim1", 100, 4).unwrap();
        let ds = generate_sim(&cfg).unwrap();
        assert_eq!(
            oracle_feature_view(&ds, FeatureView::AuthenticOptimal).cols,
            800
        );
        assert_eq!(
            oracle_feature_view(&ds, FeatureView::ConsistentRelevant).cols,
            200
        );
        assert_eq!(
            oracle_feature_view(&ds, FeatureView::SpecificRelevant).cols,
            600
        );
        assert_eq!(oracle_feature_view(&ds, FeatureView::Unimodal1).cols, 1100);
        assert_eq!(oracle_feature_view(&ds, FeatureView::Unimodal2).cols, 700);
        assert_eq!(
            oracle_feature_view(&ds, FeatureView::Union).cols,
            200 + 200 + 500 + 200 + 100 + 200
        );
    }

    #[test]
    fn consistent_relevant_view_matches_both_modalities() {
        let ds = generate_sim(&small_cfg(6)).unwrap();
        let v = oracle_feature_view(&ds, FeatureView::ConsistentRelevant);
        let [_, _, a0_2, _] = ds.layout.x2_blocks();
        assert_eq!(v.data, ds.x2.col_block(a0_2.0, a0_2.1).data);
    }

    #[test]
    fn view_slices_reconstruct_inputs_bit_exactly() {
        let ds = generate_sim(&small_cfg(9)).unwrap();
        let [b0, b1, a0, a1] = ds.layout.x1_blocks();
        let rebuilt = Matrix::hcat(&[
            &ds.x1.col_block(b0.0, b0.1),
            &ds.x1.col_block(b1.0, b1.1),
            &ds.x1.col_block(a0.0, a0.1),
            &ds.x1.col_block(a1.0, a1.1),
        ]);
        assert_eq!(rebuilt.data, ds.x1.data);
    }

    #[test]
    fn sim3_shared_block_identical_across_all_modalities() {
        let cfg = Sim3Config::preset("sim3mod", 300, 17).unwrap();
        let ds = generate_sim3_named(&cfg, "sim3mod").unwrap();
        let picks: Vec<Matrix> = (0..3)
            .map(|m| {
                let (s, l) = ds.x_blocks(m)[4]; // a00
                ds.xs[m].col_block(s, l)
            })
            .collect();
        assert_eq!(picks[0].data, picks[1].data);
        assert_eq!(picks[1].data, picks[2].data);
    }

    #[test]
    fn sim3_degenerates_to_independent_blocks() {
        let cfg = Sim3Config {
            d_a00: 0,
            d_aii: 6,
            d_aij: 0,
            d_b00: 0,
            d_bii: 0,
            d_bij: 0,
            n: 50,
            seed: 3,
            train_fraction: 0.8,
        };
        let ds = generate_sim3(&cfg).unwrap();
        for m in 0..3 {
            assert_eq!(ds.xs[m].cols, 6);
        }
        assert_eq!(ds.authentic_view().cols, 18);
    }

    #[test]
    fn sim3_label_balance() {
        let cfg = Sim3Config::preset("sim3mod", 10_000, 23).unwrap();
        let ds = generate_sim3(&cfg).unwrap();
        let pos = ds.y.iter().filter(|&&v| v == 1).count() as f64 / ds.n() as f64;
        assert!((0.48..=0.52).contains(&pos), "balance {pos}");
    }

    #[test]
    fn dataset_files_round_trip_bit_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let stem = dir.path().join("ds");
        let ds = generate_sim(&small_cfg(21)).unwrap();
        save_dataset(&stem, &Dataset::Two(ds.clone())).unwrap();
        let loaded = load_dataset(&stem).unwrap();
        match loaded {
            Dataset::Two(l) => {
                assert_eq!(l.x1.data, ds.x1.data);
                assert_eq!(l.x2.data, ds.x2.data);
                assert_eq!(l.y, ds.y);
                assert_eq!(l.delta, ds.delta);
                assert_eq!(l.layout, ds.layout);
                assert_eq!(l.seed, ds.seed);
            }
            _ => panic!("wrong kind"),
        }

        let cfg3 = Sim3Config::preset("sim3mod", 40, 5).unwrap();
        let ds3 = generate_sim3_named(&cfg3, "sim3mod").unwrap();
        let stem3 = dir.path().join("ds3");
        save_dataset(&stem3, &Dataset::Three(ds3.clone())).unwrap();
        match load_dataset(&stem3).unwrap() {
            Dataset::Three(l) => {
                assert_eq!(l.xs[2].data, ds3.xs[2].data);
                assert_eq!(l.y, ds3.y);
            }
            _ => panic!("wrong kind"),
        }
    }

    #[test]
    fn missing_dataset_is_a_data_error() {
        let err = load_dataset(Path::new("/nonexistent/nowhere")).unwrap_err();
        assert!(matches!(err, Error::Data(_)));
    }
}
