//! Plain row-major matrices and low-level numeric helpers shared by the
//! autodiff engine, the data generators, and the estimators.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense row-major `rows x cols` matrix of f64.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(rows * cols, data.len(), "matrix data length mismatch");
        Matrix { rows, cols, data }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn standard_normal(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Self {
        let data = (0..rows * cols).map(|_| rng.sample(StandardNormal)).collect();
        Matrix { rows, cols, data }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    /// Rows selected by `idx`, in order.
    pub fn take_rows(&self, idx: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Matrix::new(idx.len(), self.cols, data)
    }

    /// Contiguous column block `[start, start+len)` of every row.
    pub fn col_block(&self, start: usize, len: usize) -> Matrix {
        assert!(start + len <= self.cols, "column block out of range");
        let mut data = Vec::with_capacity(self.rows * len);
        for i in 0..self.rows {
            let r = self.row(i);
            data.extend_from_slice(&r[start..start + len]);
        }
        Matrix::new(self.rows, len, data)
    }

    /// Horizontal concatenation; all blocks must share the row count.
    pub fn hcat(blocks: &[&Matrix]) -> Matrix {
        assert!(!blocks.is_empty());
        let rows = blocks[0].rows;
        assert!(blocks.iter().all(|b| b.rows == rows), "hcat row mismatch");
        let cols: usize = blocks.iter().map(|b| b.cols).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for b in blocks {
                data.extend_from_slice(b.row(i));
            }
        }
        Matrix::new(rows, cols, data)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Fixed split of the M dimension so threaded results are bit-identical to the
/// single-threaded ones regardless of the worker count.
const GEMM_ROW_CHUNK: usize = 64;

/// `out = alpha * op(a) @ op(b) + beta * out` on row-major buffers.
///
/// `a` is `m x k` (or `k x m` when `trans_a`), `b` is `k x n` (or `n x k`
/// when `trans_b`). Uses matrixmultiply's packed kernels, splitting row
/// chunks across the rayon pool for large `m`.
pub fn gemm(
    trans_a: bool,
    trans_b: bool,
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: &[f64],
    b: &[f64],
    beta: f64,
    out: &mut [f64],
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }

    // Row/col strides for the logical (post-transpose) views.
    let (rsa, csa) = if trans_a { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if trans_b { (1, k as isize) } else { (n as isize, 1) };

    let run = |a_ptr: *const f64, c_ptr: *mut f64, rows: usize| unsafe {
        matrixmultiply::dgemm(
            rows, k, n, alpha, a_ptr, rsa, csa, b.as_ptr(), rsb, csb, beta, c_ptr, n as isize, 1,
        );
    };

    if m <= GEMM_ROW_CHUNK {
        run(a.as_ptr(), out.as_mut_ptr(), m);
        return;
    }

    use rayon::prelude::*;
    let a_addr = a.as_ptr() as usize;
    out.par_chunks_mut(GEMM_ROW_CHUNK * n)
        .enumerate()
        .for_each(|(ci, c_chunk)| {
            let r0 = ci * GEMM_ROW_CHUNK;
            let rows = c_chunk.len() / n;
            // Row offset into the logical A view: element (r0, 0).
            let a_off = r0 as isize * rsa;
            let a_ptr = unsafe { (a_addr as *const f64).offset(a_off) };
            run(a_ptr, c_chunk.as_mut_ptr(), rows);
        });
}

/// Minimum buffer length before elementwise kernels split across the pool.
const PAR_ELEM_MIN: usize = 16 * 1024;
const PAR_ELEM_CHUNK: usize = 8 * 1024;

/// Elementwise map with deterministic fixed-chunk parallelism for large
/// buffers; used by the transcendental tensor kernels.
pub fn map_slice(data: &[f64], f: impl Fn(f64) -> f64 + Sync) -> Vec<f64> {
    let mut out = vec![0.0; data.len()];
    if data.len() < PAR_ELEM_MIN {
        for (o, v) in out.iter_mut().zip(data) {
            *o = f(*v);
        }
    } else {
        use rayon::prelude::*;
        out.par_chunks_mut(PAR_ELEM_CHUNK)
            .zip(data.par_chunks(PAR_ELEM_CHUNK))
            .for_each(|(oc, dc)| {
                for (o, v) in oc.iter_mut().zip(dc) {
                    *o = f(*v);
                }
            });
    }
    out
}

/// Accumulate `buf[i] += f(i)` with the same chunking discipline.
pub fn accumulate_slice(buf: &mut [f64], data: &[f64], g: &[f64], f: impl Fn(f64, f64) -> f64 + Sync) {
    if buf.len() < PAR_ELEM_MIN {
        for i in 0..buf.len() {
            buf[i] += f(data[i], g[i]);
        }
    } else {
        use rayon::prelude::*;
        buf.par_chunks_mut(PAR_ELEM_CHUNK)
            .enumerate()
            .for_each(|(ci, bc)| {
                let base = ci * PAR_ELEM_CHUNK;
                for (k, b) in bc.iter_mut().enumerate() {
                    *b += f(data[base + k], g[base + k]);
                }
            });
    }
}

/// log(mean(exp(x))) with max-shift; safe for entries up to +-700 and beyond.
pub fn log_mean_exp(xs: &[f64]) -> f64 {
    assert!(!xs.is_empty());
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    let s: f64 = xs.iter().map(|x| (x - m).exp()).sum();
    m + (s / xs.len() as f64).ln()
}

/// FNV-1a over the tag, mixed into the base seed. Stable across platforms,
/// used to derive independent named sub-streams from one run seed.
pub fn derive_seed(base: u64, tag: &str) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in tag.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    // splitmix-style finalizer over the combination
    let mut z = base ^ h;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

pub fn rng_from(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Seeded Fisher-Yates permutation of `0..n`.
pub fn permutation(n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.gen_range(0..=i);
        idx.swap(i, j);
    }
    idx
}

/// Mean over index batches of `values` grouped per row; helper for summaries.
pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.iter().sum::<f64>() / values.len() as f64
}

/// Fast finiteness scan: a plain sum vectorizes where an early-exit `all`
/// cannot, and any NaN/Inf poisons it. A non-finite sum of huge-but-finite
/// values is ruled out by an exact rescan before reporting.
pub fn all_finite(xs: &[f64]) -> bool {
    let s: f64 = xs.iter().sum();
    s.is_finite() || xs.iter().all(|v| v.is_finite())
}

pub fn check_finite_slice(op: &'static str, xs: &[f64]) -> Result<()> {
    if all_finite(xs) {
        Ok(())
    } else {
        Err(Error::non_finite(op))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_gemm(m: usize, k: usize, n: usize, a: &[f64], b: &[f64]) -> Vec<f64> {
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for p in 0..k {
                let av = a[i * k + p];
                for j in 0..n {
                    c[i * n + j] += av * b[p * n + j];
                }
            }
        }
        c
    }

    #[test]
    fn gemm_matches_naive() {
        let mut rng = rng_from(7);
        for &(m, k, n) in &[(3usize, 4usize, 5usize), (17, 9, 13), (300, 20, 8)] {
            let a: Vec<f64> = (0..m * k).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let b: Vec<f64> = (0..k * n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let mut c = vec![0.0; m * n];
            gemm(false, false, m, k, n, 1.0, &a, &b, 0.0, &mut c);
            let want = naive_gemm(m, k, n, &a, &b);
            for (x, y) in c.iter().zip(&want) {
                assert!((x - y).abs() < 1e-12, "{x} vs {y}");
            }
        }
    }

    #[test]
    fn gemm_transposes_match_naive() {
        let mut rng = rng_from(8);
        let (m, k, n) = (6usize, 5usize, 4usize);
        let a: Vec<f64> = (0..m * k).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..k * n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let want = naive_gemm(m, k, n, &a, &b);

        // a stored transposed as k x m
        let mut a_t = vec![0.0; m * k];
        for i in 0..m {
            for p in 0..k {
                a_t[p * m + i] = a[i * k + p];
            }
        }
        let mut c = vec![0.0; m * n];
        gemm(true, false, m, k, n, 1.0, &a_t, &b, 0.0, &mut c);
        for (x, y) in c.iter().zip(&want) {
            assert!((x - y).abs() < 1e-12);
        }

        // b stored transposed as n x k
        let mut b_t = vec![0.0; k * n];
        for p in 0..k {
            for j in 0..n {
                b_t[j * k + p] = b[p * n + j];
            }
        }
        let mut c2 = vec![0.0; m * n];
        gemm(false, true, m, k, n, 1.0, &a, &b_t, 0.0, &mut c2);
        for (x, y) in c2.iter().zip(&want) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn gemm_chunked_is_bit_identical_to_direct() {
        let mut rng = rng_from(9);
        let (m, k, n) = (GEMM_ROW_CHUNK * 2 + 37, 33, 21);
        let a: Vec<f64> = (0..m * k).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..k * n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut big = vec![0.0; m * n];
        gemm(false, false, m, k, n, 1.0, &a, &b, 0.0, &mut big);
        // Same rows computed one fixed chunk at a time must agree bitwise.
        for (ci, rows0) in (0..m).step_by(GEMM_ROW_CHUNK).enumerate() {
            let rows = GEMM_ROW_CHUNK.min(m - rows0);
            let mut part = vec![0.0; rows * n];
            gemm(
                false,
                false,
                rows,
                k,
                n,
                1.0,
                &a[rows0 * k..(rows0 + rows) * k],
                &b,
                0.0,
                &mut part,
            );
            assert_eq!(
                part.as_slice(),
                &big[rows0 * n..(rows0 + rows) * n],
                "chunk {ci}"
            );
        }
    }

    #[test]
    fn log_mean_exp_is_overflow_safe() {
        let v = log_mean_exp(&[700.0, 700.0, 700.0]);
        assert!((v - 700.0).abs() < 1e-9);
        let v = log_mean_exp(&[-700.0, -700.0]);
        assert!((v + 700.0).abs() < 1e-9);
        let v = log_mean_exp(&[700.0, -700.0]);
        assert!((v - (700.0 + (0.5f64).ln())).abs() < 1e-9);
    }

    #[test]
    fn derive_seed_separates_tags() {
        let a = derive_seed(42, "a0");
        let b = derive_seed(42, "b0");
        assert_ne!(a, b);
        assert_eq!(a, derive_seed(42, "a0"));
    }

    #[test]
    fn permutation_is_a_permutation() {
        let mut rng = rng_from(3);
        let p = permutation(100, &mut rng);
        let mut seen = vec![false; 100];
        for &i in &p {
            assert!(!seen[i]);
            seen[i] = true;
        }
    }
}
