//! Central-finite-difference verification of analytic gradients.

use rand::Rng;

use crate::error::{Error, Result};
use crate::mat::rng_from;
use crate::tensor::{ParamSet, Session, Tape, Tensor};

/// Compare backward-pass gradients of a scalar-valued function against
/// central differences, returning the maximum relative error over sampled
/// coordinates.
///
/// `f` must be deterministic given fixed parameter values: any stochastic
/// inputs (noise draws) have to be frozen outside the closure. This is
/// verified by evaluating twice before differencing.
///
/// Relative error per coordinate: `|analytic - numeric| / (|analytic| +
/// |numeric| + 1e-12)`. Central differences on an O(1) loss cannot resolve
/// below roughly `eps * |f| / h` (about 1e-9 at h = 1e-6), so coordinates
/// whose analytic and numeric values already agree within `ABS_FLOOR`
/// absolute are counted as exact; a systematically wrong formula still
/// produces O(|gradient|) differences and fails. At most
/// `coords_per_param` coordinates are sampled from each parameter.
/// Differences below the central-difference noise floor count as exact.
const ABS_FLOOR: f64 = 1e-8;

pub fn gradient_check<F>(
    params: &mut ParamSet,
    f: F,
    h: f64,
    coords_per_param: usize,
    seed: u64,
) -> Result<f64>
where
    F: Fn(&ParamSet, &Tape, &Session) -> Result<Tensor>,
{
    let eval = |params: &ParamSet| -> Result<f64> {
        let tape = Tape::new();
        let sess = params.bind(&tape);
        let loss = f(params, &tape, &sess)?;
        if loss.numel() != 1 {
            return Err(Error::Grad("gradient_check requires a scalar loss".into()));
        }
        Ok(loss.scalar_value())
    };

    let l0 = eval(params)?;
    let l1 = eval(params)?;
    if l0.to_bits() != l1.to_bits() {
        return Err(Error::Grad(
            "function is not deterministic; freeze stochastic inputs (fixed noise tensors) \
             before gradient checking"
                .into(),
        ));
    }

    // Analytic pass.
    let tape = Tape::new();
    let sess = params.bind(&tape);
    let loss = f(params, &tape, &sess)?;
    let grads = tape.backward(&loss)?;

    let mut rng = rng_from(seed);
    let mut max_rel = 0.0f64;
    for pid in sess.bound_params() {
        let analytic = sess
            .grad(&grads, pid)
            .ok_or_else(|| Error::Grad(format!("no gradient reached parameter {pid:?}")))?
            .to_vec();
        let n = analytic.len();
        let coords: Vec<usize> = if n <= coords_per_param {
            (0..n).collect()
        } else {
            (0..coords_per_param).map(|_| rng.gen_range(0..n)).collect()
        };
        for i in coords {
            let orig = params.value(pid)[i];
            params.value_mut(pid)[i] = orig + h;
            let lp = eval(params)?;
            params.value_mut(pid)[i] = orig - h;
            let lm = eval(params)?;
            params.value_mut(pid)[i] = orig;
            let numeric = (lp - lm) / (2.0 * h);
            let diff = (analytic[i] - numeric).abs();
            if diff <= ABS_FLOOR {
                continue;
            }
            let rel = diff / (analytic[i].abs() + numeric.abs() + 1e-12);
            max_rel = max_rel.max(rel);
        }
    }
    Ok(max_rel)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn;

    #[test]
    fn quadratic_checks_to_1e9() {
        let mut ps = ParamSet::new();
        let x = ps.add(&[1], vec![3.0]);
        let rel = gradient_check(
            &mut ps,
            |ps, _tape, sess| {
                let xt = sess.tensor(ps, x);
                xt.mul(&xt)?.sum(None)
            },
            1e-6,
            8,
            0,
        )
        .unwrap();
        assert!(rel < 1e-9, "rel = {rel}");
    }

    #[test]
    fn rejects_nondeterministic_functions() {
        use std::cell::Cell;
        let mut ps = ParamSet::new();
        let x = ps.add(&[1], vec![1.0]);
        let counter = Cell::new(0.0f64);
        let err = gradient_check(
            &mut ps,
            |ps, tape, sess| {
                counter.set(counter.get() + 1.0);
                let noise = tape.scalar(counter.get())?;
                sess.tensor(ps, x).mul(&sess.tensor(ps, x))?.sum(None)?.add(&noise)
            },
            1e-6,
            4,
            0,
        )
        .unwrap_err();
        assert!(err.to_string().contains("freeze"), "{err}");
    }

    #[test]
    fn every_primitive_matches_central_differences() {
        // One composite touching each differentiable primitive; checked at
        // rel-err < 1e-6 on randomized small tensors.
        let mut rng = rng_from(42);
        let mut ps = ParamSet::new();
        let w = ps.linear_weight(4, 3, &mut rng);
        let b = ps.add(&[1, 3], vec![0.1, -0.2, 0.3]);
        let v = ps.add(&[2, 3], (0..6).map(|i| 0.2 * i as f64 - 0.5).collect());

        let x_data: Vec<f64> = (0..8).map(|i| (i as f64) * 0.37 - 1.3).collect();
        let rel = gradient_check(
            &mut ps,
            move |ps, tape, sess| {
                let x = tape.constant(&[2, 4], x_data.clone())?;
                let wt = sess.tensor(ps, w);
                let bt = sess.tensor(ps, b);
                let vt = sess.tensor(ps, v);

                let h = x.matmul(&wt)?; // matmul
                let h = h.add(&bt.broadcast_to(&[2, 3])?)?; // broadcast + add
                let g = h.gelu()?; // gelu
                let r = h.relu()?; // relu
                let t = h.tanh()?; // tanh
                let mixed = g.add(&r.scale(0.25)?)?.sub(&t.scale(0.5)?)?; // scale, sub
                let prod = mixed.mul(&vt)?; // mul
                let cat = Tensor::concat(&[&prod, &vt], 1)?; // concat
                let sl = cat.slice(1, 1, 4)?; // slice
                let sm = sl.softmax(1)?; // softmax
                let lg = sm.log()?; // log (clamped)
                let ex = sl.scale(0.1)?.exp()?; // exp
                let col = lg.add(&ex)?.mean(Some(1))?; // mean(axis)
                let rowsum = col.sum(Some(0))?; // sum(axis)
                rowsum.mean(None) // mean(all)
            },
            1e-6,
            24,
            7,
        )
        .unwrap();
        assert!(rel < 1e-6, "rel = {rel}");
    }

    #[test]
    fn micro_mlp_with_cross_entropy_checks_to_1e5() {
        let mut rng = rng_from(5);
        let mut ps = ParamSet::new();
        let cfg = nn::MlpConfig {
            widths: vec![5, 8, 3],
            activation: nn::Activation::Gelu,
            final_activation: nn::Activation::None,
        };
        let mlp = nn::Mlp::new(&mut ps, cfg, &mut rng).unwrap();
        let x_data: Vec<f64> = (0..20).map(|i| (i as f64 * 0.17).sin()).collect();
        let labels = vec![0usize, 2, 1, 0];

        let rel = gradient_check(
            &mut ps,
            move |ps, tape, sess| {
                let x = tape.constant(&[4, 5], x_data.clone())?;
                let logits = mlp.forward(ps, sess, &x)?;
                nn::softmax_cross_entropy(&logits, &labels)
            },
            1e-6,
            20,
            11,
        )
        .unwrap();
        assert!(rel < 1e-5, "rel = {rel}");
    }

    #[test]
    fn diag_gaussian_kl_checks_to_1e6() {
        let mut ps = ParamSet::new();
        let mu = ps.add(&[3, 4], (0..12).map(|i| 0.1 * i as f64 - 0.6).collect());
        let lv = ps.add(&[3, 4], (0..12).map(|i| 0.05 * i as f64 - 0.3).collect());
        let rel = gradient_check(
            &mut ps,
            |ps, _tape, sess| {
                let m = sess.tensor(ps, mu);
                let l = sess.tensor(ps, lv);
                nn::kl_diag_gauss_std(&m, &l)?.mean(None)
            },
            1e-6,
            24,
            3,
        )
        .unwrap();
        assert!(rel < 1e-6, "rel = {rel}");
    }
}
