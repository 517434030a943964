//! Bias-corrected Adam over a [`ParamSet`].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Gradients, ParamSet, Session};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// Optimizer state: first/second moment buffers per parameter plus the step
/// counter used for bias correction.
pub struct Adam {
    pub cfg: AdamConfig,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: u64,
}

impl Adam {
    pub fn new(cfg: AdamConfig, params: &ParamSet) -> Self {
        let sizes = params.buffer_sizes();
        Adam {
            cfg,
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One update over every parameter bound during this step. A bound
    /// parameter without a gradient means backward was skipped or the graph
    /// was cut; that is an error.
    pub fn step(
        &mut self,
        params: &mut ParamSet,
        session: &Session,
        grads: &Gradients,
    ) -> Result<()> {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.cfg.beta1.powi(t);
        let bc2 = 1.0 - self.cfg.beta2.powi(t);

        let mut grad_by_idx: Vec<Option<&[f64]>> = vec![None; params.len()];
        for pid in session.bound_params() {
            let g = session.grad(grads, pid).ok_or_else(|| {
                Error::Grad(format!("missing gradient for bound parameter {pid:?}"))
            })?;
            grad_by_idx[pid.index()] = Some(g);
        }

        use rayon::prelude::*;
        let cfg = &self.cfg;
        self.m
            .par_iter_mut()
            .zip(self.v.par_iter_mut())
            .zip(params.par_data_mut())
            .zip(grad_by_idx.par_iter())
            .for_each(|(((m, vbuf), data), g)| {
                let g = match g {
                    Some(g) => *g,
                    None => return,
                };
                debug_assert_eq!(g.len(), data.len());
                for i in 0..data.len() {
                    let gi = g[i] + cfg.weight_decay * data[i];
                    m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * gi;
                    vbuf[i] = cfg.beta2 * vbuf[i] + (1.0 - cfg.beta2) * gi * gi;
                    let m_hat = m[i] / bc1;
                    let v_hat = vbuf[i] / bc2;
                    data[i] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
                }
            });
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{ParamSet, Tape};

    #[test]
    fn first_step_moves_by_lr_against_gradient_sign() {
        let mut ps = ParamSet::new();
        let p = ps.add(&[1], vec![0.0]);
        let mut adam = Adam::new(AdamConfig::with_lr(1e-4), &ps);

        let tape = Tape::new();
        let sess = ps.bind(&tape);
        let pt = sess.tensor(&ps, p);
        // loss = p, so grad = 1
        let loss = pt.sum(None).unwrap();
        let grads = tape.backward(&loss).unwrap();
        adam.step(&mut ps, &sess, &grads).unwrap();
        let v = ps.value(p)[0];
        assert!((v + 1e-4).abs() < 1e-10, "got {v}");
        assert_eq!(adam.step_count(), 1);
    }

    #[test]
    fn zero_gradient_leaves_parameter_unchanged() {
        let mut ps = ParamSet::new();
        let p = ps.add(&[2], vec![1.5, -2.5]);
        let q = ps.add(&[1], vec![1.0]);
        let mut adam = Adam::new(AdamConfig::with_lr(0.1), &ps);

        let tape = Tape::new();
        let sess = ps.bind(&tape);
        let pt = sess.tensor(&ps, p);
        let qt = sess.tensor(&ps, q);
        // p enters with zero coefficient: loss = q + 0 * sum(p)
        let loss = qt.sum(None).unwrap().add(&pt.sum(None).unwrap().scale(0.0).unwrap()).unwrap();
        let grads = tape.backward(&loss).unwrap();
        adam.step(&mut ps, &sess, &grads).unwrap();
        assert_eq!(ps.value(p), &[1.5, -2.5]);
    }

    #[test]
    fn converges_on_quadratic() {
        let mut ps = ParamSet::new();
        let p = ps.add(&[1], vec![1.0]);
        let mut adam = Adam::new(AdamConfig::with_lr(0.1), &ps);
        for _ in 0..100 {
            let tape = Tape::new();
            let sess = ps.bind(&tape);
            let pt = sess.tensor(&ps, p);
            let loss = pt.mul(&pt).unwrap().sum(None).unwrap();
            let grads = tape.backward(&loss).unwrap();
            adam.step(&mut ps, &sess, &grads).unwrap();
        }
        assert!(ps.value(p)[0].abs() < 0.1, "p = {}", ps.value(p)[0]);
    }
}
