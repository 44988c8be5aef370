//! AdamW with decoupled weight decay. No learning-rate schedule.

use crate::error::TabError;
use crate::params::ParamSet;
use crate::tensor::Tensor;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPS: f64 = 1e-8;

#[derive(Clone, Debug)]
pub struct AdamW {
    pub lr: f64,
    pub wd: f64,
    pub step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl AdamW {
    pub fn new(params: &ParamSet, lr: f64, wd: f64) -> Result<Self, TabError> {
        if lr <= 0.0 {
            return Err(TabError::Optim(format!("lr must be positive, got {lr}")));
        }
        if wd < 0.0 {
            return Err(TabError::Optim(format!("weight decay must be >= 0, got {wd}")));
        }
        let m = (0..params.len())
            .map(|i| Tensor::zeros(params.tensor(i).shape().to_vec()))
            .collect();
        let v = (0..params.len())
            .map(|i| Tensor::zeros(params.tensor(i).shape().to_vec()))
            .collect();
        Ok(AdamW { lr, wd, step: 0, m, v })
    }

    /// One decoupled update:
    /// p ← p − lr·m̂/(√v̂ + eps) − lr·wd·p, with bias-corrected moments.
    /// Slots with `None` gradient receive only the decay term's no-op
    /// counterpart (they are left untouched entirely).
    pub fn step(
        &mut self,
        params: &mut ParamSet,
        grads: &[Option<Tensor>],
    ) -> Result<(), TabError> {
        if grads.len() != params.len() {
            return Err(TabError::Optim("gradient count mismatch".into()));
        }
        for (i, g) in grads.iter().enumerate() {
            if let Some(g) = g {
                if !g.all_finite() {
                    return Err(TabError::Optim(format!(
                        "non-finite gradient for parameter {}",
                        params.name(i)
                    )));
                }
            }
        }
        self.step += 1;
        let bc1 = 1.0 - BETA1.powi(self.step as i32);
        let bc2 = 1.0 - BETA2.powi(self.step as i32);
        for (i, g) in grads.iter().enumerate() {
            let Some(g) = g else { continue };
            let p = params.tensor_mut(i);
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            for ((pv, gv), (mv, vv)) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.iter_mut().zip(v.iter_mut()))
            {
                *mv = BETA1 * *mv + (1.0 - BETA1) * gv;
                *vv = BETA2 * *vv + (1.0 - BETA2) * gv * gv;
                let mhat = *mv / bc1;
                let vhat = *vv / bc2;
                *pv -= self.lr * mhat / (vhat.sqrt() + EPS) + self.lr * self.wd * *pv;
            }
        }
        Ok(())
    }
}
