//! Adam and AdamW with per-epoch exponential learning-rate decay.

use crate::error::{Error, Result};
use crate::nd::array::{NdArray, Param};

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPS: f64 = 1e-8;

/// Per-parameter first/second moment estimates plus the shared schedule.
/// Effective learning rate at epoch e is `base_lr * decay^e`; AdamW applies
/// `weight_decay` decoupled from the gradient, plain Adam sets it to 0.
pub struct OptimState {
    entries: Vec<MomentEntry>,
    pub step: u64,
    pub base_lr: f64,
    pub decay: f64,
    pub weight_decay: f64,
}

struct MomentEntry {
    name: String,
    m: NdArray,
    v: NdArray,
}

impl OptimState {
    pub fn adam(params: &[&Param], base_lr: f64, decay: f64) -> Self {
        Self::new(params, base_lr, decay, 0.0)
    }

    pub fn adamw(params: &[&Param], base_lr: f64, decay: f64, weight_decay: f64) -> Self {
        Self::new(params, base_lr, decay, weight_decay)
    }

    fn new(params: &[&Param], base_lr: f64, decay: f64, weight_decay: f64) -> Self {
        let entries = params
            .iter()
            .map(|p| MomentEntry {
                name: p.name.clone(),
                m: NdArray::zeros(p.value.shape().to_vec()),
                v: NdArray::zeros(p.value.shape().to_vec()),
            })
            .collect();
        OptimState {
            entries,
            step: 0,
            base_lr,
            decay,
            weight_decay,
        }
    }

    pub fn lr_at_epoch(&self, epoch: usize) -> f64 {
        self.base_lr * self.decay.powi(epoch as i32)
    }

    /// One update over all params from their accumulated gradients.
    /// Params must be passed in the same order as at construction.
    pub fn step(&mut self, params: &mut [&mut Param], epoch: usize) -> Result<()> {
        if params.len() != self.entries.len() {
            return Err(Error::Internal(format!(
                "optimizer state holds {} params, got {}",
                self.entries.len(),
                params.len()
            )));
        }
        self.step += 1;
        let t = self.step as f64;
        let lr = self.lr_at_epoch(epoch);
        let bc1 = 1.0 - BETA1.powf(t);
        let bc2 = 1.0 - BETA2.powf(t);
        for (p, e) in params.iter_mut().zip(self.entries.iter_mut()) {
            if p.name != e.name {
                return Err(Error::Internal(format!(
                    "optimizer state for {} applied to {}",
                    e.name, p.name
                )));
            }
            let n = p.value.len();
            for i in 0..n {
                let g = p.grad.data()[i];
                let m = BETA1 * e.m.data()[i] + (1.0 - BETA1) * g;
                let v = BETA2 * e.v.data()[i] + (1.0 - BETA2) * g * g;
                e.m.data_mut()[i] = m;
                e.v.data_mut()[i] = v;
                let mhat = m / bc1;
                let vhat = v / bc2;
                let mut x = p.value.data()[i];
                // decoupled weight decay, applied before the adaptive step
                x -= lr * self.weight_decay * x;
                x -= lr * mhat / (vhat.sqrt() + EPS);
                p.value.data_mut()[i] = x;
            }
        }
        Ok(())
    }
}
