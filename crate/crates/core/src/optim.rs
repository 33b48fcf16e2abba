//! SGD with classical momentum and a cosine learning-rate schedule.

use crate::error::{Error, Result};
use crate::params::ParamSet;
use crate::scalar::Scalar;

/// One SGD step over every trainable parameter:
/// `v ← momentum·v + g`, `p ← p − lr·v`.
///
/// Every trainable entry must carry a gradient — a missing one means the
/// forward pass never bound that parameter, which is a wiring bug worth
/// surfacing rather than silently freezing weights. With `lr == 0` the
/// parameter write is skipped entirely so values stay bit-identical (momentum
/// still updates).
pub fn sgd_momentum_step<S: Scalar>(pset: &mut ParamSet<S>, lr: f64, momentum: f64) -> Result<()> {
    let missing: Vec<String> = pset
        .iter()
        .filter(|(_, e)| e.trainable && e.grad.is_none())
        .map(|(n, _)| n.to_string())
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingGrad { names: missing });
    }
    let lr_s = S::from_f64(lr);
    let mom_s = S::from_f64(momentum);
    for (_, e) in pset.iter_mut() {
        if !e.trainable {
            continue;
        }
        let grad = e.grad.as_ref().expect("checked above");
        let vel = e.momentum.as_mut().expect("trainable entries carry momentum");
        for (v, &g) in vel.data_mut().iter_mut().zip(grad.data()) {
            *v = mom_s * *v + g;
        }
        if lr != 0.0 {
            for (p, &v) in e.value.data_mut().iter_mut().zip(vel.data()) {
                *p -= lr_s * v;
            }
        }
    }
    Ok(())
}

/// Cosine decay from `lr_init` at epoch 0 to `lr_final` at epoch `epochs - 1`:
/// `lr_e = lr_final + ½(lr_init − lr_final)(1 + cos(π·e/(E−1)))`.
/// A single-epoch run uses `lr_init`.
pub fn cosine_lr(epoch: usize, epochs: usize, lr_init: f64, lr_final: f64) -> f64 {
    if epochs <= 1 {
        return lr_init;
    }
    let t = epoch as f64 / (epochs - 1) as f64;
    lr_final + 0.5 * (lr_init - lr_final) * (1.0 + (std::f64::consts::PI * t).cos())
}
