//! Adam with bias correction and the time-based rate schedule
//! `lr_t = lr0 / (1 + decay * t)`.

use crate::error::{FogError, Result};

use super::arch::{DecayMode, OptimizerSpec};
use super::params::{ParamArrays, ParamSet, TrainScope};

/// Apply one Adam step to every array in `scope`. Arrays outside the scope
/// keep both their values and their moments untouched. Non-finite gradients
/// abort before any mutation.
pub fn adam_step(
    params: &mut ParamSet,
    grads: &ParamArrays,
    opt: &OptimizerSpec,
    scope: TrainScope,
) -> Result<()> {
    opt.validate()?;
    let ids: Vec<_> = params
        .arrays
        .ids()
        .into_iter()
        .filter(|&id| scope.trains(id))
        .collect();
    for &id in &ids {
        if grads.get(id).iter().any(|g| !g.is_finite()) {
            return Err(FogError::Numeric(format!(
                "non-finite gradient in {} — step aborted",
                id.name()
            )));
        }
    }

    let t = params.adam.step; // completed steps so far
    let lr = opt.rate_at(t);
    let bc1 = 1.0 - opt.beta1.powi(t as i32 + 1);
    let bc2 = 1.0 - opt.beta2.powi(t as i32 + 1);

    let ParamSet { arrays, adam } = params;
    for &id in &ids {
        let g = grads.get(id);
        let w = arrays.get_mut(id);
        let m = adam.m.get_mut(id);
        let v = adam.v.get_mut(id);
        for i in 0..w.len() {
            m[i] = opt.beta1 * m[i] + (1.0 - opt.beta1) * g[i];
            v[i] = opt.beta2 * v[i] + (1.0 - opt.beta2) * g[i] * g[i];
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            w[i] -= lr * m_hat / (v_hat.sqrt() + opt.epsilon);
            if opt.decay_mode == DecayMode::DecoupledWeightDecay {
                w[i] -= lr * opt.decay * w[i];
            }
        }
    }
    params.adam.step += 1;
    Ok(())
}
