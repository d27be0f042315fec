//! Adam with bias-corrected moment estimates.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::ParamSet;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub m: ParamSet,
    pub v: ParamSet,
    pub t: u64,
}

impl AdamState {
    /// Zero moments shaped like `params`.
    pub fn new(params: &ParamSet, config: AdamConfig) -> Self {
        let zeros: ParamSet = params
            .iter()
            .map(|(k, t)| (k.clone(), Tensor::zeros(t.shape())))
            .collect();
        Self {
            config,
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }
}

/// One Adam update. Returns new parameters and state; the inputs are untouched.
///
/// Parameters without an entry in `grads` are treated as having zero gradient.
pub fn adam_step(
    params: &ParamSet,
    grads: &ParamSet,
    state: &AdamState,
) -> Result<(ParamSet, AdamState)> {
    let mut next_params = params.clone();
    let mut next = state.clone();
    adam_step_in_place(&mut next_params, grads, &mut next)?;
    Ok((next_params, next))
}

/// In-place form of [`adam_step`]. On error neither argument is modified.
pub fn adam_step_in_place(
    params: &mut ParamSet,
    grads: &ParamSet,
    state: &mut AdamState,
) -> Result<()> {
    for (name, g) in grads {
        let p = params
            .get(name)
            .ok_or_else(|| Error::dim(format!("gradient for unknown parameter `{name}`")))?;
        if p.shape() != g.shape() {
            return Err(Error::dim(format!(
                "gradient for `{name}` has shape {:?}, parameter has {:?}",
                g.shape(),
                p.shape()
            )));
        }
        if !g.is_finite() {
            return Err(Error::NonFiniteGradient {
                param: name.clone(),
            });
        }
    }
    for (name, p) in params.iter() {
        let ok = state.m.get(name).is_some_and(|m| m.shape() == p.shape())
            && state.v.get(name).is_some_and(|v| v.shape() == p.shape());
        if !ok {
            return Err(Error::dim(format!(
                "optimizer state does not match parameter `{name}`"
            )));
        }
    }

    let AdamConfig {
        learning_rate: lr,
        beta1: b1,
        beta2: b2,
        eps,
    } = state.config;
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);

    for (name, p) in params.iter_mut() {
        let m = state.m.get_mut(name).expect("checked above");
        let v = state.v.get_mut(name).expect("checked above");
        let g = grads.get(name);
        for j in 0..p.len() {
            let gj = g.map_or(0.0, |g| g.data()[j]);
            let mj = b1 * m.data()[j] + (1.0 - b1) * gj;
            let vj = b2 * v.data()[j] + (1.0 - b2) * gj * gj;
            m.data_mut()[j] = mj;
            v.data_mut()[j] = vj;
            let m_hat = mj / c1;
            let v_hat = vj / c2;
            p.data_mut()[j] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}
