use std::collections::BTreeMap;

use ndarray::Zip;
use serde::{Deserialize, Serialize};

use super::{Grads, ParamStore, Tensor};
use crate::error::Error;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            ..Self::default()
        }
    }
}

/// Moment estimates for every parameter plus the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    pub m: BTreeMap<String, Tensor>,
    pub v: BTreeMap<String, Tensor>,
}

impl AdamState {
    /// Zero moments shaped like `params`.
    pub fn new(params: &ParamStore, config: AdamConfig) -> Self {
        let zeros = params.zero_grads();
        Self {
            config,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }
}

/// One bias-corrected Adam update, applied in place.
///
/// Every parameter must have a gradient; nothing is modified if one is missing.
pub fn adam_step(
    params: &mut ParamStore,
    grads: &Grads,
    state: &mut AdamState,
) -> Result<(), Error> {
    if let Some(missing) = params.names().find(|n| !grads.contains_key(*n)) {
        return Err(Error::MissingGradient(missing.to_string()));
    }
    state.step += 1;
    let AdamConfig {
        lr,
        beta1,
        beta2,
        eps,
    } = state.config;
    let t = state.step as i32;
    let bc1 = 1.0 - beta1.powi(t);
    let bc2 = 1.0 - beta2.powi(t);

    for (name, p) in params.iter_mut() {
        let g = &grads[name];
        let m = state
            .m
            .entry(name.to_string())
            .or_insert_with(|| Tensor::zeros(p.raw_dim()));
        let v = state
            .v
            .entry(name.to_string())
            .or_insert_with(|| Tensor::zeros(p.raw_dim()));
        if m.raw_dim() != p.raw_dim() || g.raw_dim() != p.raw_dim() {
            return Err(Error::Shape(format!(
                "adam: parameter `{name}` is {:?}, gradient {:?}",
                p.shape(),
                g.shape()
            )));
        }
        Zip::from(p).and(g).and(m).and(v).for_each(|p, &g, m, v| {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        });
    }
    Ok(())
}
