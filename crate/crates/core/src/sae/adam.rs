use serde::{Deserialize, Serialize};

use super::grad::Gradients;
use super::params::SaeParams;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// First and second moment accumulators for one parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Moments {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl Moments {
    pub fn zeros(n: usize) -> Self {
        Moments {
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }
}

/// Bias-corrected Adam update of `param` in place. `step` is 1-based.
pub fn adam_update(cfg: &AdamConfig, step: u64, param: &mut [f64], grad: &[f64], mom: &mut Moments) {
    debug_assert_eq!(param.len(), grad.len());
    let t = step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for (((p, &g), m), v) in param.iter_mut().zip(grad).zip(mom.m.iter_mut()).zip(mom.v.iter_mut()) {
        *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
        *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
    }
}

/// Adam state for every trainable tensor of an [`SaeParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub enc_weight: Moments,
    pub enc_bias: Moments,
    pub dec_bias: Moments,
    pub dec_rows: Option<Moments>,
}

impl AdamState {
    pub fn new(params: &SaeParams) -> Self {
        let (l, d) = (params.l(), params.d());
        AdamState {
            step: 0,
            enc_weight: Moments::zeros(l * d),
            enc_bias: Moments::zeros(l),
            dec_bias: Moments::zeros(d),
            dec_rows: (!params.tied()).then(|| Moments::zeros(l * d)),
        }
    }
}

/// One Adam step over all trainable tensors. In tied mode only the encoder
/// is updated; the decoder is its transpose by construction.
pub fn adam_step(params: &mut SaeParams, state: &mut AdamState, grads: &Gradients, cfg: &AdamConfig) {
    state.step += 1;
    let t = state.step;
    adam_update(cfg, t, &mut params.enc_weight, &grads.enc_weight, &mut state.enc_weight);
    adam_update(cfg, t, &mut params.enc_bias, &grads.enc_bias, &mut state.enc_bias);
    adam_update(cfg, t, &mut params.dec_bias, &grads.dec_bias, &mut state.dec_bias);
    if let (Some(p), Some(g), Some(m)) = (
        params.dec_rows.as_mut(),
        grads.dec_rows.as_ref(),
        state.dec_rows.as_mut(),
    ) {
        adam_update(cfg, t, p, g, m);
    }
}
