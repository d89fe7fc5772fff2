//! Analytic gradients of the mean batch MSE.
//!
//! The TopK selection is held fixed (straight-through on the selected
//! coordinates). With centered input `c = x - b_dec`, pre-activation
//! `p = W_enc c + b_enc`, selected set `S`, reconstruction
//! `x' = sum_{j in S} p_j D_j + b_dec` and `g = 2 (x' - x) / (d * batch)`:
//!
//! ```text
//! dL/dD_j     = p_j g                  (j in S)
//! delta_j     = D_j . g                (j in S, else 0)
//! dL/dW_enc_j = delta_j c
//! dL/db_enc   = delta
//! dL/db_dec   = g - W_enc^T delta
//! ```
//!
//! When tied, `D_j` is encoder row `j` and both contributions land on it.

use crate::error::{Error, Result};
use crate::linalg::{axpy, dot, transpose};

use super::params::{mse_loss, SaeParams, SparseCode};

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub enc_weight: Vec<f64>,
    pub enc_bias: Vec<f64>,
    pub dec_bias: Vec<f64>,
    /// Gradient of the decoder vectors (`l x d`); `None` when tied.
    pub dec_rows: Option<Vec<f64>>,
}

impl Gradients {
    pub fn zeros_like(params: &SaeParams) -> Self {
        Gradients {
            enc_weight: vec![0.0; params.l() * params.d()],
            enc_bias: vec![0.0; params.l()],
            dec_bias: vec![0.0; params.d()],
            dec_rows: (!params.tied()).then(|| vec![0.0; params.l() * params.d()]),
        }
    }

    /// Gradient with respect to `W_dec` laid out `d x l`; `None` when tied.
    pub fn dec_weight(&self) -> Option<Vec<f64>> {
        let d = self.dec_bias.len();
        let l = self.enc_bias.len();
        self.dec_rows.as_ref().map(|r| transpose(r, l, d))
    }

    pub fn max_abs(&self) -> f64 {
        self.enc_weight
            .iter()
            .chain(&self.enc_bias)
            .chain(&self.dec_bias)
            .chain(self.dec_rows.iter().flatten())
            .fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Result of one forward/backward pass over a batch.
#[derive(Debug, Clone)]
pub struct BatchPass {
    /// Mean over rows of the per-row MSE.
    pub loss: f64,
    pub grads: Gradients,
    /// Selected latents for each row, in row order.
    pub codes: Vec<SparseCode>,
}

fn check_batch(params: &SaeParams, rows: &[f64]) -> Result<usize> {
    let d = params.d();
    if rows.is_empty() {
        return Err(Error::InvalidArgument("batch must be nonempty".into()));
    }
    if !rows.len().is_multiple_of(d) {
        return Err(Error::dims("batch length (multiple of d)", d, rows.len()));
    }
    Ok(rows.len() / d)
}

/// Mean batch MSE without gradients.
pub fn batch_loss(params: &SaeParams, rows: &[f64]) -> Result<f64> {
    let b = check_batch(params, rows)?;
    let mut total = 0.0;
    for x in rows.chunks_exact(params.d()) {
        total += params.reconstruction_mse(x)?;
    }
    Ok(total / b as f64)
}

/// Forward pass plus analytic gradients over a `b x d` row-major batch.
pub fn forward_backward(params: &SaeParams, rows: &[f64]) -> Result<BatchPass> {
    let b = check_batch(params, rows)?;
    let d = params.d();
    let scale = 2.0 / (d as f64 * b as f64);
    let mut grads = Gradients::zeros_like(params);
    let mut codes = Vec::with_capacity(b);
    let mut total = 0.0;
    let mut centered = vec![0.0; d];
    let mut g = vec![0.0; d];

    for x in rows.chunks_exact(d) {
        let code = params.encode_sparse(x)?;
        let recon = params.decode_sparse(&code);
        total += mse_loss(x, &recon);

        for i in 0..d {
            centered[i] = x[i] - params.dec_bias()[i];
            g[i] = scale * (recon[i] - x[i]);
        }
        axpy(1.0, &g, &mut grads.dec_bias);

        for (&j, &zj) in code.indices.iter().zip(&code.values) {
            let delta = dot(params.decoder_row(j), &g);
            let row = j * d..(j + 1) * d;
            axpy(delta, &centered, &mut grads.enc_weight[row.clone()]);
            grads.enc_bias[j] += delta;
            axpy(-delta, params.encoder_row(j), &mut grads.dec_bias);
            match &mut grads.dec_rows {
                Some(dec) => axpy(zj, &g, &mut dec[row]),
                None => axpy(zj, &g, &mut grads.enc_weight[row]),
            }
        }
        codes.push(code);
    }

    Ok(BatchPass {
        loss: total / b as f64,
        grads,
        codes,
    })
}

pub fn gradients(params: &SaeParams, rows: &[f64]) -> Result<Gradients> {
    forward_backward(params, rows).map(|p| p.grads)
}
