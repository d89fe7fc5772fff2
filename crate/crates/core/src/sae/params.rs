use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg::{dot, transpose};

/// Indices of the `k` largest entries of `v` by signed value, ties to the
/// lower index. Returned in ascending index order.
pub fn topk_indices(v: &[f64], k: usize) -> Result<Vec<usize>> {
    if k == 0 || k > v.len() {
        return Err(Error::InvalidArgument(format!(
            "top-k requires 1 <= k <= l, got k={k}, l={}",
            v.len()
        )));
    }
    let mut idx: Vec<usize> = (0..v.len()).collect();
    let rank = |a: &usize, b: &usize| v[*b].total_cmp(&v[*a]).then(a.cmp(b));
    if k < idx.len() {
        idx.select_nth_unstable_by(k - 1, rank);
        idx.truncate(k);
    }
    idx.sort_unstable();
    Ok(idx)
}

/// Keep the `k` largest entries of `v` verbatim and zero the rest.
pub fn topk_select(v: &[f64], k: usize) -> Result<Vec<f64>> {
    let keep = topk_indices(v, k)?;
    let mut out = vec![0.0; v.len()];
    for i in keep {
        out[i] = v[i];
    }
    Ok(out)
}

/// Mean squared error over the entries of two equal-length vectors.
pub fn mse_loss(x: &[f64], recon: &[f64]) -> f64 {
    assert_eq!(x.len(), recon.len(), "mse_loss: length mismatch");
    if x.is_empty() {
        return 0.0;
    }
    let sum: f64 = x.iter().zip(recon).map(|(a, b)| (a - b) * (a - b)).sum();
    sum / x.len() as f64
}

/// Sparse latent code: selected latent indices (ascending) and their values.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseCode {
    pub indices: Vec<usize>,
    pub values: Vec<f64>,
}

impl SparseCode {
    pub fn to_dense(&self, l: usize) -> Vec<f64> {
        let mut z = vec![0.0; l];
        for (&j, &v) in self.indices.iter().zip(&self.values) {
            z[j] = v;
        }
        z
    }

    /// Value for latent `j`, zero if it was not selected.
    pub fn get(&self, j: usize) -> f64 {
        self.indices.binary_search(&j).map(|p| self.values[p]).unwrap_or(0.0)
    }
}

/// TopK sparse autoencoder parameters.
///
/// The encoder maps `R^d -> R^l` and is stored `l x d` row-major, so row `j`
/// is latent `j`'s encoder vector. The decoder `W_dec` is `d x l`; its column
/// `j` is feature `j`'s decoder vector. Decoder vectors are stored
/// contiguously (`l x d`) and, when tied, are not stored at all: they are the
/// encoder rows.
#[derive(Debug, Clone, PartialEq)]
pub struct SaeParams {
    d: usize,
    l: usize,
    k: usize,
    tied: bool,
    pub(crate) enc_weight: Vec<f64>,
    pub(crate) enc_bias: Vec<f64>,
    pub(crate) dec_bias: Vec<f64>,
    pub(crate) dec_rows: Option<Vec<f64>>,
}

impl SaeParams {
    /// Seeded initialization: encoder entries uniform in `[-1/sqrt(d), 1/sqrt(d)]`,
    /// zero biases. An untied decoder starts as the encoder transpose.
    pub fn init(d: usize, expansion_factor: usize, k: usize, tied: bool, seed: u64) -> Result<Self> {
        if d == 0 || expansion_factor == 0 {
            return Err(Error::InvalidArgument("d and expansion_factor must be positive".into()));
        }
        let l = expansion_factor * d;
        if k == 0 || k > l {
            return Err(Error::InvalidArgument(format!("need 1 <= k <= l, got k={k}, l={l}")));
        }
        let bound = 1.0 / (d as f64).sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let enc_weight: Vec<f64> = (0..l * d).map(|_| rng.random_range(-bound..bound)).collect();
        let dec_rows = (!tied).then(|| enc_weight.clone());
        Ok(SaeParams {
            d,
            l,
            k,
            tied,
            enc_weight,
            enc_bias: vec![0.0; l],
            dec_bias: vec![0.0; d],
            dec_rows,
        })
    }

    /// Assemble parameters from explicit arrays. `dec_weight` is `d x l`
    /// row-major and must be `None` exactly when `tied`.
    pub fn from_parts(
        d: usize,
        l: usize,
        k: usize,
        enc_weight: Vec<f64>,
        enc_bias: Vec<f64>,
        dec_bias: Vec<f64>,
        dec_weight: Option<Vec<f64>>,
    ) -> Result<Self> {
        if d == 0 || l == 0 {
            return Err(Error::InvalidArgument("d and l must be positive".into()));
        }
        if k == 0 || k > l {
            return Err(Error::InvalidArgument(format!("need 1 <= k <= l, got k={k}, l={l}")));
        }
        if enc_weight.len() != l * d {
            return Err(Error::dims("enc_weight (l*d)", l * d, enc_weight.len()));
        }
        if enc_bias.len() != l {
            return Err(Error::dims("enc_bias (l)", l, enc_bias.len()));
        }
        if dec_bias.len() != d {
            return Err(Error::dims("dec_bias (d)", d, dec_bias.len()));
        }
        let dec_rows = match dec_weight {
            Some(w) => {
                if w.len() != d * l {
                    return Err(Error::dims("dec_weight (d*l)", d * l, w.len()));
                }
                Some(transpose(&w, d, l))
            }
            None => None,
        };
        Ok(SaeParams {
            d,
            l,
            k,
            tied: dec_rows.is_none(),
            enc_weight,
            enc_bias,
            dec_bias,
            dec_rows,
        })
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn l(&self) -> usize {
        self.l
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn tied(&self) -> bool {
        self.tied
    }

    pub fn enc_weight(&self) -> &[f64] {
        &self.enc_weight
    }

    pub fn enc_bias(&self) -> &[f64] {
        &self.enc_bias
    }

    pub fn dec_bias(&self) -> &[f64] {
        &self.dec_bias
    }

    pub fn enc_weight_mut(&mut self) -> &mut [f64] {
        &mut self.enc_weight
    }

    pub fn enc_bias_mut(&mut self) -> &mut [f64] {
        &mut self.enc_bias
    }

    pub fn dec_bias_mut(&mut self) -> &mut [f64] {
        &mut self.dec_bias
    }

    /// Decoder vectors as `l x d` rows; `None` when tied.
    pub fn dec_rows_mut(&mut self) -> Option<&mut [f64]> {
        self.dec_rows.as_deref_mut()
    }

    pub fn encoder_row(&self, j: usize) -> &[f64] {
        &self.enc_weight[j * self.d..(j + 1) * self.d]
    }

    /// Decoder vector of feature `j` (column `j` of `W_dec`).
    pub fn decoder_row(&self, j: usize) -> &[f64] {
        match &self.dec_rows {
            Some(rows) => &rows[j * self.d..(j + 1) * self.d],
            None => self.encoder_row(j),
        }
    }

    /// All decoder vectors, `l x d` row-major.
    pub fn decoder_rows(&self) -> &[f64] {
        self.dec_rows.as_deref().unwrap_or(&self.enc_weight)
    }

    /// `W_dec` materialized as `d x l` row-major.
    pub fn dec_weight(&self) -> Vec<f64> {
        transpose(self.decoder_rows(), self.l, self.d)
    }

    pub fn pre_activation(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.d {
            return Err(Error::dims("encode input", self.d, x.len()));
        }
        let centered: Vec<f64> = x.iter().zip(&self.dec_bias).map(|(a, b)| a - b).collect();
        Ok(self
            .enc_weight
            .chunks_exact(self.d)
            .zip(&self.enc_bias)
            .map(|(row, b)| dot(row, &centered) + b)
            .collect())
    }

    pub fn encode_sparse(&self, x: &[f64]) -> Result<SparseCode> {
        let pre = self.pre_activation(x)?;
        let indices = topk_indices(&pre, self.k)?;
        let values = indices.iter().map(|&j| pre[j]).collect();
        Ok(SparseCode { indices, values })
    }

    /// `z = TopK(W_enc (x - b_dec) + b_enc)` as a dense `l`-vector.
    pub fn encode(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.encode_sparse(x)?.to_dense(self.l))
    }

    pub fn decode_sparse(&self, code: &SparseCode) -> Vec<f64> {
        let mut out = vec![0.0; self.d];
        for (&j, &zj) in code.indices.iter().zip(&code.values) {
            for (o, w) in out.iter_mut().zip(self.decoder_row(j)) {
                *o += zj * w;
            }
        }
        for (o, b) in out.iter_mut().zip(&self.dec_bias) {
            *o += b;
        }
        out
    }

    /// `x' = W_dec z + b_dec`, touching only the nonzero entries of `z`.
    pub fn decode(&self, z: &[f64]) -> Result<Vec<f64>> {
        if z.len() != self.l {
            return Err(Error::dims("decode input", self.l, z.len()));
        }
        let (indices, values) = z
            .iter()
            .enumerate()
            .filter(|(_, v)| **v != 0.0)
            .map(|(j, v)| (j, *v))
            .unzip();
        Ok(self.decode_sparse(&SparseCode { indices, values }))
    }

    /// Reconstruction MSE of one input.
    pub fn reconstruction_mse(&self, x: &[f64]) -> Result<f64> {
        let code = self.encode_sparse(x)?;
        Ok(mse_loss(x, &self.decode_sparse(&code)))
    }

    /// Whether decoder vector `j` is exactly zero.
    pub fn is_zero_feature(&self, j: usize) -> bool {
        self.decoder_row(j).iter().all(|&v| v == 0.0)
    }

    pub(crate) fn all_finite(&self) -> bool {
        self.enc_weight
            .iter()
            .chain(&self.enc_bias)
            .chain(&self.dec_bias)
            .chain(self.dec_rows.iter().flatten())
            .all(|v| v.is_finite())
    }
}
