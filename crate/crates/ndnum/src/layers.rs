//! Composite layers assembled from tape primitives.

use crate::array::DenseArray;
use crate::error::{NumError, Result};
use crate::tape::{Graph, Var};

/// `x · w + b` with `w` of shape `in×out` and `b` of length `out`.
pub fn linear(g: &mut Graph, x: Var, w: Var, b: Var) -> Result<Var> {
    let xw = g.matmul(x, w)?;
    g.add_row_bias(xw, b)
}

/// Weights of one multi-head self-attention layer. Projections are `d×d`.
#[derive(Debug, Clone, Copy)]
pub struct AttentionVars {
    pub wq: Var,
    pub bq: Var,
    pub wk: Var,
    pub bk: Var,
    pub wv: Var,
    pub bv: Var,
    pub wo: Var,
    pub bo: Var,
}

/// Output of [`multihead_attention`]; `weights` holds one `L×L` row-stochastic
/// matrix per head.
#[derive(Debug, Clone)]
pub struct AttentionOutput {
    pub output: Var,
    pub weights: Vec<Var>,
}

/// Scaled dot-product self-attention over the rows of `x` (`L×d`).
pub fn multihead_attention(
    g: &mut Graph,
    x: Var,
    p: &AttentionVars,
    n_heads: usize,
) -> Result<AttentionOutput> {
    let (_, d) = g.value(x).require_2d("multihead_attention")?;
    if n_heads == 0 || d % n_heads != 0 {
        return Err(NumError::Config(format!(
            "embedding width {d} is not divisible by {n_heads} heads"
        )));
    }
    let head_dim = d / n_heads;
    let q = linear(g, x, p.wq, p.bq)?;
    let k = linear(g, x, p.wk, p.bk)?;
    let v = linear(g, x, p.wv, p.bv)?;
    let scale = 1.0 / (head_dim as f64).sqrt();
    let mut heads = Vec::with_capacity(n_heads);
    let mut weights = Vec::with_capacity(n_heads);
    for h in 0..n_heads {
        let (lo, hi) = (h * head_dim, (h + 1) * head_dim);
        let qh = g.slice_cols(q, lo, hi)?;
        let kh = g.slice_cols(k, lo, hi)?;
        let vh = g.slice_cols(v, lo, hi)?;
        let kt = g.transpose(kh)?;
        let scores = g.matmul(qh, kt)?;
        let scores = g.scale(scores, scale);
        let attn = g.softmax_rows(scores)?;
        heads.push(g.matmul(attn, vh)?);
        weights.push(attn);
    }
    let merged = if heads.len() == 1 {
        heads[0]
    } else {
        g.concat_cols(&heads)?
    };
    let output = linear(g, merged, p.wo, p.bo)?;
    Ok(AttentionOutput { output, weights })
}

/// Weights of one LSTM direction.
#[derive(Debug, Clone, Copy)]
pub struct LstmVars {
    pub w_ih: Var,
    pub w_hh: Var,
    pub bias: Var,
}

/// Forward and backward LSTM sweeps, concatenated per step: `L×2h`.
pub fn bilstm(g: &mut Graph, x: Var, fwd: &LstmVars, bwd: &LstmVars) -> Result<Var> {
    let f = g.lstm(x, fwd.w_ih, fwd.w_hh, fwd.bias, false)?;
    let b = g.lstm(x, bwd.w_ih, bwd.w_hh, bwd.bias, true)?;
    g.concat_cols(&[f, b])
}

/// Inverted dropout mask: kept entries are scaled by `1/(1-rate)`.
///
/// `uniform` must yield draws in `[0, 1)`.
pub fn dropout_mask(shape: &[usize], rate: f64, mut uniform: impl FnMut() -> f64) -> DenseArray {
    let keep = 1.0 - rate;
    let mut mask = DenseArray::zeros(shape);
    for m in mask.data_mut() {
        *m = if uniform() < keep { 1.0 / keep } else { 0.0 };
    }
    mask
}

/// Sinusoidal position table: `P[τ,2k] = sin(τ/10000^{2k/d})`,
/// `P[τ,2k+1] = cos(τ/10000^{2k/d})`.
pub fn positional_encoding(len: usize, d: usize) -> Result<DenseArray> {
    if d < 2 || len == 0 {
        return Err(NumError::Config(format!(
            "positional encoding needs len >= 1 and d >= 2, got len={len}, d={d}"
        )));
    }
    let mut p = DenseArray::zeros(&[len, d]);
    for tau in 0..len {
        for k in 0..d / 2 {
            let angle = tau as f64 / 10000f64.powf(2.0 * k as f64 / d as f64);
            p.set(tau, 2 * k, angle.sin());
            p.set(tau, 2 * k + 1, angle.cos());
        }
    }
    Ok(p)
}
