use nalgebra::{DMatrix, DVector};
use rand::Rng;

use super::ModelParams;
use crate::data::VariantVector;
use crate::error::{Error, Result};

/// Stacked token embeddings, one row per feature plus the leading [ST] row.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenEmbeddings {
    /// (d_mk + 1) x d matrix; row 0 is the [ST] token row.
    pub rows: DMatrix<f64>,
}

/// Positive and negative corrupted views with the permutations that made them.
///
/// Both permutations map output column `j` to input column `perm[j]`.
#[derive(Debug, Clone)]
pub struct ViewPair {
    pub pos: DMatrix<f64>,
    pub neg: DMatrix<f64>,
    pub p_pos: Vec<usize>,
    pub p_neg: Vec<usize>,
    pub lambda: f64,
}

/// Intermediate activations of one attention pass, kept for backprop.
#[derive(Debug, Clone)]
pub struct AttentionCache {
    pub input: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub k: DMatrix<f64>,
    pub v: DMatrix<f64>,
    pub attn: DMatrix<f64>,
    pub pooled: DMatrix<f64>,
}

/// Combined embedding: element-wise sum of the temporal variant and the
/// sector's static embedding.
pub fn combine(variant: &VariantVector, sector: u32, params: &ModelParams) -> Result<DVector<f64>> {
    let dims = params.dims;
    if variant.dim() != dims.d_mk {
        return Err(Error::Dimension { expected: dims.d_mk, got: variant.dim() });
    }
    if sector as usize >= dims.n_sectors {
        return Err(Error::UnknownSector(sector));
    }
    let mut h = DVector::from_column_slice(&variant.values);
    for j in 0..dims.d_mk {
        h[j] += params.static_embed[(sector as usize, j)];
    }
    Ok(h)
}

/// Lift a combined embedding into the token stack: row j (j >= 1) is
/// `b_j + H_j * W_j`, row 0 is the [ST] token.
pub fn tokenize(h: &DVector<f64>, params: &ModelParams) -> Result<TokenEmbeddings> {
    let dims = params.dims;
    if h.len() != dims.d_mk {
        return Err(Error::Dimension { expected: dims.d_mk, got: h.len() });
    }
    let mut rows = DMatrix::zeros(dims.d_c(), dims.d);
    for c in 0..dims.d {
        rows[(0, c)] = params.st_token[c];
    }
    for j in 0..dims.d_mk {
        for c in 0..dims.d {
            rows[(j + 1, c)] = params.tok_b[(j, c)] + h[j] * params.tok_w[(j, c)];
        }
    }
    Ok(TokenEmbeddings { rows })
}

fn permute_columns(m: &DMatrix<f64>, perm: &[usize]) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(m.nrows(), m.ncols());
    for (j, &src) in perm.iter().enumerate() {
        for i in 0..m.nrows() {
            out[(i, j)] = m[(i, src)];
        }
    }
    out
}

/// Uniform random permutation of `0..n` (Fisher-Yates).
fn random_permutation<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        perm.swap(i, j);
    }
    perm
}

/// Mix the token embeddings with column-permuted copies: the positive view
/// keeps weight `lambda` on the original, the negative view weight
/// `1 - lambda`.
pub fn corrupt<R: Rng + ?Sized>(
    tke: &TokenEmbeddings,
    lambda: f64,
    rng: &mut R,
) -> Result<ViewPair> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::Config(format!("lambda must lie in [0, 1], got {lambda}")));
    }
    let d = tke.rows.ncols();
    if d < 2 {
        return Err(Error::Config("dimension corruption needs d >= 2".into()));
    }
    let p_pos = random_permutation(d, rng);
    let p_neg = random_permutation(d, rng);
    Ok(apply_views(tke, &p_pos, &p_neg, lambda))
}

/// Deterministic view construction from already-drawn permutations.
pub fn apply_views(
    tke: &TokenEmbeddings,
    p_pos: &[usize],
    p_neg: &[usize],
    lambda: f64,
) -> ViewPair {
    let pos = if lambda == 1.0 {
        // endpoint: positive view is the original, bit for bit
        tke.rows.clone()
    } else {
        lambda * &tke.rows + (1.0 - lambda) * permute_columns(&tke.rows, p_pos)
    };
    let neg = (1.0 - lambda) * &tke.rows + lambda * permute_columns(&tke.rows, p_neg);
    ViewPair {
        pos,
        neg,
        p_pos: p_pos.to_vec(),
        p_neg: p_neg.to_vec(),
        lambda,
    }
}

/// Single-head self-attention over a token stack, returning the full output
/// matrix and the cache needed for backprop.
///
/// Logits are scaled by 1/sqrt(d) and softmax-normalized per row; the pooled
/// values go through the output projection back to width d.
pub fn attend_full(
    view: &DMatrix<f64>,
    params: &ModelParams,
) -> Result<(DMatrix<f64>, AttentionCache)> {
    let dims = params.dims;
    if view.ncols() != dims.d {
        return Err(Error::Dimension { expected: dims.d, got: view.ncols() });
    }
    let q = view * &params.w_q;
    let k = view * &params.w_k;
    let v = view * &params.w_v;
    let scale = 1.0 / (dims.d as f64).sqrt();
    let logits = scale * (&q * k.transpose());
    let attn = softmax_rows(&logits);
    let pooled = &attn * &v;
    let mut out = &pooled * &params.out_w;
    for i in 0..out.nrows() {
        for c in 0..dims.d {
            out[(i, c)] += params.out_b[c];
        }
    }
    if out.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("attention output".into()));
    }
    let cache = AttentionCache { input: view.clone(), q, k, v, attn, pooled };
    Ok((out, cache))
}

/// The [ST]-row output of [`attend_full`].
pub fn attend(view: &DMatrix<f64>, params: &ModelParams) -> Result<DVector<f64>> {
    let (out, _) = attend_full(view, params)?;
    Ok(out.row(0).transpose())
}

fn softmax_rows(logits: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = logits.clone();
    for mut row in out.row_iter_mut() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for x in row.iter_mut() {
            *x = (*x - max).exp();
            sum += *x;
        }
        for x in row.iter_mut() {
            *x /= sum;
        }
    }
    out
}

/// Hinge triplet loss with Euclidean distances:
/// `max(0, ||a - p|| - ||a - n|| + margin)`.
pub fn triplet_loss(
    anchor: &DVector<f64>,
    pos: &DVector<f64>,
    neg: &DVector<f64>,
    margin: f64,
) -> f64 {
    let d_ap = (anchor - pos).norm();
    let d_an = (anchor - neg).norm();
    (d_ap - d_an + margin).max(0.0)
}

/// Inference-path embedding: combine, tokenize, and attend on the
/// uncorrupted token embeddings; the [ST] output is the stock representation.
pub fn forward_embed(
    variant: &VariantVector,
    sector: u32,
    params: &ModelParams,
) -> Result<DVector<f64>> {
    let h = combine(variant, sector, params)?;
    let tke = tokenize(&h, params)?;
    attend(&tke.rows, params)
}
