//! The representation network: combined embedding, feature tokenizer,
//! dimension-corruption views, single-head self-attention over the token
//! stack, and the triplet objective with exact gradients.

mod forward;
mod loss;

pub use forward::{
    apply_views, attend, attend_full, combine, corrupt, forward_embed, tokenize, triplet_loss,
    AttentionCache, TokenEmbeddings, ViewPair,
};
pub use loss::{
    draw_permutations, loss_and_grads, ssl_grads_with_perms, ssl_loss_with_perms, PermPair,
    SslSample,
};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default mixing weight for dimension corruption.
pub const DEFAULT_LAMBDA: f64 = 0.7;
/// Default triplet margin.
pub const DEFAULT_MARGIN: f64 = 1.0;

/// Network dimensions, fixed at construction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    /// Token embedding width.
    pub d: usize,
    /// Query/key width.
    pub d_k: usize,
    /// Value width.
    pub d_v: usize,
    /// Combined-embedding length (feature dim x window count).
    pub d_mk: usize,
    pub n_sectors: usize,
}

impl ModelDims {
    /// Token count: one row per feature plus the leading [ST] row.
    pub fn d_c(&self) -> usize {
        self.d_mk + 1
    }

    /// Total number of scalar parameters.
    pub fn param_count(&self) -> usize {
        self.n_sectors * self.d_mk         // static embedding table
            + 2 * self.d_mk * self.d       // tokenizer weights and biases
            + self.d                       // [ST] token
            + self.d * self.d_k * 2        // W_Q, W_K
            + self.d * self.d_v            // W_V
            + self.d_v * self.d            // output projection weight
            + self.d                       // output projection bias
    }
}

/// All learnable parameters of the representation network.
///
/// Also serves as the gradient container: gradients have the same shape.
/// The canonical flat layout (row-major per field, fields in declaration
/// order) is what [`ModelParams::flatten`] emits.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub dims: ModelDims,
    /// Per-sector embedding, one row per sector id, width d_mk.
    pub static_embed: DMatrix<f64>,
    /// Tokenizer weight vectors, row j is W_j in R^d.
    pub tok_w: DMatrix<f64>,
    /// Tokenizer bias vectors, row j is b_j in R^d.
    pub tok_b: DMatrix<f64>,
    pub st_token: DVector<f64>,
    pub w_q: DMatrix<f64>,
    pub w_k: DMatrix<f64>,
    pub w_v: DMatrix<f64>,
    /// Output projection mapping the d_v attention output back to R^d.
    pub out_w: DMatrix<f64>,
    pub out_b: DVector<f64>,
}

impl ModelParams {
    pub fn zeros(dims: ModelDims) -> Self {
        Self {
            dims,
            static_embed: DMatrix::zeros(dims.n_sectors, dims.d_mk),
            tok_w: DMatrix::zeros(dims.d_mk, dims.d),
            tok_b: DMatrix::zeros(dims.d_mk, dims.d),
            st_token: DVector::zeros(dims.d),
            w_q: DMatrix::zeros(dims.d, dims.d_k),
            w_k: DMatrix::zeros(dims.d, dims.d_k),
            w_v: DMatrix::zeros(dims.d, dims.d_v),
            out_w: DMatrix::zeros(dims.d_v, dims.d),
            out_b: DVector::zeros(dims.d),
        }
    }

    /// Seeded initialization: Gaussian (sigma 0.02) static table, uniform
    /// [-1/sqrt(d), 1/sqrt(d)] tokenizer/[ST]/attention weights, uniform
    /// [-1/sqrt(d_v), 1/sqrt(d_v)] output projection, zero output bias.
    pub fn init<R: Rng + ?Sized>(dims: ModelDims, rng: &mut R) -> Self {
        use rand_distr::{Distribution, Normal};
        let normal = Normal::new(0.0, 0.02).expect("valid sigma");
        let bound = 1.0 / (dims.d as f64).sqrt();
        let bound_v = 1.0 / (dims.d_v as f64).sqrt();
        let mut p = Self::zeros(dims);
        fill_row_major(&mut p.static_embed, |rng| normal.sample(rng), rng);
        fill_row_major(&mut p.tok_w, |rng| rng.random_range(-bound..=bound), rng);
        fill_row_major(&mut p.tok_b, |rng| rng.random_range(-bound..=bound), rng);
        for v in p.st_token.iter_mut() {
            *v = rng.random_range(-bound..=bound);
        }
        fill_row_major(&mut p.w_q, |rng| rng.random_range(-bound..=bound), rng);
        fill_row_major(&mut p.w_k, |rng| rng.random_range(-bound..=bound), rng);
        fill_row_major(&mut p.w_v, |rng| rng.random_range(-bound..=bound), rng);
        fill_row_major(&mut p.out_w, |rng| rng.random_range(-bound_v..=bound_v), rng);
        p
    }

    /// Canonical flat view; `unflatten` round-trips exactly.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.dims.param_count());
        for (_, values) in self.group_views() {
            out.extend(values);
        }
        out
    }

    pub fn unflatten(dims: ModelDims, flat: &[f64]) -> Result<Self> {
        if flat.len() != dims.param_count() {
            return Err(Error::Dimension { expected: dims.param_count(), got: flat.len() });
        }
        let mut p = Self::zeros(dims);
        let mut k = 0;
        let take_matrix = |m: &mut DMatrix<f64>, k: &mut usize| {
            for i in 0..m.nrows() {
                for j in 0..m.ncols() {
                    m[(i, j)] = flat[*k];
                    *k += 1;
                }
            }
        };
        take_matrix(&mut p.static_embed, &mut k);
        take_matrix(&mut p.tok_w, &mut k);
        take_matrix(&mut p.tok_b, &mut k);
        for v in p.st_token.iter_mut() {
            *v = flat[k];
            k += 1;
        }
        take_matrix(&mut p.w_q, &mut k);
        take_matrix(&mut p.w_k, &mut k);
        take_matrix(&mut p.w_v, &mut k);
        take_matrix(&mut p.out_w, &mut k);
        for v in p.out_b.iter_mut() {
            *v = flat[k];
            k += 1;
        }
        debug_assert_eq!(k, flat.len());
        Ok(p)
    }

    /// Named parameter groups in canonical order, as row-major value vectors.
    pub fn group_views(&self) -> Vec<(&'static str, Vec<f64>)> {
        vec![
            ("static_embed", row_major(&self.static_embed)),
            ("tok_w", row_major(&self.tok_w)),
            ("tok_b", row_major(&self.tok_b)),
            ("st_token", self.st_token.iter().copied().collect()),
            ("w_q", row_major(&self.w_q)),
            ("w_k", row_major(&self.w_k)),
            ("w_v", row_major(&self.w_v)),
            ("out_w", row_major(&self.out_w)),
            ("out_b", self.out_b.iter().copied().collect()),
        ]
    }

    pub fn is_finite(&self) -> bool {
        self.flatten().iter().all(|v| v.is_finite())
    }

    /// In-place `self += scale * other`, used by optimizers and accumulation.
    pub fn axpy(&mut self, scale: f64, other: &Self) {
        self.static_embed += scale * &other.static_embed;
        self.tok_w += scale * &other.tok_w;
        self.tok_b += scale * &other.tok_b;
        self.st_token += scale * &other.st_token;
        self.w_q += scale * &other.w_q;
        self.w_k += scale * &other.w_k;
        self.w_v += scale * &other.w_v;
        self.out_w += scale * &other.out_w;
        self.out_b += scale * &other.out_b;
    }
}

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    let mut out = Vec::with_capacity(m.nrows() * m.ncols());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            out.push(m[(i, j)]);
        }
    }
    out
}

fn fill_row_major<R: Rng + ?Sized>(
    m: &mut DMatrix<f64>,
    mut sample: impl FnMut(&mut R) -> f64,
    rng: &mut R,
) {
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            m[(i, j)] = sample(rng);
        }
    }
}
