//! Batch SSL objective and its exact gradients.
//!
//! One batch element contributes `max(0, ||a-p|| - ||a-n|| + margin)` where
//! `a` is the [ST] output of the uncorrupted token stack and `p`, `n` are the
//! [ST] outputs of the positive/negative views. All three attention passes
//! share weights, so every parameter group receives gradient from all paths.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use super::forward::{apply_views, attend_full, combine, tokenize, AttentionCache};
use super::{ModelParams, ModelDims};
use crate::data::VariantVector;
use crate::error::{Error, Result};

/// A batch element: temporal variant plus sector id.
pub type SslSample<'a> = (&'a VariantVector, u32);

/// Per-element positive/negative column permutations.
pub type PermPair = (Vec<usize>, Vec<usize>);

/// Draw one independent permutation pair per batch element.
pub fn draw_permutations<R: Rng + ?Sized>(
    n_samples: usize,
    d: usize,
    rng: &mut R,
) -> Vec<PermPair> {
    let draw = |rng: &mut R| {
        let mut perm: Vec<usize> = (0..d).collect();
        for i in (1..d).rev() {
            let j = rng.random_range(0..=i);
            perm.swap(i, j);
        }
        perm
    };
    (0..n_samples).map(|_| (draw(rng), draw(rng))).collect()
}

/// Mean triplet loss over the batch with fixed permutations (forward only).
pub fn ssl_loss_with_perms(
    batch: &[SslSample<'_>],
    perms: &[PermPair],
    params: &ModelParams,
    lambda: f64,
    margin: f64,
) -> Result<f64> {
    let (loss, _) = run_batch(batch, perms, params, lambda, margin, false)?;
    Ok(loss)
}

/// Mean triplet loss and exact parameter gradients with fixed permutations.
pub fn ssl_grads_with_perms(
    batch: &[SslSample<'_>],
    perms: &[PermPair],
    params: &ModelParams,
    lambda: f64,
    margin: f64,
) -> Result<(f64, ModelParams)> {
    let (loss, grads) = run_batch(batch, perms, params, lambda, margin, true)?;
    Ok((loss, grads.expect("gradients requested")))
}

/// Spec-facing entry point: draws fresh permutations from `rng`, then
/// computes the batch loss and gradients.
pub fn loss_and_grads<R: Rng + ?Sized>(
    batch: &[SslSample<'_>],
    params: &ModelParams,
    lambda: f64,
    margin: f64,
    rng: &mut R,
) -> Result<(f64, ModelParams)> {
    if batch.is_empty() {
        return Err(Error::Data("empty batch".into()));
    }
    let perms = draw_permutations(batch.len(), params.dims.d, rng);
    ssl_grads_with_perms(batch, &perms, params, lambda, margin)
}

fn run_batch(
    batch: &[SslSample<'_>],
    perms: &[PermPair],
    params: &ModelParams,
    lambda: f64,
    margin: f64,
    want_grads: bool,
) -> Result<(f64, Option<ModelParams>)> {
    if batch.is_empty() {
        return Err(Error::Data("empty batch".into()));
    }
    if perms.len() != batch.len() {
        return Err(Error::Dimension { expected: batch.len(), got: perms.len() });
    }
    let mut total = 0.0;
    let mut grads = want_grads.then(|| ModelParams::zeros(params.dims));
    let weight = 1.0 / batch.len() as f64;

    for ((variant, sector), (p_pos, p_neg)) in batch.iter().zip(perms) {
        let h = combine(variant, *sector, params)?;
        let tke = tokenize(&h, params)?;
        let views = apply_views(&tke, p_pos, p_neg, lambda);

        let (out_a, cache_a) = attend_full(&tke.rows, params)?;
        let (out_p, cache_p) = attend_full(&views.pos, params)?;
        let (out_n, cache_n) = attend_full(&views.neg, params)?;

        let a = out_a.row(0).transpose();
        let p = out_p.row(0).transpose();
        let n = out_n.row(0).transpose();

        let diff_ap = &a - &p;
        let diff_an = &a - &n;
        let d_ap = diff_ap.norm();
        let d_an = diff_an.norm();
        let pre_hinge = d_ap - d_an + margin;
        let loss = pre_hinge.max(0.0);
        if !loss.is_finite() {
            return Err(Error::NonFinite("triplet loss".into()));
        }
        total += weight * loss;

        let Some(g) = grads.as_mut() else { continue };
        if pre_hinge <= 0.0 {
            continue; // inactive hinge, zero gradient
        }

        // d loss / d (a, p, n); distance gradients vanish at zero distance
        let mut da = DVector::zeros(a.len());
        let mut dp = DVector::zeros(a.len());
        let mut dn = DVector::zeros(a.len());
        if d_ap > 0.0 {
            let u = &diff_ap / d_ap;
            da += weight * &u;
            dp -= weight * &u;
        }
        if d_an > 0.0 {
            let u = &diff_an / d_an;
            da -= weight * &u;
            dn += weight * &u;
        }

        let d_tke_a = attend_backward(&cache_a, &da, params, g);
        let d_pos = attend_backward(&cache_p, &dp, params, g);
        let d_neg = attend_backward(&cache_n, &dn, params, g);

        // view mixing backward: output column j reads input column perm[j]
        let mut d_tke = d_tke_a;
        accumulate_view_grad(&mut d_tke, &d_pos, p_pos, lambda);
        accumulate_view_grad(&mut d_tke, &d_neg, p_neg, 1.0 - lambda);

        tokenize_backward(&d_tke, &h, *sector, params, g);
    }

    Ok((total, grads))
}

/// Backprop one attention pass. `d_st` is the gradient w.r.t. the [ST]
/// output row; parameter gradients accumulate into `grads` and the return
/// value is the gradient w.r.t. the attention input matrix.
fn attend_backward(
    cache: &AttentionCache,
    d_st: &DVector<f64>,
    params: &ModelParams,
    grads: &mut ModelParams,
) -> DMatrix<f64> {
    let dims = params.dims;
    let d_c = cache.input.nrows();

    // upstream gradient is supported on row 0 only
    let mut d_out = DMatrix::zeros(d_c, dims.d);
    for c in 0..dims.d {
        d_out[(0, c)] = d_st[c];
    }

    for c in 0..dims.d {
        grads.out_b[c] += d_out.column(c).sum();
    }
    grads.out_w += cache.pooled.transpose() * &d_out;
    let d_pooled = &d_out * params.out_w.transpose();

    let d_attn = &d_pooled * cache.v.transpose();
    let d_v = cache.attn.transpose() * &d_pooled;

    // softmax backward, row-wise: dS_ij = A_ij * (dA_ij - sum_k dA_ik A_ik)
    let mut d_logits = DMatrix::zeros(d_c, d_c);
    for i in 0..d_c {
        let mut dot = 0.0;
        for k in 0..d_c {
            dot += d_attn[(i, k)] * cache.attn[(i, k)];
        }
        for j in 0..d_c {
            d_logits[(i, j)] = cache.attn[(i, j)] * (d_attn[(i, j)] - dot);
        }
    }
    let scale = 1.0 / (dims.d as f64).sqrt();
    let d_q = scale * (&d_logits * &cache.k);
    let d_k = scale * (d_logits.transpose() * &cache.q);

    grads.w_q += cache.input.transpose() * &d_q;
    grads.w_k += cache.input.transpose() * &d_k;
    grads.w_v += cache.input.transpose() * &d_v;

    &d_q * params.w_q.transpose() + &d_k * params.w_k.transpose() + &d_v * params.w_v.transpose()
}

/// Fold the gradient of one mixed view back onto the token embeddings:
/// `view = keep * TKE + (1 - keep) * TKE P`.
fn accumulate_view_grad(
    d_tke: &mut DMatrix<f64>,
    d_view: &DMatrix<f64>,
    perm: &[usize],
    keep: f64,
) {
    *d_tke += keep * d_view;
    let permuted_weight = 1.0 - keep;
    if permuted_weight == 0.0 {
        return;
    }
    for (j, &src) in perm.iter().enumerate() {
        for i in 0..d_tke.nrows() {
            d_tke[(i, src)] += permuted_weight * d_view[(i, j)];
        }
    }
}

/// Backprop tokenize + combine, accumulating into the tokenizer, [ST], and
/// static-embedding gradients.
fn tokenize_backward(
    d_tke: &DMatrix<f64>,
    h: &DVector<f64>,
    sector: u32,
    params: &ModelParams,
    grads: &mut ModelParams,
) {
    let ModelDims { d, d_mk, .. } = params.dims;
    for c in 0..d {
        grads.st_token[c] += d_tke[(0, c)];
    }
    for j in 0..d_mk {
        let mut dh_j = 0.0;
        for c in 0..d {
            let g = d_tke[(j + 1, c)];
            grads.tok_b[(j, c)] += g;
            grads.tok_w[(j, c)] += h[j] * g;
            dh_j += g * params.tok_w[(j, c)];
        }
        // combined embedding is variant + Embed(sector), so dH flows to the table
        grads.static_embed[(sector as usize, j)] += dh_j;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ModelDims, DEFAULT_LAMBDA};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn toy_dims() -> ModelDims {
        ModelDims { d: 4, d_k: 4, d_v: 4, d_mk: 6, n_sectors: 3 }
    }

    fn toy_batch(rng: &mut ChaCha8Rng, n: usize, d_mk: usize) -> Vec<(VariantVector, u32)> {
        (0..n)
            .map(|_| {
                let values: Vec<f64> = (0..d_mk).map(|_| rng.random_range(-1.0..1.0)).collect();
                (VariantVector { values, windows: vec![1] }, rng.random_range(0..3))
            })
            .collect()
    }

    fn as_refs(batch: &[(VariantVector, u32)]) -> Vec<SslSample<'_>> {
        batch.iter().map(|(v, s)| (v, *s)).collect()
    }

    /// Central finite differences over every scalar parameter.
    fn finite_difference_grads(
        batch: &[SslSample<'_>],
        perms: &[PermPair],
        params: &ModelParams,
        lambda: f64,
        margin: f64,
        h: f64,
    ) -> Vec<f64> {
        let dims = params.dims;
        let base = params.flatten();
        let mut out = Vec::with_capacity(base.len());
        for i in 0..base.len() {
            let mut plus = base.clone();
            plus[i] += h;
            let mut minus = base.clone();
            minus[i] -= h;
            let lp = ssl_loss_with_perms(
                batch,
                perms,
                &ModelParams::unflatten(dims, &plus).unwrap(),
                lambda,
                margin,
            )
            .unwrap();
            let lm = ssl_loss_with_perms(
                batch,
                perms,
                &ModelParams::unflatten(dims, &minus).unwrap(),
                lambda,
                margin,
            )
            .unwrap();
            out.push((lp - lm) / (2.0 * h));
        }
        out
    }

    #[test]
    fn analytic_gradient_matches_central_differences() {
        for seed in [1u64, 2, 3] {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let dims = toy_dims();
            let params = ModelParams::init(dims, &mut rng);
            let batch = toy_batch(&mut rng, 3, dims.d_mk);
            let refs = as_refs(&batch);
            let perms = draw_permutations(refs.len(), dims.d, &mut rng);

            let (_, analytic) =
                ssl_grads_with_perms(&refs, &perms, &params, DEFAULT_LAMBDA, 1.0).unwrap();
            let fd = finite_difference_grads(&refs, &perms, &params, DEFAULT_LAMBDA, 1.0, 1e-5);
            let flat = analytic.flatten();
            let mut worst = 0.0f64;
            for (a, f) in flat.iter().zip(&fd) {
                let rel = (a - f).abs() / a.abs().max(f.abs()).max(1e-6);
                worst = worst.max(rel);
            }
            assert!(worst <= 1e-4, "seed {seed}: max relative error {worst}");
        }
    }

    #[test]
    fn lambda_one_with_tiny_margin_gives_zero_loss() {
        // positive view equals the anchor path exactly, so each element
        // contributes max(0, -dist(a,n) + margin): zero for any perturbing
        // negative permutation, and at most margin even for the identity
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let dims = toy_dims();
        let params = ModelParams::init(dims, &mut rng);
        let batch = toy_batch(&mut rng, 4, dims.d_mk);
        let refs = as_refs(&batch);
        let rotation: Vec<usize> = (0..dims.d).map(|j| (j + 1) % dims.d).collect();
        let perms: Vec<PermPair> =
            (0..refs.len()).map(|_| (rotation.clone(), rotation.clone())).collect();
        let loss = ssl_loss_with_perms(&refs, &perms, &params, 1.0, 1e-12).unwrap();
        assert_eq!(loss, 0.0);

        let drawn = draw_permutations(refs.len(), dims.d, &mut rng);
        let margin = 1e-12;
        let bound = ssl_loss_with_perms(&refs, &drawn, &params, 1.0, margin).unwrap();
        assert!(bound <= margin);
    }

    #[test]
    fn duplicated_sample_batch_matches_single() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let dims = toy_dims();
        let params = ModelParams::init(dims, &mut rng);
        let batch = toy_batch(&mut rng, 1, dims.d_mk);
        let refs = as_refs(&batch);
        let perms = draw_permutations(1, dims.d, &mut rng);
        let single = ssl_loss_with_perms(&refs, &perms, &params, 0.7, 1.0).unwrap();

        let doubled = vec![refs[0], refs[0]];
        let perms2 = vec![perms[0].clone(), perms[0].clone()];
        let both = ssl_loss_with_perms(&doubled, &perms2, &params, 0.7, 1.0).unwrap();
        assert!((single - both).abs() < 1e-15);
    }

    #[test]
    fn empty_batch_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let params = ModelParams::init(toy_dims(), &mut rng);
        assert!(loss_and_grads(&[], &params, 0.7, 1.0, &mut rng).is_err());
    }

    #[test]
    fn gradients_cover_every_group_when_hinge_is_active() {
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let dims = toy_dims();
        let params = ModelParams::init(dims, &mut rng);
        let batch = toy_batch(&mut rng, 4, dims.d_mk);
        let refs = as_refs(&batch);
        let (loss, grads) = loss_and_grads(&refs, &params, 0.7, 1.0, &mut rng).unwrap();
        assert!(loss > 0.0);
        for (name, values) in grads.group_views() {
            assert!(
                values.iter().any(|v| v.abs() > 0.0),
                "group {name} received no gradient"
            );
        }
    }
}
