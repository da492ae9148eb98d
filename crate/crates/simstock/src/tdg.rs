//! Temporal domain generalization: a recurrent parameter generator consumes
//! the per-domain parameter trajectory and proposes the parameters for the
//! next, unseen domain.
//!
//! The generator runs a single LSTM cell over a learned low-dimensional code
//! of the flattened model parameters: down-project, recur, up-project. Each
//! source domain contributes a proposal loss (SSL loss of the proposed
//! parameters on that domain's data), which trains the generator end to end
//! with backprop truncated to the most recent domain steps.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::data::{Domain, DomainSequence};
use crate::error::{Error, Result};
use crate::model::{self, ModelDims, ModelParams};
use crate::opt::Adam;

/// Flattened model parameters in the canonical layout of
/// [`ModelParams::flatten`].
pub type ParamVector = Vec<f64>;

/// Generator (hypernetwork) dimensions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GeneratorDims {
    /// Length of the flattened model parameter vector.
    pub p: usize,
    /// Recurrent hidden size.
    pub h: usize,
}

/// LSTM cell state.
#[derive(Debug, Clone, PartialEq)]
pub struct CellState {
    pub h: DVector<f64>,
    pub c: DVector<f64>,
}

impl CellState {
    pub fn zeros(h: usize) -> Self {
        Self { h: DVector::zeros(h), c: DVector::zeros(h) }
    }
}

/// Parameters of the recurrent generator.
///
/// Gate layout in `w_x`/`w_h`/`b` is `[input, forget, cell, output]`, each
/// block of size `h`.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorParams {
    pub dims: GeneratorDims,
    pub w_down: DMatrix<f64>,
    pub b_down: DVector<f64>,
    pub w_x: DMatrix<f64>,
    pub w_h: DMatrix<f64>,
    pub b: DVector<f64>,
    pub w_up: DMatrix<f64>,
    pub b_up: DVector<f64>,
}

impl GeneratorParams {
    pub fn zeros(dims: GeneratorDims) -> Self {
        let GeneratorDims { p, h } = dims;
        Self {
            dims,
            w_down: DMatrix::zeros(h, p),
            b_down: DVector::zeros(h),
            w_x: DMatrix::zeros(4 * h, h),
            w_h: DMatrix::zeros(4 * h, h),
            b: DVector::zeros(4 * h),
            w_up: DMatrix::zeros(p, h),
            b_up: DVector::zeros(p),
        }
    }

    /// Seeded init. The up-projection bias is warm-started at `anchor`
    /// (typically the first domain's refined parameters) and the up-weights
    /// kept small, so early proposals stay near a known-good point.
    pub fn init<R: Rng + ?Sized>(dims: GeneratorDims, anchor: &[f64], rng: &mut R) -> Self {
        let GeneratorDims { p, h } = dims;
        let mut g = Self::zeros(dims);
        let bound_down = 1.0 / (p as f64).sqrt();
        let bound_h = 1.0 / (h as f64).sqrt();
        g.w_down = DMatrix::from_fn(h, p, |_, _| rng.random_range(-bound_down..=bound_down));
        g.w_x = DMatrix::from_fn(4 * h, h, |_, _| rng.random_range(-bound_h..=bound_h));
        g.w_h = DMatrix::from_fn(4 * h, h, |_, _| rng.random_range(-bound_h..=bound_h));
        g.w_up = DMatrix::from_fn(p, h, |_, _| rng.random_range(-0.01 * bound_h..=0.01 * bound_h));
        g.b_up = DVector::from_column_slice(anchor);
        g
    }

    /// Identity projections with h = p: the step reduces to a pure recurrent
    /// cell acting on the raw parameter vector (sanity configuration).
    pub fn identity_projections(p: usize) -> Self {
        let mut g = Self::zeros(GeneratorDims { p, h: p });
        g.w_down = DMatrix::identity(p, p);
        g.w_up = DMatrix::identity(p, p);
        g
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for m in [&self.w_down, &self.w_x, &self.w_h, &self.w_up] {
            for i in 0..m.nrows() {
                for j in 0..m.ncols() {
                    out.push(m[(i, j)]);
                }
            }
        }
        for v in [&self.b_down, &self.b, &self.b_up] {
            out.extend(v.iter());
        }
        out
    }

    pub fn assign_from_flat(&mut self, flat: &[f64]) {
        let mut k = 0;
        for m in [&mut self.w_down, &mut self.w_x, &mut self.w_h, &mut self.w_up] {
            for i in 0..m.nrows() {
                for j in 0..m.ncols() {
                    m[(i, j)] = flat[k];
                    k += 1;
                }
            }
        }
        for v in [&mut self.b_down, &mut self.b, &mut self.b_up] {
            for x in v.iter_mut() {
                *x = flat[k];
                k += 1;
            }
        }
        debug_assert_eq!(k, flat.len());
    }

    fn param_count(&self) -> usize {
        let GeneratorDims { p, h } = self.dims;
        h * p + 4 * h * h * 2 + p * h + h + 4 * h + p
    }
}

/// Everything the backward pass needs from one forward step.
#[derive(Debug, Clone)]
struct StepCache {
    theta_in: DVector<f64>,
    u: DVector<f64>,
    h_prev: DVector<f64>,
    c_prev: DVector<f64>,
    gate_i: DVector<f64>,
    gate_f: DVector<f64>,
    gate_g: DVector<f64>,
    gate_o: DVector<f64>,
    tanh_c: DVector<f64>,
    h_new: DVector<f64>,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn step_cached(
    state: &CellState,
    theta_in: &[f64],
    gen: &GeneratorParams,
) -> (CellState, ParamVector, StepCache) {
    let GeneratorDims { h, .. } = gen.dims;
    let theta = DVector::from_column_slice(theta_in);
    let u = &gen.w_down * &theta + &gen.b_down;
    let z = &gen.w_x * &u + &gen.w_h * &state.h + &gen.b;

    let gate_i = DVector::from_fn(h, |k, _| sigmoid(z[k]));
    let gate_f = DVector::from_fn(h, |k, _| sigmoid(z[h + k]));
    let gate_g = DVector::from_fn(h, |k, _| z[2 * h + k].tanh());
    let gate_o = DVector::from_fn(h, |k, _| sigmoid(z[3 * h + k]));

    let c_new = gate_f.component_mul(&state.c) + gate_i.component_mul(&gate_g);
    let tanh_c = c_new.map(f64::tanh);
    let h_new = gate_o.component_mul(&tanh_c);

    let theta_out = &gen.w_up * &h_new + &gen.b_up;
    let cache = StepCache {
        theta_in: theta,
        u,
        h_prev: state.h.clone(),
        c_prev: state.c.clone(),
        gate_i,
        gate_f,
        gate_g,
        gate_o,
        tanh_c,
        h_new: h_new.clone(),
    };
    (CellState { h: h_new, c: c_new }, theta_out.iter().copied().collect(), cache)
}

/// One deterministic generator step: down-project, recur, up-project.
pub fn step(
    state: &CellState,
    theta_in: &[f64],
    gen: &GeneratorParams,
) -> Result<(CellState, ParamVector)> {
    if theta_in.len() != gen.dims.p {
        return Err(Error::Dimension { expected: gen.dims.p, got: theta_in.len() });
    }
    let (next, theta_out, _) = step_cached(state, theta_in, gen);
    if theta_out.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("generator output".into()));
    }
    Ok((next, theta_out))
}

/// Backprop one cached step. `d_theta_out` is the upstream gradient on the
/// emitted parameter vector, `(dh_next, dc_next)` the recurrent gradients
/// flowing in from the following step. Parameter gradients accumulate into
/// `grads`; the return value is the recurrent gradient for the previous step.
fn step_backward(
    cache: &StepCache,
    d_theta_out: Option<&DVector<f64>>,
    dh_next: &DVector<f64>,
    dc_next: &DVector<f64>,
    gen: &GeneratorParams,
    grads: &mut GeneratorParams,
) -> (DVector<f64>, DVector<f64>) {
    let h = gen.dims.h;

    let mut dh = dh_next.clone();
    if let Some(dt) = d_theta_out {
        grads.w_up += dt * cache.h_new.transpose();
        grads.b_up += dt;
        dh += gen.w_up.transpose() * dt;
    }

    let mut dc = dc_next.clone();
    for k in 0..h {
        dc[k] += dh[k] * cache.gate_o[k] * (1.0 - cache.tanh_c[k] * cache.tanh_c[k]);
    }

    let mut dz = DVector::zeros(4 * h);
    for k in 0..h {
        let d_o = dh[k] * cache.tanh_c[k];
        dz[3 * h + k] = d_o * cache.gate_o[k] * (1.0 - cache.gate_o[k]);
        let d_f = dc[k] * cache.c_prev[k];
        dz[h + k] = d_f * cache.gate_f[k] * (1.0 - cache.gate_f[k]);
        let d_i = dc[k] * cache.gate_g[k];
        dz[k] = d_i * cache.gate_i[k] * (1.0 - cache.gate_i[k]);
        let d_g = dc[k] * cache.gate_i[k];
        dz[2 * h + k] = d_g * (1.0 - cache.gate_g[k] * cache.gate_g[k]);
    }

    grads.w_x += &dz * cache.u.transpose();
    grads.w_h += &dz * cache.h_prev.transpose();
    grads.b += &dz;

    let du = gen.w_x.transpose() * &dz;
    grads.w_down += &du * cache.theta_in.transpose();
    grads.b_down += &du;

    let dh_prev = gen.w_h.transpose() * &dz;
    let dc_prev = dc.component_mul(&cache.gate_f);
    (dh_prev, dc_prev)
}

/// Training configuration for the domain-sequence walk.
#[derive(Debug, Clone)]
pub struct TdgConfig {
    /// Generator hidden size.
    pub hidden: usize,
    /// Optimizer steps for the first domain's direct training.
    pub theta1_steps: usize,
    /// Inner-loop refinement steps per later domain.
    pub inner_steps: usize,
    /// Passes over the domain sequence for generator training.
    pub gen_epochs: usize,
    /// Backprop window: gradients flow through at most this many recent steps.
    pub truncation: usize,
    pub model_lr: f64,
    pub gen_lr: f64,
    pub batch_size: usize,
    /// Batch size for proposal-loss evaluation.
    pub eval_batch: usize,
    pub lambda: f64,
    pub margin: f64,
}

impl Default for TdgConfig {
    fn default() -> Self {
        Self {
            hidden: 128,
            theta1_steps: 200,
            inner_steps: 50,
            gen_epochs: 3,
            truncation: 3,
            model_lr: 1e-3,
            gen_lr: 1e-3,
            batch_size: 128,
            eval_batch: 256,
            lambda: model::DEFAULT_LAMBDA,
            margin: model::DEFAULT_MARGIN,
        }
    }
}

/// Per-domain record of the training walk.
#[derive(Debug, Clone)]
pub struct DomainTraceEntry {
    /// Proposal emitted by the generator (for the first domain: the seed
    /// initialization).
    pub generated: ParamVector,
    /// Parameters after inner-loop refinement on this domain.
    pub refined: ParamVector,
    /// SSL loss of the proposal on this domain's evaluation batch.
    pub loss_before: f64,
    /// SSL loss after refinement on the same batch.
    pub loss_after: f64,
}

/// Outcome of [`train_sequence`]: one entry per domain plus the generator's
/// final recurrent state.
#[derive(Debug, Clone)]
pub struct TrainTrace {
    pub entries: Vec<DomainTraceEntry>,
    pub final_state: CellState,
    pub model_dims: ModelDims,
}

fn sample_batch<'a, R: Rng + ?Sized>(
    domain: &'a Domain,
    size: usize,
    rng: &mut R,
) -> Vec<model::SslSample<'a>> {
    let n = domain.samples.len();
    (0..size.min(n).max(1))
        .map(|_| {
            let s = &domain.samples[rng.random_range(0..n)];
            (&s.variant, s.sector)
        })
        .collect()
}

/// A few Adam steps of the SSL objective on one domain, starting from
/// `params`. Returns the refined parameters.
fn refine_on_domain(
    params: &ModelParams,
    domain: &Domain,
    steps: usize,
    cfg: &TdgConfig,
    rng: &mut ChaCha8Rng,
) -> Result<ModelParams> {
    let mut current = params.clone();
    let mut opt = Adam::new(cfg.model_lr, params.dims.param_count());
    for _ in 0..steps {
        let batch = sample_batch(domain, cfg.batch_size, rng);
        let (loss, grads) =
            model::loss_and_grads(&batch, &current, cfg.lambda, cfg.margin, rng)?;
        if !loss.is_finite() {
            return Err(Error::NonFinite("ssl loss during refinement".into()));
        }
        let mut flat = current.flatten();
        opt.step(&mut flat, &grads.flatten());
        current = ModelParams::unflatten(current.dims, &flat)?;
    }
    Ok(current)
}

fn eval_loss(
    params: &ModelParams,
    domain: &Domain,
    cfg: &TdgConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(f64, ModelParams)> {
    let batch = sample_batch(domain, cfg.eval_batch, rng);
    let perms = model::draw_permutations(batch.len(), params.dims.d, rng);
    model::ssl_grads_with_perms(&batch, &perms, params, cfg.lambda, cfg.margin)
}

/// Walk the domain sequence: train the first domain directly, then let the
/// generator propose each next domain's parameters, refine the proposal on
/// that domain, and train the generator on the proposal losses.
///
/// Strictly sequential and fully determined by `rng`.
pub fn train_sequence(
    domains: &DomainSequence,
    model_dims: ModelDims,
    cfg: &TdgConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(GeneratorParams, TrainTrace)> {
    let t_domains = domains.len();
    if t_domains < 2 {
        return Err(Error::Data(format!("need at least 2 domains, got {t_domains}")));
    }

    // domain 1: direct SSL training
    let theta_init = ModelParams::init(model_dims, rng);
    let theta1 = refine_on_domain(&theta_init, &domains.domains[0], cfg.theta1_steps, cfg, rng)?;
    let (loss1_before, _) = eval_loss(&theta_init, &domains.domains[0], cfg, rng)?;
    let (loss1_after, _) = eval_loss(&theta1, &domains.domains[0], cfg, rng)?;

    let p = model_dims.param_count();
    let gen_dims = GeneratorDims { p, h: cfg.hidden };
    let mut gen = GeneratorParams::init(gen_dims, &theta1.flatten(), rng);
    let mut gen_opt = Adam::new(cfg.gen_lr, gen.param_count());

    let mut entries: Vec<DomainTraceEntry> = Vec::new();
    let mut final_state = CellState::zeros(cfg.hidden);

    for epoch in 0..cfg.gen_epochs.max(1) {
        let last_epoch = epoch + 1 == cfg.gen_epochs.max(1);
        let mut state = CellState::zeros(cfg.hidden);
        let mut theta_prev = theta1.flatten();
        let mut window: Vec<StepCache> = Vec::new();
        let mut epoch_entries = vec![DomainTraceEntry {
            generated: theta_init.flatten(),
            refined: theta1.flatten(),
            loss_before: loss1_before,
            loss_after: loss1_after,
        }];

        for s in 1..t_domains {
            let domain = &domains.domains[s];
            let (next_state, proposal_flat, cache) = step_cached(&state, &theta_prev, &gen);
            if proposal_flat.iter().any(|v| !v.is_finite()) {
                return Err(Error::Diverged {
                    domain: s + 1,
                    msg: "generator proposal is non-finite".into(),
                });
            }
            let proposal = ModelParams::unflatten(model_dims, &proposal_flat)?;
            let (loss_before, ssl_grads) = eval_loss(&proposal, domain, cfg, rng)?;
            if !loss_before.is_finite() {
                return Err(Error::Diverged {
                    domain: s + 1,
                    msg: format!("proposal loss is non-finite ({loss_before})"),
                });
            }

            window.push(cache);
            if window.len() > cfg.truncation.max(1) {
                window.remove(0);
            }

            // backprop the proposal loss through the recent window
            let mut gen_grads = GeneratorParams::zeros(gen_dims);
            let d_theta = DVector::from_column_slice(&ssl_grads.flatten());
            let (mut dh, mut dc) = step_backward(
                window.last().expect("window non-empty"),
                Some(&d_theta),
                &DVector::zeros(cfg.hidden),
                &DVector::zeros(cfg.hidden),
                &gen,
                &mut gen_grads,
            );
            for cache in window.iter().rev().skip(1) {
                let (dh_prev, dc_prev) =
                    step_backward(cache, None, &dh, &dc, &gen, &mut gen_grads);
                dh = dh_prev;
                dc = dc_prev;
            }
            let mut gen_flat = gen.flatten();
            gen_opt.step(&mut gen_flat, &gen_grads.flatten());
            gen.assign_from_flat(&gen_flat);

            // inner-loop refinement; the refined parameters feed the next step
            let refined = refine_on_domain(&proposal, domain, cfg.inner_steps, cfg, rng)?;
            let (loss_after, _) = eval_loss(&refined, domain, cfg, rng)?;

            epoch_entries.push(DomainTraceEntry {
                generated: proposal_flat,
                refined: refined.flatten(),
                loss_before,
                loss_after,
            });

            theta_prev = refined.flatten();
            state = next_state;
        }

        if last_epoch {
            entries = epoch_entries;
            final_state = state;
        }
    }

    Ok((gen, TrainTrace { entries, final_state, model_dims }))
}

/// One generator step past the end of the trace: propose the parameters for
/// the unseen next domain. Touches no target-domain data by construction.
pub fn infer_next(trace: &TrainTrace, gen: &GeneratorParams) -> Result<ParamVector> {
    let last = trace
        .entries
        .last()
        .ok_or_else(|| Error::Data("empty training trace".into()))?;
    let (_, theta_next) = step(&trace.final_state, &last.refined, gen)?;
    Ok(theta_next)
}
