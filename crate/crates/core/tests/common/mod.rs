//! Shared helpers for the integration test suites: tiny model fixtures, the
//! central finite-difference oracle, and an independent scalar-loop cell
//! reference kept deliberately free of the kernel's matrix machinery.

#![allow(dead_code)]

use ctxrec_core::context::ContextSchema;
use ctxrec_core::data::{generate_synthetic, Corpus, SyntheticSpec, TransitionTable};
use ctxrec_core::kernel::{ParamSet, Tape};
use ctxrec_core::model::{forward_batch, CellKind, IntegrationKind, ModelConfig, SequenceBatch};
use ctxrec_core::train::BatchStream;

/// Tiny synthetic corpus with six event types so the event-type-only context
/// vector has dimension 7.
pub fn tiny_corpus(sessions: u32, length: u32, seed: u64) -> (Corpus, ContextSchema) {
    let mut spec = SyntheticSpec::uniform(20, 6, sessions, seed);
    spec.length_probs = vec![(length, 1.0)];
    spec.transitions = TransitionTable::seeded_sparse(20, 6, 5, 0.7, seed.wrapping_add(1));
    let corpus = generate_synthetic(&spec).unwrap();
    let schema = ContextSchema::event_type_only(corpus.event_types.clone());
    assert_eq!(schema.dim(), 7);
    (corpus, schema)
}

pub fn tiny_model(cell: CellKind, integration: IntegrationKind) -> ModelConfig {
    let mut cfg = ModelConfig::new(cell, integration).with_dims(20, 6, 6);
    cfg.ctx_dim = 7;
    cfg.ctx_blocks = 1;
    cfg
}

/// Parameter point for gradient checks: the seeded init with gate and
/// embedding weights doubled. Fresh-init weights leave the hidden state so
/// close to zero that some true gradients sit near 1e-7, where an h = 1e-5
/// central difference cannot resolve 1e-4 relative error; at this point every
/// gradient entry is comfortably above the oracle's truncation floor.
pub fn gradcheck_params(
    cfg: &ModelConfig,
    seed: u64,
) -> ctxrec_core::kernel::ParamSet<f64> {
    let mut params = ctxrec_core::model::init_params::<f64>(cfg, seed).unwrap();
    for (name, m) in params.iter_mut() {
        let is_projection = matches!(name, "c_in" | "c_out" | "c_shared") || name.starts_with("u_");
        if !is_projection {
            for v in m.data_mut() {
                *v *= 2.0;
            }
        }
    }
    params
}

/// First batch of the corpus at the given batch size.
pub fn first_batch(corpus: &Corpus, schema: &ContextSchema, batch_size: usize) -> SequenceBatch {
    let mut stream = BatchStream::new(&corpus.sessions, schema, batch_size, 7).unwrap();
    stream.next_batch()
}

/// Summed NLL of a fresh forward pass; the quantity the finite-difference
/// oracle differentiates.
pub fn batch_nll(params: &ParamSet<f64>, cfg: &ModelConfig, batch: &SequenceBatch) -> f64 {
    let mut tape = Tape::new();
    let out = forward_batch(&mut tape, params, cfg, batch).unwrap();
    tape.value(out.nll_sum).get(0, 0)
}

/// Relative error with an absolute floor, as the gradient suite defines it.
pub fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-8)
}

/// Central finite differences over every entry of every parameter. Returns
/// the worst relative error and its location.
pub fn max_grad_rel_err(
    params: &ParamSet<f64>,
    cfg: &ModelConfig,
    batch: &SequenceBatch,
    step: f64,
) -> (f64, String) {
    let mut tape = Tape::new();
    let out = forward_batch(&mut tape, params, cfg, batch).unwrap();
    let grads = tape.backward(out.nll_sum).unwrap();

    let mut worst = 0.0;
    let mut worst_at = String::new();
    let names: Vec<&'static str> = params.iter().map(|(n, _)| n).collect();
    for name in names {
        let analytic = grads.get(name).unwrap().clone();
        let len = params.get(name).unwrap().len();
        for idx in 0..len {
            let mut plus = params.clone();
            plus.get_mut(name).unwrap().data_mut()[idx] += step;
            let mut minus = params.clone();
            minus.get_mut(name).unwrap().data_mut()[idx] -= step;
            let numeric = (batch_nll(&plus, cfg, batch) - batch_nll(&minus, cfg, batch))
                / (2.0 * step);
            let err = rel_err(analytic.data()[idx], numeric);
            if err > worst {
                worst = err;
                worst_at = format!(
                    "{name}[{idx}]: analytic {} vs numeric {}",
                    analytic.data()[idx],
                    numeric
                );
            }
        }
    }
    (worst, worst_at)
}

// ---------------------------------------------------------------------------
// Scalar-loop cell reference
// ---------------------------------------------------------------------------

/// Plain-loop GRU weights: row-major (in_dim x k) gate matrices over [x; h].
pub struct ScalarGru {
    pub k: usize,
    pub in_dim: usize,
    pub w_u: Vec<f64>,
    pub w_r: Vec<f64>,
    pub w_h: Vec<f64>,
    pub b_u: Vec<f64>,
    pub b_r: Vec<f64>,
    pub b_h: Vec<f64>,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// column j of W^T [x; h], i.e. sum_i cat[i] * w[i][j]
fn affine(w: &[f64], cat: &[f64], k: usize, j: usize) -> f64 {
    cat.iter()
        .enumerate()
        .map(|(i, &c)| c * w[i * k + j])
        .sum()
}

impl ScalarGru {
    /// One GRU step, written index-by-index.
    pub fn step(&self, x: &[f64], h_prev: &[f64]) -> Vec<f64> {
        self.step_ctx(x, h_prev, None)
    }

    /// One step of the context-conditioned variant. `ctx_scale` holds the
    /// projected context (U_u c, U_r c, U_h c), each length k.
    pub fn step_ctx(&self, x: &[f64], h_prev: &[f64], ctx_scale: Option<[&[f64]; 3]>) -> Vec<f64> {
        let k = self.k;
        let mut cat = Vec::with_capacity(self.in_dim);
        cat.extend_from_slice(x);
        cat.extend_from_slice(h_prev);
        let scale = |gate: usize, j: usize| ctx_scale.map_or(1.0, |s| s[gate][j]);

        let mut update = vec![0.0; k];
        let mut reset = vec![0.0; k];
        for j in 0..k {
            update[j] = sigmoid(affine(&self.w_u, &cat, k, j) * scale(0, j) + self.b_u[j]);
            reset[j] = sigmoid(affine(&self.w_r, &cat, k, j) * scale(1, j) + self.b_r[j]);
        }
        let mut cat_reset = Vec::with_capacity(self.in_dim);
        cat_reset.extend_from_slice(x);
        for j in 0..k {
            cat_reset.push(h_prev[j] * reset[j]);
        }
        let mut h = vec![0.0; k];
        for j in 0..k {
            let candidate =
                (affine(&self.w_h, &cat_reset, k, j) * scale(2, j) + self.b_h[j]).tanh();
            h[j] = (1.0 - update[j]) * h_prev[j] + update[j] * candidate;
        }
        h
    }
}
