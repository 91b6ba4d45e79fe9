//! The model family: tied-embedding input/output, context integration on
//! both sides, a standard GRU cell, a context-conditioned GRU variant whose
//! gate pre-activations are rescaled by a linear projection of the context,
//! and two non-sequential baselines.

mod forward;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::context::{ContextError, ContextSchema, ContextVector};
use crate::data::Session;
use crate::kernel::{ActiveCols, KernelError, Matrix, ParamSet, Real};

pub use forward::{
    baseline_step, context_wrapper_gru_step, embed_item, forward_batch, forward_sequence,
    gru_step, hidden_after, integrate_input, integrate_output, output_logits, predict_topk,
    rank_of_target, CellNodes, CtxCellNodes, ForwardOutput, SequenceForward,
};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("model configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Context(#[from] ContextError),
    #[error("item id {item} outside vocabulary of {vocab_size}")]
    ItemOutOfRange { item: u32, vocab_size: u32 },
    #[error("session {id} has {len} events; need at least 2")]
    SessionTooShort { id: u64, len: usize },
    #[error("parameter `{0}` missing from parameter set")]
    MissingParam(&'static str),
}

/// Recurrent update rule.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CellKind {
    /// h = x: only the last item matters.
    Covisit,
    /// h = h + x: order-free sum of item embeddings.
    BagOfItems,
    Gru,
    /// GRU with every gate pre-activation elementwise rescaled by a linear
    /// projection of the context vector.
    ContextWrapperGru,
}

/// How the context vector joins the item embedding (input side) or the
/// hidden state (output side).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IntegrationKind {
    None,
    /// [x; c]
    Concat,
    /// x ⊙ (C c)
    Mult,
    /// [x ⊙ (C c); c]
    ConcatMult,
}

impl IntegrationKind {
    pub fn uses_projection(self) -> bool {
        matches!(self, IntegrationKind::Mult | IntegrationKind::ConcatMult)
    }

    pub fn uses_concat(self) -> bool {
        matches!(self, IntegrationKind::Concat | IntegrationKind::ConcatMult)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub cell: CellKind,
    pub input_integration: IntegrationKind,
    pub output_integration: IntegrationKind,
    pub vocab_size: u32,
    /// Item embedding width (N_x).
    pub embed_dim: usize,
    /// Hidden state width (k). Must equal `embed_dim` because the tied
    /// embedding matrix projects the (integrated) hidden state back to items.
    pub hidden_dim: usize,
    /// Context vector dimension (V_c); 0 when no context features enabled.
    pub ctx_dim: usize,
    /// Active one-hot blocks per context vector.
    pub ctx_blocks: usize,
    /// Use one projection matrix for both input and output multiplicative
    /// integration instead of separate ones.
    pub share_context_projection: bool,
}

impl ModelConfig {
    pub fn new(cell: CellKind, integration: IntegrationKind) -> Self {
        ModelConfig {
            cell,
            input_integration: integration,
            output_integration: integration,
            vocab_size: 0,
            embed_dim: 100,
            hidden_dim: 100,
            ctx_dim: 0,
            ctx_blocks: 0,
            share_context_projection: false,
        }
    }

    pub fn with_dims(mut self, vocab_size: u32, embed_dim: usize, hidden_dim: usize) -> Self {
        self.vocab_size = vocab_size;
        self.embed_dim = embed_dim;
        self.hidden_dim = hidden_dim;
        self
    }

    pub fn with_schema(mut self, schema: &ContextSchema) -> Self {
        self.ctx_dim = schema.dim() as usize;
        self.ctx_blocks = schema.num_blocks();
        self
    }

    /// Input dimension after integration (N_x^c).
    pub fn integrated_input_dim(&self) -> usize {
        match self.input_integration {
            IntegrationKind::None | IntegrationKind::Mult => self.embed_dim,
            IntegrationKind::Concat | IntegrationKind::ConcatMult => {
                self.embed_dim + self.ctx_dim
            }
        }
    }

    fn needs_context(&self) -> bool {
        self.cell == CellKind::ContextWrapperGru
            || self.input_integration != IntegrationKind::None
            || self.output_integration != IntegrationKind::None
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.vocab_size == 0 {
            return Err(ModelError::Config("vocab_size must be positive".into()));
        }
        if self.embed_dim == 0 || self.hidden_dim == 0 {
            return Err(ModelError::Config("dimensions must be positive".into()));
        }
        if self.embed_dim != self.hidden_dim {
            return Err(ModelError::Config(format!(
                "embed_dim ({}) must equal hidden_dim ({}): the tied embedding \
                 matrix projects the hidden state back onto items",
                self.embed_dim, self.hidden_dim
            )));
        }
        if self.needs_context() && self.ctx_dim == 0 {
            return Err(ModelError::Config(
                "context integration requires at least one enabled context feature".into(),
            ));
        }
        if matches!(self.cell, CellKind::Covisit | CellKind::BagOfItems)
            && self.input_integration.uses_concat()
        {
            return Err(ModelError::Config(format!(
                "{:?} keeps the embedding as state; concat input integration \
                 would change its dimension",
                self.cell
            )));
        }
        if self.share_context_projection
            && !(self.input_integration.uses_projection()
                && self.output_integration.uses_projection())
        {
            return Err(ModelError::Config(
                "share_context_projection requires multiplicative integration on both sides"
                    .into(),
            ));
        }
        Ok(())
    }

    /// Names of the parameters this configuration learns, in creation order.
    pub fn param_names(&self) -> Vec<&'static str> {
        let mut names = vec!["v"];
        if self.share_context_projection {
            names.push("c_shared");
        } else {
            if self.input_integration.uses_projection() {
                names.push("c_in");
            }
            if self.output_integration.uses_projection() {
                names.push("c_out");
            }
        }
        if self.output_integration.uses_concat() {
            names.push("d_out");
        }
        if matches!(self.cell, CellKind::Gru | CellKind::ContextWrapperGru) {
            names.extend(["w_u", "w_r", "w_h", "b_u", "b_r", "b_h"]);
        }
        if self.cell == CellKind::ContextWrapperGru {
            names.extend(["u_u", "u_r", "u_h"]);
        }
        names
    }

    pub(crate) fn input_projection_name(&self) -> &'static str {
        if self.share_context_projection {
            "c_shared"
        } else {
            "c_in"
        }
    }

    pub(crate) fn output_projection_name(&self) -> &'static str {
        if self.share_context_projection {
            "c_shared"
        } else {
            "c_out"
        }
    }

    /// Expected shape of each parameter.
    pub fn param_shape(&self, name: &str) -> Option<(usize, usize)> {
        let k = self.hidden_dim;
        let gate_in = self.integrated_input_dim() + k;
        match name {
            "v" => Some((self.vocab_size as usize, self.embed_dim)),
            "c_in" | "c_shared" => Some((self.embed_dim, self.ctx_dim)),
            "c_out" => Some((k, self.ctx_dim)),
            "d_out" => Some((self.vocab_size as usize, self.ctx_dim)),
            "w_u" | "w_r" | "w_h" => Some((gate_in, k)),
            "b_u" | "b_r" | "b_h" => Some((1, k)),
            "u_u" | "u_r" | "u_h" => Some((k, self.ctx_dim)),
            _ => None,
        }
    }
}

/// Seeded parameter initialization. Weight matrices draw from
/// U(-a, a) with a = sqrt(6 / (fan_in + fan_out)); biases start at zero;
/// context projections start near 1/blocks so the projected context is close
/// to the all-ones vector and early training matches the plain cell.
pub fn init_params<S: Real>(config: &ModelConfig, seed: u64) -> Result<ParamSet<S>, ModelError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = ParamSet::new();
    for name in config.param_names() {
        let (rows, cols) = config.param_shape(name).unwrap();
        let matrix = match name {
            "b_u" | "b_r" | "b_h" | "d_out" => Matrix::zeros(rows, cols),
            "c_in" | "c_out" | "c_shared" | "u_u" | "u_r" | "u_h" => {
                near_ones_projection(&mut rng, rows, cols, config.ctx_blocks)
            }
            _ => xavier(&mut rng, rows, cols),
        };
        params.insert(name, matrix);
    }
    Ok(params)
}

fn xavier<S: Real>(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix<S> {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols)
        .map(|_| S::from_f64(rng.random_range(-bound..bound)))
        .collect();
    Matrix::from_vec(rows, cols, data).unwrap()
}

/// Entries 1/blocks plus 1% jitter: summing one column per block yields a
/// vector close to ones, keeping multiplicative terms near the identity at
/// the start.
fn near_ones_projection<S: Real>(
    rng: &mut ChaCha8Rng,
    rows: usize,
    cols: usize,
    blocks: usize,
) -> Matrix<S> {
    let base = 1.0 / blocks.max(1) as f64;
    let jitter = base * 0.01;
    let data = (0..rows * cols)
        .map(|_| S::from_f64(base + rng.random_range(-jitter..jitter)))
        .collect();
    Matrix::from_vec(rows, cols, data).unwrap()
}

/// Item ids, contexts, and target mask for a padded batch of sessions, laid
/// out per time step. `items[t][b]` is what session `b` consumed at step `t`;
/// positions where `target_mask[t][b]` holds are valid prediction targets.
pub struct SequenceBatch {
    pub batch: usize,
    pub max_len: usize,
    pub items: Vec<std::rc::Rc<Vec<u32>>>,
    pub ctx: Vec<ActiveCols>,
    pub target_mask: Vec<std::rc::Rc<Vec<bool>>>,
}

impl SequenceBatch {
    /// Number of valid prediction targets.
    pub fn target_count(&self) -> usize {
        self.target_mask
            .iter()
            .map(|m| m.iter().filter(|&&b| b).count())
            .sum()
    }
}

/// Per-event (item, context) pairs for one session.
pub fn encode_session_steps(
    session: &Session,
    schema: &ContextSchema,
) -> Result<Vec<(u32, ContextVector)>, ContextError> {
    let mut steps = Vec::with_capacity(session.events.len());
    let mut prev_ts = None;
    for event in &session.events {
        let ctx = schema.build_context(event.ts_ms, prev_ts, event.event_type)?;
        steps.push((event.item, ctx));
        prev_ts = Some(event.ts_ms);
    }
    Ok(steps)
}

/// Single-session batch (batch dimension 1, no padding).
pub fn session_to_batch(
    session: &Session,
    schema: &ContextSchema,
) -> Result<SequenceBatch, ModelError> {
    use std::rc::Rc;
    if session.events.len() < 2 {
        return Err(ModelError::SessionTooShort {
            id: session.id,
            len: session.events.len(),
        });
    }
    let steps = encode_session_steps(session, schema)?;
    let mut items = Vec::with_capacity(steps.len());
    let mut ctx = Vec::with_capacity(steps.len());
    let mut target_mask = Vec::with_capacity(steps.len());
    for (t, (item, c)) in steps.into_iter().enumerate() {
        items.push(Rc::new(vec![item]));
        ctx.push(Rc::new(vec![c.active().to_vec()]));
        target_mask.push(Rc::new(vec![t > 0]));
    }
    Ok(SequenceBatch {
        batch: 1,
        max_len: session.events.len(),
        items,
        ctx,
        target_mask,
    })
}
