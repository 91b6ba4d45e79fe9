//! Forward computation of the model family on the gradient tape.

use std::rc::Rc;

use crate::context::ContextVector;
use crate::data::Session;
use crate::kernel::{softmax, ActiveCols, KernelError, Matrix, NodeId, ParamSet, Real, Tape};

use super::{CellKind, IntegrationKind, ModelConfig, ModelError, SequenceBatch};

/// Tape handles for one cell's gate parameters.
#[derive(Clone, Copy)]
pub struct CellNodes {
    pub w_u: NodeId,
    pub w_r: NodeId,
    pub w_h: NodeId,
    pub b_u: NodeId,
    pub b_r: NodeId,
    pub b_h: NodeId,
}

/// Tape handles for the context gate projections.
#[derive(Clone, Copy)]
pub struct CtxCellNodes {
    pub u_u: NodeId,
    pub u_r: NodeId,
    pub u_h: NodeId,
}

/// Standard GRU update:
/// u = σ(W_u[x; h] + b_u), r = σ(W_r[x; h] + b_r),
/// ĥ = tanh(W_h[x; h ⊙ r] + b_h), h = (1 − u) ⊙ h_prev + u ⊙ ĥ.
pub fn gru_step<S: Real>(
    tape: &mut Tape<S>,
    cell: &CellNodes,
    x_c: NodeId,
    h_prev: NodeId,
) -> Result<NodeId, KernelError> {
    let cat = tape.concat_cols(x_c, h_prev)?;
    let update = gate(tape, cat, cell.w_u, cell.b_u, None, Activation::Sigmoid)?;
    let reset = gate(tape, cat, cell.w_r, cell.b_r, None, Activation::Sigmoid)?;
    let gated_h = tape.mul(h_prev, reset)?;
    let cat_h = tape.concat_cols(x_c, gated_h)?;
    let candidate = gate(tape, cat_h, cell.w_h, cell.b_h, None, Activation::Tanh)?;
    blend(tape, update, h_prev, candidate)
}

/// Context-conditioned GRU update; every gate's pre-activation is rescaled by
/// a linear projection of the context vector before the bias is added:
/// u = σ(W_u[x; h] ⊙ U_u c + b_u), r = σ(W_r[x; h] ⊙ U_r c + b_r),
/// ĥ = tanh(W_h[x; h ⊙ r] ⊙ U_h c + b_h), h = (1 − u) ⊙ h_prev + u ⊙ ĥ.
pub fn context_wrapper_gru_step<S: Real>(
    tape: &mut Tape<S>,
    cell: &CellNodes,
    ctx_cell: &CtxCellNodes,
    x_c: NodeId,
    h_prev: NodeId,
    ctx: &ActiveCols,
) -> Result<NodeId, KernelError> {
    let u_u = tape.cols_sum(ctx_cell.u_u, ctx.clone())?;
    let u_r = tape.cols_sum(ctx_cell.u_r, ctx.clone())?;
    let u_h = tape.cols_sum(ctx_cell.u_h, ctx.clone())?;
    let cat = tape.concat_cols(x_c, h_prev)?;
    let update = gate(tape, cat, cell.w_u, cell.b_u, Some(u_u), Activation::Sigmoid)?;
    let reset = gate(tape, cat, cell.w_r, cell.b_r, Some(u_r), Activation::Sigmoid)?;
    let gated_h = tape.mul(h_prev, reset)?;
    let cat_h = tape.concat_cols(x_c, gated_h)?;
    let candidate = gate(tape, cat_h, cell.w_h, cell.b_h, Some(u_h), Activation::Tanh)?;
    blend(tape, update, h_prev, candidate)
}

/// Non-sequential baselines: covisit keeps only the current embedding,
/// bag-of-items accumulates embeddings order-free.
pub fn baseline_step<S: Real>(
    tape: &mut Tape<S>,
    kind: CellKind,
    x_c: NodeId,
    h_prev: NodeId,
) -> Result<NodeId, ModelError> {
    match kind {
        CellKind::Covisit => Ok(x_c),
        CellKind::BagOfItems => Ok(tape.add(h_prev, x_c)?),
        other => Err(ModelError::Config(format!(
            "{other:?} is not a baseline cell"
        ))),
    }
}

enum Activation {
    Sigmoid,
    Tanh,
}

fn gate<S: Real>(
    tape: &mut Tape<S>,
    cat: NodeId,
    weight: NodeId,
    bias: NodeId,
    ctx_scale: Option<NodeId>,
    activation: Activation,
) -> Result<NodeId, KernelError> {
    let mut pre = tape.matmul(cat, weight)?;
    if let Some(scale) = ctx_scale {
        pre = tape.mul(pre, scale)?;
    }
    let pre = tape.add_row_broadcast(pre, bias)?;
    Ok(match activation {
        Activation::Sigmoid => tape.sigmoid(pre),
        Activation::Tanh => tape.tanh(pre),
    })
}

fn blend<S: Real>(
    tape: &mut Tape<S>,
    update: NodeId,
    h_prev: NodeId,
    candidate: NodeId,
) -> Result<NodeId, KernelError> {
    let keep = tape.one_minus(update);
    let kept = tape.mul(keep, h_prev)?;
    let new = tape.mul(update, candidate)?;
    tape.add(kept, new)
}

/// Combine the item embedding with the context on the input side.
pub fn integrate_input<S: Real>(
    tape: &mut Tape<S>,
    kind: IntegrationKind,
    x_embed: NodeId,
    ctx: &ActiveCols,
    ctx_dim: usize,
    c_in: Option<NodeId>,
) -> Result<NodeId, ModelError> {
    let projected = |tape: &mut Tape<S>, x_embed| -> Result<NodeId, ModelError> {
        let c_in = c_in.ok_or(ModelError::MissingParam("c_in"))?;
        let scale = tape.cols_sum(c_in, ctx.clone())?;
        Ok(tape.mul(x_embed, scale)?)
    };
    match kind {
        IntegrationKind::None => Ok(x_embed),
        IntegrationKind::Mult => projected(tape, x_embed),
        IntegrationKind::Concat => {
            let dense = dense_context(tape, ctx, ctx_dim);
            Ok(tape.concat_cols(x_embed, dense)?)
        }
        IntegrationKind::ConcatMult => {
            let scaled = projected(tape, x_embed)?;
            let dense = dense_context(tape, ctx, ctx_dim);
            Ok(tape.concat_cols(scaled, dense)?)
        }
    }
}

/// Combine the hidden state with the upcoming event's context and project to
/// item logits through the tied embedding. For concat kinds the context
/// contributes through a learned per-item block added to the logits
/// (o = V·h + D·c), which preserves the tying for the item part.
pub fn integrate_output<S: Real>(
    tape: &mut Tape<S>,
    kind: IntegrationKind,
    hidden: NodeId,
    ctx: &ActiveCols,
    v: NodeId,
    c_out: Option<NodeId>,
    d_out: Option<NodeId>,
) -> Result<NodeId, ModelError> {
    let scaled_hidden = |tape: &mut Tape<S>| -> Result<NodeId, ModelError> {
        let c_out = c_out.ok_or(ModelError::MissingParam("c_out"))?;
        let scale = tape.cols_sum(c_out, ctx.clone())?;
        Ok(tape.mul(hidden, scale)?)
    };
    let ctx_logits = |tape: &mut Tape<S>| -> Result<NodeId, ModelError> {
        let d_out = d_out.ok_or(ModelError::MissingParam("d_out"))?;
        Ok(tape.cols_sum(d_out, ctx.clone())?)
    };
    match kind {
        IntegrationKind::None => Ok(tape.matmul_nt(hidden, v)?),
        IntegrationKind::Mult => {
            let h_c = scaled_hidden(tape)?;
            Ok(tape.matmul_nt(h_c, v)?)
        }
        IntegrationKind::Concat => {
            let base = tape.matmul_nt(hidden, v)?;
            let extra = ctx_logits(tape)?;
            Ok(tape.add(base, extra)?)
        }
        IntegrationKind::ConcatMult => {
            let h_c = scaled_hidden(tape)?;
            let base = tape.matmul_nt(h_c, v)?;
            let extra = ctx_logits(tape)?;
            Ok(tape.add(base, extra)?)
        }
    }
}

fn dense_context<S: Real>(tape: &mut Tape<S>, ctx: &ActiveCols, ctx_dim: usize) -> NodeId {
    let mut dense = Matrix::zeros(ctx.len(), ctx_dim);
    for (row, active) in ctx.iter().enumerate() {
        for &j in active {
            dense.set(row, j as usize, S::one());
        }
    }
    tape.input(dense)
}

/// Embedding lookup for a single item (row of the tied matrix V).
pub fn embed_item<S: Real>(
    item: u32,
    params: &ParamSet<S>,
    config: &ModelConfig,
) -> Result<Vec<S>, ModelError> {
    if item >= config.vocab_size {
        return Err(ModelError::ItemOutOfRange {
            item,
            vocab_size: config.vocab_size,
        });
    }
    let v = params.get("v").ok_or(ModelError::MissingParam("v"))?;
    Ok(v.row(item as usize).to_vec())
}

struct Wire {
    v: NodeId,
    c_in: Option<NodeId>,
    c_out: Option<NodeId>,
    d_out: Option<NodeId>,
    cell: Option<CellNodes>,
    ctx_cell: Option<CtxCellNodes>,
}

fn wire<S: Real>(
    tape: &mut Tape<S>,
    params: &ParamSet<S>,
    config: &ModelConfig,
) -> Result<Wire, ModelError> {
    // Register the full set so even parameters unreachable from the loss
    // appear in the gradient map (as zeros).
    tape.params(params);
    let mut need = |name: &'static str| -> Result<NodeId, ModelError> {
        let value = params.get(name).ok_or(ModelError::MissingParam(name))?;
        Ok(tape.param(name, value))
    };
    let v = need("v")?;
    let c_in = if config.input_integration.uses_projection() {
        Some(need(config.input_projection_name())?)
    } else {
        None
    };
    let c_out = if config.output_integration.uses_projection() {
        Some(need(config.output_projection_name())?)
    } else {
        None
    };
    let d_out = if config.output_integration.uses_concat() {
        Some(need("d_out")?)
    } else {
        None
    };
    let cell = if matches!(config.cell, CellKind::Gru | CellKind::ContextWrapperGru) {
        Some(CellNodes {
            w_u: need("w_u")?,
            w_r: need("w_r")?,
            w_h: need("w_h")?,
            b_u: need("b_u")?,
            b_r: need("b_r")?,
            b_h: need("b_h")?,
        })
    } else {
        None
    };
    let ctx_cell = if config.cell == CellKind::ContextWrapperGru {
        Some(CtxCellNodes {
            u_u: need("u_u")?,
            u_r: need("u_r")?,
            u_h: need("u_h")?,
        })
    } else {
        None
    };
    Ok(Wire {
        v,
        c_in,
        c_out,
        d_out,
        cell,
        ctx_cell,
    })
}

/// Everything the training loop needs from one batched forward pass.
pub struct ForwardOutput {
    /// Logits per prediction step, each batch x vocab.
    pub step_logits: Vec<NodeId>,
    /// Hidden state after consuming the last step.
    pub final_hidden: NodeId,
    /// Summed negative log-likelihood over valid targets (1x1 node).
    pub nll_sum: NodeId,
    pub target_count: usize,
}

/// Run a padded batch through input integration, the recurrent cell, and
/// output integration, accumulating masked NLL. Step `t` consumes event `t`
/// and predicts event `t+1` using the target event's own context.
pub fn forward_batch<S: Real>(
    tape: &mut Tape<S>,
    params: &ParamSet<S>,
    config: &ModelConfig,
    batch: &SequenceBatch,
) -> Result<ForwardOutput, ModelError> {
    config.validate()?;
    if batch.max_len < 2 {
        return Err(ModelError::Config(
            "batch needs at least two steps to form a prediction".into(),
        ));
    }
    let wired = wire(tape, params, config)?;
    let mut hidden = tape.input(Matrix::zeros(batch.batch, config.hidden_dim));
    let mut step_logits = Vec::with_capacity(batch.max_len - 1);
    let mut nll_sum: Option<NodeId> = None;

    for t in 0..batch.max_len - 1 {
        let x_embed = tape.gather_rows(wired.v, batch.items[t].clone())?;
        let x_c = integrate_input(
            tape,
            config.input_integration,
            x_embed,
            &batch.ctx[t],
            config.ctx_dim,
            wired.c_in,
        )?;
        hidden = match config.cell {
            CellKind::Covisit | CellKind::BagOfItems => {
                baseline_step(tape, config.cell, x_c, hidden)?
            }
            CellKind::Gru => gru_step(tape, wired.cell.as_ref().unwrap(), x_c, hidden)?,
            CellKind::ContextWrapperGru => context_wrapper_gru_step(
                tape,
                wired.cell.as_ref().unwrap(),
                wired.ctx_cell.as_ref().unwrap(),
                x_c,
                hidden,
                &batch.ctx[t],
            )?,
        };
        let logits = integrate_output(
            tape,
            config.output_integration,
            hidden,
            &batch.ctx[t + 1],
            wired.v,
            wired.c_out,
            wired.d_out,
        )?;
        let step_nll = tape.nll_loss(
            logits,
            batch.items[t + 1].clone(),
            batch.target_mask[t + 1].clone(),
        )?;
        nll_sum = Some(match nll_sum {
            Some(acc) => tape.add(acc, step_nll)?,
            None => step_nll,
        });
        step_logits.push(logits);
    }

    Ok(ForwardOutput {
        step_logits,
        final_hidden: hidden,
        nll_sum: nll_sum.unwrap(),
        target_count: batch.target_count(),
    })
}

/// Per-step logits and summed NLL for one session.
pub struct SequenceForward<S: Real> {
    /// One logit vector per prediction step (targets are events 2..T).
    pub step_logits: Vec<Vec<S>>,
    /// Hidden state after the last event.
    pub final_hidden: Vec<S>,
    /// Sum of per-target negative log-probabilities.
    pub nll: S,
}

/// Run a single session (length >= 2) and collect values off the tape.
pub fn forward_sequence<S: Real>(
    session: &Session,
    params: &ParamSet<S>,
    config: &ModelConfig,
    schema: &crate::context::ContextSchema,
) -> Result<SequenceForward<S>, ModelError> {
    let batch = super::session_to_batch(session, schema)?;
    let mut tape = Tape::new();
    let out = forward_batch(&mut tape, params, config, &batch)?;
    Ok(SequenceForward {
        step_logits: out
            .step_logits
            .iter()
            .map(|&id| tape.value(id).row(0).to_vec())
            .collect(),
        final_hidden: tape.value(out.final_hidden).row(0).to_vec(),
        nll: tape.value(out.nll_sum).get(0, 0),
    })
}

/// Hidden state after consuming a (possibly length-1) prefix of events.
/// Used at serving time, where no target event exists yet.
pub fn hidden_after<S: Real>(
    steps: &[(u32, ContextVector)],
    params: &ParamSet<S>,
    config: &ModelConfig,
) -> Result<Vec<S>, ModelError> {
    config.validate()?;
    if steps.is_empty() {
        return Err(ModelError::Config("no events to consume".into()));
    }
    let mut tape = Tape::new();
    let wired = wire(&mut tape, params, config)?;
    let mut hidden = tape.input(Matrix::zeros(1, config.hidden_dim));
    for (item, ctx) in steps {
        let ids = Rc::new(vec![*item]);
        let cols: ActiveCols = Rc::new(vec![ctx.active().to_vec()]);
        let x_embed = tape.gather_rows(wired.v, ids)?;
        let x_c = integrate_input(
            &mut tape,
            config.input_integration,
            x_embed,
            &cols,
            config.ctx_dim,
            wired.c_in,
        )?;
        hidden = match config.cell {
            CellKind::Covisit | CellKind::BagOfItems => {
                baseline_step(&mut tape, config.cell, x_c, hidden)?
            }
            CellKind::Gru => gru_step(&mut tape, wired.cell.as_ref().unwrap(), x_c, hidden)?,
            CellKind::ContextWrapperGru => context_wrapper_gru_step(
                &mut tape,
                wired.cell.as_ref().unwrap(),
                wired.ctx_cell.as_ref().unwrap(),
                x_c,
                hidden,
                &cols,
            )?,
        };
    }
    Ok(tape.value(hidden).row(0).to_vec())
}

/// Item logits for a hidden state and the upcoming event's context, computed
/// without a tape. Mirrors `integrate_output` exactly.
pub fn output_logits<S: Real>(
    hidden: &[S],
    ctx_next: &ContextVector,
    params: &ParamSet<S>,
    config: &ModelConfig,
) -> Result<Vec<S>, ModelError> {
    let v = params.get("v").ok_or(ModelError::MissingParam("v"))?;
    let mut h_c = hidden.to_vec();
    if config.output_integration.uses_projection() {
        let c_out = params
            .get(config.output_projection_name())
            .ok_or(ModelError::MissingParam("c_out"))?;
        for (r, h) in h_c.iter_mut().enumerate() {
            let mut scale = S::zero();
            for &j in ctx_next.active() {
                scale += c_out.get(r, j as usize);
            }
            *h *= scale;
        }
    }
    let mut logits = Vec::with_capacity(config.vocab_size as usize);
    for item in 0..config.vocab_size as usize {
        let row = v.row(item);
        let mut o = S::zero();
        for (a, b) in row.iter().zip(&h_c) {
            o += *a * *b;
        }
        logits.push(o);
    }
    if config.output_integration.uses_concat() {
        let d_out = params.get("d_out").ok_or(ModelError::MissingParam("d_out"))?;
        for (item, logit) in logits.iter_mut().enumerate() {
            for &j in ctx_next.active() {
                *logit += d_out.get(item, j as usize);
            }
        }
    }
    Ok(logits)
}

/// Top-K items by probability, ties broken by ascending item id.
pub fn predict_topk<S: Real>(
    hidden: &[S],
    ctx_next: &ContextVector,
    params: &ParamSet<S>,
    config: &ModelConfig,
    k: usize,
) -> Result<Vec<(u32, S)>, ModelError> {
    let logits = output_logits(hidden, ctx_next, params, config)?;
    let probs = softmax(&logits)?;
    let mut order: Vec<u32> = (0..config.vocab_size).collect();
    order.sort_by(|&a, &b| {
        probs[b as usize]
            .partial_cmp(&probs[a as usize])
            .unwrap()
            .then(a.cmp(&b))
    });
    Ok(order
        .into_iter()
        .take(k)
        .map(|item| (item, probs[item as usize]))
        .collect())
}

/// Rank of `target` under the logits, counting ties on lower item ids as
/// ranked ahead. 1-based; agrees with the order `predict_topk` emits.
pub fn rank_of_target<S: Real>(logits: &[S], target: u32) -> usize {
    let target_logit = logits[target as usize];
    let mut rank = 1;
    for (i, &l) in logits.iter().enumerate() {
        if l > target_logit || (l == target_logit && (i as u32) < target) {
            rank += 1;
        }
    }
    rank
}
