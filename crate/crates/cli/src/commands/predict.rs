use std::io::BufRead;
use std::path::PathBuf;

use anyhow::anyhow;
use ctxrec_core::checkpoint::{load_checkpoint, AnyCheckpoint, Checkpoint};
use ctxrec_core::context::ContextVector;
use ctxrec_core::kernel::Real;
use ctxrec_core::model::{hidden_after, predict_topk};

use super::{usage, CliError};

pub struct PredictArgs {
    pub checkpoint: PathBuf,
    pub k: usize,
    /// Event type assumed for the upcoming event (name or index); defaults
    /// to the first type the model was trained with.
    pub next_event_type: Option<String>,
}

/// Events arrive on stdin in canonical order, one per line:
/// `[session_id,]ts_ms,item,event_type` with external item ids and event
/// types by name or index.
pub fn run(args: &PredictArgs, input: impl BufRead) -> Result<(), CliError> {
    let ckpt = load_checkpoint(&args.checkpoint).map_err(usage)?;
    let events = parse_events(&ckpt, input)?;
    if events.is_empty() {
        return Err(usage(anyhow!("no events on stdin; nothing to predict from")));
    }
    match &ckpt {
        AnyCheckpoint::F64(c) => predict(c, &events, args),
        AnyCheckpoint::F32(c) => predict(c, &events, args),
    }
}

struct ParsedEvent {
    ts_ms: i64,
    item: u32,
    etype: u32,
}

fn parse_events(ckpt: &AnyCheckpoint, input: impl BufRead) -> Result<Vec<ParsedEvent>, CliError> {
    let vocab = ckpt.vocab();
    let schema = ckpt.schema();
    let mut events = Vec::new();
    for (line_no, line) in input.lines().enumerate() {
        let line = line.map_err(|e| CliError::Other(anyhow!("stdin: {e}")))?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let (ts_field, item_field, type_field) = match fields.len() {
            3 => (fields[0], fields[1], fields[2]),
            4 => (fields[1], fields[2], fields[3]),
            n => {
                return Err(usage(anyhow!(
                    "stdin line {}: expected 3 or 4 comma-separated fields, got {n}",
                    line_no + 1
                )))
            }
        };
        let ts_ms: i64 = ts_field.parse().map_err(|e| {
            usage(anyhow!("stdin line {}: timestamp: {e}", line_no + 1))
        })?;
        let item = match vocab.encode(item_field) {
            Some(idx) => {
                if !vocab.contains(item_field) {
                    eprintln!(
                        "warning: unknown item `{item_field}` mapped to the out-of-vocabulary id"
                    );
                }
                idx
            }
            None => {
                return Err(usage(anyhow!(
                    "stdin line {}: unknown item `{item_field}` and the model has no \
                     out-of-vocabulary slot",
                    line_no + 1
                )))
            }
        };
        let etype = resolve_event_type(schema.event_types(), type_field)
            .map_err(|e| usage(anyhow!("stdin line {}: {e}", line_no + 1)))?;
        events.push(ParsedEvent { ts_ms, item, etype });
    }
    Ok(events)
}

fn resolve_event_type(known: &[String], field: &str) -> anyhow::Result<u32> {
    if let Some(idx) = known.iter().position(|t| t == field) {
        return Ok(idx as u32);
    }
    if let Ok(idx) = field.parse::<u32>() {
        if (idx as usize) < known.len() {
            return Ok(idx);
        }
    }
    Err(anyhow!("unknown event type `{field}` (known: {known:?})"))
}

fn predict<S: Real>(
    ckpt: &Checkpoint<S>,
    events: &[ParsedEvent],
    args: &PredictArgs,
) -> Result<(), CliError> {
    let schema = &ckpt.schema;
    let mut steps: Vec<(u32, ContextVector)> = Vec::with_capacity(events.len());
    let mut prev_ts = None;
    for event in events {
        let ctx = schema
            .build_context(event.ts_ms, prev_ts, event.etype)
            .map_err(usage)?;
        steps.push((event.item, ctx));
        prev_ts = Some(event.ts_ms);
    }
    let hidden = hidden_after(&steps, &ckpt.params, &ckpt.model)
        .map_err(|e| CliError::Other(anyhow!("{e}")))?;

    // The upcoming event's context: assumed to happen now (zero gap), with a
    // caller-chosen event type.
    let last_ts = events.last().unwrap().ts_ms;
    let next_type = match &args.next_event_type {
        Some(name) => resolve_event_type(schema.event_types(), name).map_err(usage)?,
        None => 0,
    };
    let ctx_next = schema
        .build_context(last_ts, Some(last_ts), next_type)
        .map_err(usage)?;
    let top = predict_topk(&hidden, &ctx_next, &ckpt.params, &ckpt.model, args.k)
        .map_err(|e| CliError::Other(anyhow!("{e}")))?;
    for (item, prob) in top {
        let external = ckpt.vocab.decode(item).unwrap_or("?");
        println!("{external}\t{prob:.6}");
    }
    Ok(())
}
