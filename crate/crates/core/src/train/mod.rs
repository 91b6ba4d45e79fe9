//! Mini-batch NLL training: learning-rate schedule, batching, the Adam loop,
//! and numeric-failure handling.

mod batch;

use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::context::ContextSchema;
use crate::data::Session;
use crate::eval::{recall_at_k, score_sessions};
use crate::kernel::{adam_step, AdamState, KernelError, ParamSet, Real, Tape};
use crate::model::{forward_batch, init_params, ModelConfig, ModelError};

pub use batch::BatchStream;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error("training configuration: {0}")]
    Config(String),
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub batch_size: usize,
    /// Mini-batch steps (not epochs).
    pub iterations: usize,
    pub lr_start: f64,
    pub lr_end: f64,
    pub seed: u64,
    /// Optional global-norm gradient clip; multiplicative cells can spike.
    pub grad_clip: Option<f64>,
    /// Emit a step record every this many steps (0 = only the last).
    pub log_every: usize,
    /// Run validation Recall@K every this many steps (0 = never).
    pub valid_every: usize,
    pub valid_k: usize,
}

impl TrainConfig {
    pub fn new(model: ModelConfig) -> Self {
        TrainConfig {
            model,
            batch_size: 256,
            iterations: 10_000,
            lr_start: 0.01,
            lr_end: 0.001,
            seed: 0,
            grad_clip: None,
            log_every: 100,
            valid_every: 0,
            valid_k: 10,
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        if self.iterations == 0 {
            return Err(TrainError::Config("iterations must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(TrainError::Config("batch_size must be positive".into()));
        }
        if !(self.lr_start >= self.lr_end && self.lr_end > 0.0) {
            return Err(TrainError::Config(format!(
                "need lr_start >= lr_end > 0, got {} and {}",
                self.lr_start, self.lr_end
            )));
        }
        Ok(())
    }
}

/// Square-root interpolation between the endpoints:
/// lr(t) = lr_start / sqrt(1 + (t/T)((lr_start/lr_end)^2 - 1)).
/// Exactly lr_start at t = 0 and lr_end at t = T, monotone nonincreasing.
pub fn lr_schedule(step: usize, config: &TrainConfig) -> f64 {
    let t = step as f64 / config.iterations as f64;
    let ratio = config.lr_start / config.lr_end;
    config.lr_start / (1.0 + t * (ratio * ratio - 1.0)).sqrt()
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub lr: f64,
    /// Mean NLL over valid target positions in the batch.
    pub loss: f64,
    /// Plain summed NLL, for logs that want the unnormalized objective.
    pub nll_sum: f64,
    pub targets: usize,
    pub wall_ms: u64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ValidationRecord {
    pub step: usize,
    pub k: usize,
    pub recall: f64,
}

pub enum TrainEvent<'a> {
    Step(&'a StepRecord),
    Validation(&'a ValidationRecord),
}

/// How a run ended. A numeric failure is not an `Err`: the last finite-loss
/// parameters are still returned so they can be checkpointed.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum TrainOutcome {
    Completed,
    NumericAbort { step: usize, diagnostic: String },
}

pub struct TrainOutput<S: Real> {
    pub params: ParamSet<S>,
    pub outcome: TrainOutcome,
    pub log: Vec<StepRecord>,
    pub validations: Vec<ValidationRecord>,
}

/// Run `iterations` Adam steps of masked mean-NLL training. Deterministic for
/// a fixed (seed, config, corpus) in this single-threaded implementation.
pub fn train<S: Real>(
    sessions: &[Session],
    schema: &ContextSchema,
    config: &TrainConfig,
    valid_sessions: Option<&[Session]>,
    mut on_event: impl FnMut(TrainEvent<'_>),
) -> Result<TrainOutput<S>, TrainError> {
    config.validate()?;
    let mut params: ParamSet<S> = init_params(&config.model, config.seed)?;
    // Distinct stream so batch order is independent of the init draws.
    let mut stream = BatchStream::new(
        sessions,
        schema,
        config.batch_size,
        config.seed.wrapping_add(0x5eed),
    )?;
    let mut adam = AdamState::new();
    let mut log = Vec::new();
    let mut validations = Vec::new();
    let started = Instant::now();
    // Parameters that produced the most recent finite loss; what a numeric
    // abort hands back for the last-good checkpoint.
    let mut last_good: Option<ParamSet<S>> = None;

    for step in 0..config.iterations {
        let lr = lr_schedule(step, config);
        let batch = stream.next_batch();
        let mut tape = Tape::new();

        macro_rules! numeric_abort {
            ($diagnostic:expr, $good:expr) => {
                return Ok(TrainOutput {
                    params: $good,
                    outcome: TrainOutcome::NumericAbort {
                        step,
                        diagnostic: $diagnostic,
                    },
                    log,
                    validations,
                })
            };
        }

        let forward = match forward_batch(&mut tape, &params, &config.model, &batch) {
            Ok(f) => f,
            Err(ModelError::Kernel(KernelError::NonFiniteInput { op })) => {
                numeric_abort!(
                    format!("non-finite values reached `{op}` during the forward pass"),
                    last_good.unwrap_or(params)
                );
            }
            Err(e) => return Err(e.into()),
        };
        let nll_sum = tape.value(forward.nll_sum).get(0, 0).to_f64();
        if !nll_sum.is_finite() {
            numeric_abort!(
                format!("loss became {nll_sum}"),
                last_good.unwrap_or(params)
            );
        }
        // This forward pass was finite, so the current parameters are the
        // fallback from here on.
        last_good = Some(params.clone());
        let mean_loss = tape.scale(
            forward.nll_sum,
            S::from_f64(1.0 / forward.target_count as f64),
        );
        let mut grads = tape.backward(mean_loss)?;
        if let Some(clip) = config.grad_clip {
            clip_global_norm(&mut grads, clip);
        }
        match adam_step(&mut params, &grads, &mut adam, S::from_f64(lr)) {
            Ok(()) => {}
            Err(KernelError::NonFiniteGradient { param, row, col }) => {
                numeric_abort!(
                    format!("non-finite gradient for `{param}` at ({row}, {col})"),
                    params
                );
            }
            Err(e) => return Err(e.into()),
        }

        let record = StepRecord {
            step,
            lr,
            loss: nll_sum / forward.target_count as f64,
            nll_sum,
            targets: forward.target_count,
            wall_ms: started.elapsed().as_millis() as u64,
        };
        let should_log = config.log_every != 0 && step % config.log_every == 0;
        if should_log || step + 1 == config.iterations {
            on_event(TrainEvent::Step(&record));
        }
        log.push(record);

        if config.valid_every != 0 && (step + 1) % config.valid_every == 0 {
            if let Some(valid) = valid_sessions {
                let records = score_sessions(valid, &params, &config.model, schema)
                    .map_err(|e| TrainError::Config(format!("validation failed: {e}")))?;
                let recall = recall_at_k(&records, config.valid_k)
                    .map_err(|e| TrainError::Config(format!("validation failed: {e}")))?;
                let record = ValidationRecord {
                    step,
                    k: config.valid_k,
                    recall,
                };
                on_event(TrainEvent::Validation(&record));
                validations.push(record);
            }
        }
    }

    Ok(TrainOutput {
        params,
        outcome: TrainOutcome::Completed,
        log,
        validations,
    })
}

fn clip_global_norm<S: Real>(grads: &mut crate::kernel::Gradients<S>, max_norm: f64) {
    let mut sum_sq = 0.0f64;
    for (_, g) in grads.iter() {
        for &v in g.data() {
            let v = v.to_f64();
            sum_sq += v * v;
        }
    }
    let norm = sum_sq.sqrt();
    if norm > max_norm {
        let factor = S::from_f64(max_norm / norm);
        for (_, g) in grads.iter_mut() {
            for v in g.data_mut() {
                *v *= factor;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{CellKind, IntegrationKind};

    fn config(iterations: usize) -> TrainConfig {
        let model = ModelConfig::new(CellKind::Gru, IntegrationKind::None).with_dims(10, 8, 8);
        let mut cfg = TrainConfig::new(model);
        cfg.iterations = iterations;
        cfg.batch_size = 4;
        cfg.log_every = 0;
        cfg
    }

    #[test]
    fn schedule_endpoints_and_midpoint() {
        let cfg = config(10_000);
        assert_eq!(lr_schedule(0, &cfg), 0.01);
        assert!((lr_schedule(10_000, &cfg) - 0.001).abs() < 1e-15);
        // 0.01 / sqrt(1 + 0.5 * 99) = 0.01 / sqrt(50.5)
        let expected = 0.01 / 50.5f64.sqrt();
        assert!((lr_schedule(5_000, &cfg) - expected).abs() < 1e-15);
        assert!((expected - 1.407e-3).abs() < 1e-6);
    }

    #[test]
    fn schedule_is_monotone_nonincreasing() {
        let cfg = config(1000);
        let mut prev = f64::INFINITY;
        for step in 0..=1000 {
            let lr = lr_schedule(step, &cfg);
            assert!(lr <= prev);
            prev = lr;
        }
    }

    #[test]
    fn config_validation() {
        let mut cfg = config(0);
        assert!(cfg.validate().is_err());
        cfg.iterations = 10;
        cfg.lr_end = 0.1; // above lr_start
        assert!(cfg.validate().is_err());
    }
}
