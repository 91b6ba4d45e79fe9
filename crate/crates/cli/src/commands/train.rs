use std::io::Write;
use std::path::Path;

use anyhow::{anyhow, Context};
use ctxrec_core::checkpoint::{save_checkpoint, Checkpoint};
use ctxrec_core::context::ContextSchema;
use ctxrec_core::data::{Corpus, Session};
use ctxrec_core::kernel::Real;
use ctxrec_core::model::ModelError;
use ctxrec_core::train::{train, TrainError, TrainEvent, TrainOutcome};

use super::{load_for_training, usage, CliError};
use crate::config::{Precision, RunConfig};

pub fn run(config: &RunConfig, run_dir: &Path) -> Result<(), CliError> {
    let data = load_for_training(config)?;
    let schema = config
        .features
        .schema(data.train.event_types.clone());
    let model = config.model_config(data.train.vocab.len() as u32, &schema);
    model.validate().map_err(usage)?;
    let train_cfg = config.train_config(model);
    train_cfg.validate().map_err(usage)?;

    super::create_run_dir(run_dir)?;
    config.echo_to(run_dir).map_err(CliError::Other)?;

    // Persist held-out splits as canonical corpora so `evaluate` can score
    // them against the checkpoint later.
    for (name, sessions) in [("valid", &data.valid), ("test", &data.test)] {
        if sessions.is_empty() {
            continue;
        }
        let part = Corpus {
            sessions: sessions.clone(),
            vocab: data.train.vocab.clone(),
            event_types: data.train.event_types.clone(),
        };
        let path = run_dir.join(format!("{name}_corpus.csv"));
        ctxrec_core::data::write_corpus(&path, &part)
            .map_err(|e| CliError::Other(anyhow!("{e}")))?;
        println!("{name} split ({} sessions) written to {}", sessions.len(), path.display());
    }

    println!(
        "training {:?} ({:?} in / {:?} out) on {} sessions, vocab {}, context dim {}",
        train_cfg.model.cell,
        train_cfg.model.input_integration,
        train_cfg.model.output_integration,
        data.train.sessions.len(),
        data.train.vocab.len(),
        schema.dim(),
    );
    if train_cfg.valid_every > 0 && data.valid.is_empty() {
        eprintln!("warning: valid-every set but the split produced no validation sessions");
    }

    match config.train.precision {
        Precision::F64 => run_typed::<f64>(config, run_dir, &data.train, &data.valid, &schema, train_cfg),
        Precision::F32 => run_typed::<f32>(config, run_dir, &data.train, &data.valid, &schema, train_cfg),
    }
}

fn run_typed<S: Real>(
    config: &RunConfig,
    run_dir: &Path,
    corpus: &Corpus,
    valid: &[Session],
    schema: &ContextSchema,
    train_cfg: ctxrec_core::train::TrainConfig,
) -> Result<(), CliError> {
    let log_path = run_dir.join("train_log.jsonl");
    let mut log_file = std::fs::File::create(&log_path)
        .with_context(|| format!("cannot create {}", log_path.display()))
        .map_err(CliError::Other)?;

    let valid_opt = (!valid.is_empty()).then_some(valid);
    let output = train::<S>(&corpus.sessions, schema, &train_cfg, valid_opt, |event| {
        match event {
            TrainEvent::Step(step) => {
                println!(
                    "step {:>6}  lr {:.6}  loss {:.6}",
                    step.step, step.lr, step.loss
                );
            }
            TrainEvent::Validation(v) => {
                println!("step {:>6}  validation Recall@{} = {:.4}", v.step, v.k, v.recall);
            }
        }
    })
    .map_err(|e| match e {
        TrainError::Config(_) | TrainError::Model(ModelError::Config(_)) => usage(anyhow!("{e}")),
        other => CliError::Other(anyhow!("{other}")),
    })?;

    for record in &output.log {
        writeln!(log_file, "{}", serde_json::to_string(record).unwrap())
            .context("writing training log")
            .map_err(CliError::Other)?;
    }
    for record in &output.validations {
        writeln!(log_file, "{}", serde_json::to_string(record).unwrap())
            .context("writing training log")
            .map_err(CliError::Other)?;
    }

    let ckpt = Checkpoint {
        model: train_cfg.model.clone(),
        schema: schema.clone(),
        vocab: corpus.vocab.clone(),
        params: output.params,
    };
    let ckpt_path = run_dir.join("checkpoint.bin");
    save_checkpoint(&ckpt_path, &ckpt)
        .map_err(|e| CliError::Other(anyhow!("{e}")))?;

    match output.outcome {
        TrainOutcome::Completed => {
            if let Some(last) = output.log.last() {
                println!("done: final loss {:.6}", last.loss);
            }
            println!("checkpoint written to {}", ckpt_path.display());
            let _ = config;
            Ok(())
        }
        TrainOutcome::NumericAbort { step, diagnostic } => {
            eprintln!(
                "training aborted at step {step}: {diagnostic}; last-good checkpoint written to {}",
                ckpt_path.display()
            );
            Err(CliError::Numeric(format!("aborted at step {step}: {diagnostic}")))
        }
    }
}
