//! End-to-end training behavior: memorization, determinism, schedule logging,
//! loss normalization, and the numeric-abort contract.

mod common;

use ctxrec_core::checkpoint::{checkpoint_to_bytes, Checkpoint};
use ctxrec_core::context::ContextSchema;
use ctxrec_core::data::{Corpus, Event, Session, Vocab};
use ctxrec_core::model::{forward_sequence, CellKind, IntegrationKind, ModelConfig};
use ctxrec_core::train::{lr_schedule, train, TrainConfig, TrainOutcome};

fn deterministic_session() -> Session {
    // ten events over distinct items with alternating event types
    Session {
        id: 1,
        events: (0..10)
            .map(|t| Event {
                ts_ms: 1_400_000_000_000 + t as i64 * 45_000,
                item: t as u32,
                event_type: (t % 2) as u32,
            })
            .collect(),
    }
}

fn memorization_config(cell: CellKind, input: IntegrationKind, output: IntegrationKind) -> TrainConfig {
    let schema = ContextSchema::full(vec!["view".into(), "sale".into()]);
    let mut model = ModelConfig::new(cell, input)
        .with_dims(10, 16, 16)
        .with_schema(&schema);
    model.output_integration = output;
    let mut cfg = TrainConfig::new(model);
    cfg.iterations = 500;
    cfg.batch_size = 1;
    cfg.seed = 3;
    cfg.log_every = 0;
    cfg
}

fn memorize(cell: CellKind, input: IntegrationKind, output: IntegrationKind) -> f64 {
    let schema = ContextSchema::full(vec!["view".into(), "sale".into()]);
    let sessions = vec![deterministic_session()];
    let cfg = memorization_config(cell, input, output);
    let out = train::<f64>(&sessions, &schema, &cfg, None, |_| {}).unwrap();
    assert_eq!(out.outcome, TrainOutcome::Completed);
    out.log.last().unwrap().loss
}

#[test]
fn plain_gru_memorizes_single_sequence() {
    let schema = ContextSchema::full(vec!["view".into(), "sale".into()]);
    let sessions = vec![deterministic_session()];
    let cfg = memorization_config(
        CellKind::Gru,
        IntegrationKind::None,
        IntegrationKind::None,
    );
    let out = train::<f64>(&sessions, &schema, &cfg, None, |_| {}).unwrap();
    let final_loss = out.log.last().unwrap().loss;
    assert!(final_loss < 0.05, "final NLL {final_loss}");
    // a memorized sequence is recalled perfectly
    let records =
        ctxrec_core::eval::score_sessions(&sessions, &out.params, &cfg.model, &schema).unwrap();
    assert_eq!(
        ctxrec_core::eval::recall_at_k(&records, 10).unwrap(),
        1.0,
        "memorized checkpoint must recall its own sequence"
    );
}

#[test]
fn f32_precision_trains_too() {
    let (corpus, schema) = common::tiny_corpus(20, 5, 44);
    let mut cfg = TrainConfig::new(common::tiny_model(
        CellKind::ContextWrapperGru,
        IntegrationKind::ConcatMult,
    ));
    cfg.iterations = 30;
    cfg.batch_size = 8;
    cfg.seed = 3;
    cfg.log_every = 0;
    let out = train::<f32>(&corpus.sessions, &schema, &cfg, None, |_| {}).unwrap();
    assert_eq!(out.outcome, TrainOutcome::Completed);
    let first = out.log.first().unwrap().loss;
    let last = out.log.last().unwrap().loss;
    assert!(last.is_finite() && last < first, "{first} -> {last}");
}

#[test]
fn contextual_variants_memorize_single_sequence() {
    use IntegrationKind::{Concat, ConcatMult, Mult};
    for (cell, input, output) in [
        (CellKind::Gru, Mult, Mult),
        (CellKind::Gru, Concat, Concat),
        (CellKind::Gru, ConcatMult, ConcatMult),
        (CellKind::ContextWrapperGru, ConcatMult, ConcatMult),
    ] {
        let final_loss = memorize(cell, input, output);
        assert!(
            final_loss < 0.05,
            "{cell:?}/{input:?}->{output:?}: final NLL {final_loss}"
        );
    }
}

#[test]
fn training_is_deterministic_and_checkpoints_byte_identical() {
    let (corpus, schema) = common::tiny_corpus(30, 5, 8);
    let mut cfg = TrainConfig::new(
        common::tiny_model(CellKind::ContextWrapperGru, IntegrationKind::ConcatMult),
    );
    cfg.iterations = 40;
    cfg.batch_size = 8;
    cfg.seed = 17;
    cfg.log_every = 0;

    let run = |corpus: &Corpus| {
        let out = train::<f64>(&corpus.sessions, &schema, &cfg, None, |_| {}).unwrap();
        let ckpt = Checkpoint {
            model: cfg.model.clone(),
            schema: schema.clone(),
            vocab: corpus.vocab.clone(),
            params: out.params,
        };
        (checkpoint_to_bytes(&ckpt), out.log)
    };
    let (bytes_a, log_a) = run(&corpus);
    let (bytes_b, log_b) = run(&corpus);
    assert_eq!(bytes_a, bytes_b, "checkpoints must be byte-identical");
    for (a, b) in log_a.iter().zip(&log_b) {
        assert_eq!(a.loss.to_bits(), b.loss.to_bits(), "step {}", a.step);
    }
}

#[test]
fn logged_lr_matches_schedule_and_loss_matches_forward() {
    let (corpus, schema) = common::tiny_corpus(6, 4, 5);
    let mut cfg = TrainConfig::new(common::tiny_model(CellKind::Gru, IntegrationKind::Mult));
    cfg.iterations = 5;
    // one batch covers the corpus, so the first step sees every session
    cfg.batch_size = corpus.sessions.len();
    cfg.seed = 2;
    cfg.log_every = 1;
    let out = train::<f64>(&corpus.sessions, &schema, &cfg, None, |_| {}).unwrap();
    assert_eq!(out.log.len(), 5);
    for record in &out.log {
        assert_eq!(record.lr, lr_schedule(record.step, &cfg));
    }

    // reported first-step loss = sum of per-session NLL / total targets,
    // evaluated at the initial parameters
    let init = ctxrec_core::model::init_params::<f64>(&cfg.model, cfg.seed).unwrap();
    let mut nll = 0.0;
    let mut targets = 0usize;
    for session in &corpus.sessions {
        let f = forward_sequence(session, &init, &cfg.model, &schema).unwrap();
        nll += f.nll;
        targets += session.events.len() - 1;
    }
    let first = &out.log[0];
    assert_eq!(first.targets, targets);
    assert!(
        (first.loss - nll / targets as f64).abs() < 1e-10,
        "{} vs {}",
        first.loss,
        nll / targets as f64
    );
}

#[test]
fn numeric_blowup_aborts_with_last_good_params() {
    // An absurd learning rate sends the covisit state to overflow within a
    // couple of steps; training must stop with a diagnostic instead of
    // erroring, returning finite parameters.
    let (corpus, schema) = common::tiny_corpus(10, 4, 2);
    let mut cfg = TrainConfig::new(common::tiny_model(CellKind::BagOfItems, IntegrationKind::None));
    cfg.iterations = 50;
    cfg.batch_size = 4;
    cfg.seed = 1;
    cfg.lr_start = 1e200;
    cfg.lr_end = 1e200;
    cfg.log_every = 0;
    let out = train::<f64>(&corpus.sessions, &schema, &cfg, None, |_| {}).unwrap();
    match out.outcome {
        TrainOutcome::NumericAbort { step, ref diagnostic } => {
            assert!(step < 50, "should abort early, aborted at {step}");
            assert!(!diagnostic.is_empty());
        }
        TrainOutcome::Completed => panic!("expected a numeric abort"),
    }
    for (name, m) in out.params.iter() {
        assert!(m.all_finite(), "returned parameter {name} not finite");
    }
}

#[test]
fn validation_recall_is_logged() {
    let (corpus, schema) = common::tiny_corpus(20, 4, 12);
    let mut cfg = TrainConfig::new(common::tiny_model(CellKind::Gru, IntegrationKind::None));
    cfg.iterations = 10;
    cfg.batch_size = 8;
    cfg.valid_every = 5;
    cfg.valid_k = 5;
    cfg.log_every = 0;
    let valid = corpus.sessions[..5].to_vec();
    let mut seen = 0;
    let out = train::<f64>(&corpus.sessions, &schema, &cfg, Some(&valid), |event| {
        if let ctxrec_core::train::TrainEvent::Validation(v) = event {
            assert!(v.recall >= 0.0 && v.recall <= 1.0);
            seen += 1;
        }
    })
    .unwrap();
    assert_eq!(out.validations.len(), 2);
    assert_eq!(seen, 2);
    let _ = Vocab::identity(2);
}
