//! Analytic gradients against central finite differences on tiny models.
//! Every cell and integration combination must agree with the oracle.

mod common;

use common::{batch_nll, first_batch, gradcheck_params, max_grad_rel_err, tiny_corpus, tiny_model};
use ctxrec_core::kernel::{Matrix, Tape};
use ctxrec_core::model::{init_params, CellKind, IntegrationKind};

const FD_STEP: f64 = 1e-5;
const TOLERANCE: f64 = 1e-4;

const INTEGRATIONS: [IntegrationKind; 4] = [
    IntegrationKind::None,
    IntegrationKind::Concat,
    IntegrationKind::Mult,
    IntegrationKind::ConcatMult,
];

fn check(cell: CellKind, input: IntegrationKind, output: IntegrationKind) {
    let (corpus, schema) = tiny_corpus(2, 4, 101);
    let mut cfg = tiny_model(cell, input);
    cfg.output_integration = output;
    let params = gradcheck_params(&cfg, 5);
    let batch = first_batch(&corpus, &schema, 2);
    let (worst, at) = max_grad_rel_err(&params, &cfg, &batch, FD_STEP);
    assert!(
        worst < TOLERANCE,
        "{cell:?}/{input:?}->{output:?}: max relative error {worst:.3e} at {at}"
    );
}

#[test]
fn gru_all_integration_pairs() {
    for input in INTEGRATIONS {
        for output in INTEGRATIONS {
            check(CellKind::Gru, input, output);
        }
    }
}

#[test]
fn context_wrapper_all_integration_pairs() {
    for input in INTEGRATIONS {
        for output in INTEGRATIONS {
            check(CellKind::ContextWrapperGru, input, output);
        }
    }
}

#[test]
fn baselines_all_valid_integration_pairs() {
    for cell in [CellKind::Covisit, CellKind::BagOfItems] {
        for input in [IntegrationKind::None, IntegrationKind::Mult] {
            for output in INTEGRATIONS {
                check(cell, input, output);
            }
        }
    }
}

#[test]
fn shared_context_projection_gradients() {
    // One matrix serving both integration sides accumulates both paths.
    let (corpus, schema) = tiny_corpus(2, 4, 101);
    let mut cfg = tiny_model(CellKind::Gru, IntegrationKind::Mult);
    cfg.output_integration = IntegrationKind::Mult;
    cfg.share_context_projection = true;
    let params = gradcheck_params(&cfg, 5);
    assert!(params.contains("c_shared") && !params.contains("c_in"));
    let batch = first_batch(&corpus, &schema, 2);
    let (worst, at) = max_grad_rel_err(&params, &cfg, &batch, FD_STEP);
    assert!(worst < TOLERANCE, "shared projection: {worst:.3e} at {at}");
}

#[test]
fn matmul_grad_of_sum_is_ones_times_b_transposed() {
    let mut tape = Tape::new();
    let a_val = Matrix::from_vec(
        3,
        4,
        (0..12).map(|i| (i as f64 * 0.7).sin()).collect(),
    )
    .unwrap();
    let b_val = Matrix::from_vec(
        4,
        2,
        (0..8).map(|i| (i as f64 * 1.3).cos()).collect(),
    )
    .unwrap();
    let a = tape.param("a", &a_val);
    let b = tape.input(b_val.clone());
    let prod = tape.matmul(a, b).unwrap();
    let loss = tape.sum_all(prod);
    let grads = tape.backward(loss).unwrap();
    let got = grads.get("a").unwrap();
    // d sum(AB) / dA = ones(3,2) @ B^T
    for r in 0..3 {
        for c in 0..4 {
            let expected: f64 = (0..2).map(|j| b_val.get(c, j)).sum();
            assert!((got.get(r, c) - expected).abs() < 1e-12);
        }
    }
    // and against finite differences
    for idx in 0..12 {
        let eval = |delta: f64| {
            let mut data = a_val.data().to_vec();
            data[idx] += delta;
            let mut t = Tape::new();
            let a = t.input(Matrix::from_vec(3, 4, data).unwrap());
            let b = t.input(b_val.clone());
            let prod = t.matmul(a, b).unwrap();
            let loss = t.sum_all(prod);
            t.value(loss).get(0, 0)
        };
        let numeric = (eval(FD_STEP) - eval(-FD_STEP)) / (2.0 * FD_STEP);
        assert!(common::rel_err(got.data()[idx], numeric) < TOLERANCE);
    }
}

#[test]
fn padded_positions_contribute_zero_gradient() {
    // Mixed-length batch: perturbing the pad item id changes nothing.
    let (corpus, schema) = tiny_corpus(6, 4, 77);
    let mut sessions = corpus.sessions.clone();
    sessions[1].events.truncate(2);
    sessions[3].events.truncate(3);
    let corpus = ctxrec_core::data::Corpus {
        sessions,
        vocab: corpus.vocab,
        event_types: corpus.event_types,
    };
    let cfg = tiny_model(CellKind::Gru, IntegrationKind::ConcatMult);
    let params = init_params::<f64>(&cfg, 9).unwrap();
    let batch = first_batch(&corpus, &schema, 6);
    assert!(batch.target_mask.iter().any(|m| m.iter().any(|&x| !x)));

    let grads_for = |batch: &ctxrec_core::model::SequenceBatch| {
        let mut tape = Tape::new();
        let out = ctxrec_core::model::forward_batch(&mut tape, &params, &cfg, batch).unwrap();
        (
            tape.value(out.nll_sum).get(0, 0),
            tape.backward(out.nll_sum).unwrap(),
        )
    };
    let (nll_a, grads_a) = grads_for(&batch);

    // rewrite every padded position's item id and re-run
    let mut altered = batch;
    for t in 0..altered.max_len {
        let mask = altered.target_mask[t].clone();
        let items = std::rc::Rc::make_mut(&mut altered.items[t]);
        for (b, &valid) in mask.iter().enumerate() {
            let is_pad = !valid && t > 0;
            if is_pad {
                items[b] = (items[b] + 7) % 20;
            }
        }
    }
    let (nll_b, grads_b) = grads_for(&altered);
    assert_eq!(nll_a, nll_b);
    for (name, g) in grads_a.iter() {
        assert_eq!(g.data(), grads_b.get(name).unwrap().data(), "grad {name}");
    }
}

#[test]
fn input_path_gradient_touches_only_consumed_rows() {
    // Isolate the embedding path: loss = sum of gathered rows.
    let mut tape = Tape::new();
    let table = Matrix::from_vec(6, 3, (0..18).map(|i| i as f64 * 0.1).collect()).unwrap();
    let v = tape.param("v", &table);
    let gathered = tape
        .gather_rows(v, std::rc::Rc::new(vec![1, 4, 1]))
        .unwrap();
    let loss = tape.sum_all(gathered);
    let grads = tape.backward(loss).unwrap();
    let g = grads.get("v").unwrap();
    for row in 0..6 {
        let expected = match row {
            1 => 2.0, // consumed twice
            4 => 1.0,
            _ => 0.0,
        };
        assert!(g.row(row).iter().all(|&x| x == expected), "row {row}");
    }
}

#[test]
fn elementwise_mul_gradient_matches_oracle() {
    let (corpus, schema) = tiny_corpus(2, 3, 13);
    let cfg = tiny_model(CellKind::Gru, IntegrationKind::Mult);
    let params = init_params::<f64>(&cfg, 21).unwrap();
    let batch = first_batch(&corpus, &schema, 2);
    // direct FD on one c_in entry for a quick, isolated signal
    let mut tape = Tape::new();
    let out = ctxrec_core::model::forward_batch(&mut tape, &params, &cfg, &batch).unwrap();
    let grads = tape.backward(out.nll_sum).unwrap();
    let analytic = grads.get("c_in").unwrap().data()[3];
    let mut plus = params.clone();
    plus.get_mut("c_in").unwrap().data_mut()[3] += FD_STEP;
    let mut minus = params.clone();
    minus.get_mut("c_in").unwrap().data_mut()[3] -= FD_STEP;
    let numeric =
        (batch_nll(&plus, &cfg, &batch) - batch_nll(&minus, &cfg, &batch)) / (2.0 * FD_STEP);
    assert!(common::rel_err(analytic, numeric) < TOLERANCE);
}
