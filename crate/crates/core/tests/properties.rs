//! Property-based checks of the kernel and metric invariants.

use proptest::prelude::*;

use ctxrec_core::context::{bucket_time_delta, ContextSchema};
use ctxrec_core::eval::{recall_at_k, PredictionRecord};
use ctxrec_core::kernel::{softmax, Matrix, Tape};

fn small_matrix(rows: usize, cols: usize) -> impl Strategy<Value = Matrix<f64>> {
    proptest::collection::vec(-2.0..2.0f64, rows * cols)
        .prop_map(move |data| Matrix::from_vec(rows, cols, data).unwrap())
}

proptest! {
    #[test]
    fn softmax_sums_to_one(logits in proptest::collection::vec(-50.0..50.0f64, 1..40)) {
        let probs = softmax(&logits).unwrap();
        let sum: f64 = probs.iter().sum();
        prop_assert!((sum - 1.0).abs() < 1e-12);
        prop_assert!(probs.iter().all(|&p| p >= 0.0));
    }

    #[test]
    fn softmax_is_permutation_equivariant(
        logits in proptest::collection::vec(-20.0..20.0f64, 2..20),
        rotation in 0usize..19,
    ) {
        let n = logits.len();
        let shift = rotation % n;
        let rotated: Vec<f64> = (0..n).map(|i| logits[(i + shift) % n]).collect();
        let base = softmax(&logits).unwrap();
        let perm = softmax(&rotated).unwrap();
        for i in 0..n {
            prop_assert!((perm[i] - base[(i + shift) % n]).abs() < 1e-14);
        }
    }

    #[test]
    fn matmul_is_associative(
        a in small_matrix(3, 4),
        b in small_matrix(4, 2),
        c in small_matrix(2, 5),
    ) {
        let mut tape: Tape<f64> = Tape::new();
        let a = tape.input(a);
        let b = tape.input(b);
        let c = tape.input(c);
        let ab = tape.matmul(a, b).unwrap();
        let ab_c = tape.matmul(ab, c).unwrap();
        let bc = tape.matmul(b, c).unwrap();
        let a_bc = tape.matmul(a, bc).unwrap();
        for (x, y) in tape.value(ab_c).data().iter().zip(tape.value(a_bc).data()) {
            prop_assert!((x - y).abs() < 1e-10);
        }
    }

    #[test]
    fn delta_bucket_monotone_under_random_pairs(a in 0u64..1_000_000_000, b in 0u64..1_000_000_000) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(bucket_time_delta(lo) <= bucket_time_delta(hi));
        prop_assert!(bucket_time_delta(hi) <= 20);
    }

    #[test]
    fn context_encoding_round_trips(
        ts_s in 0i64..4_000_000_000,
        delta_s in proptest::option::of(0i64..100_000_000),
        etype in 0u32..3,
    ) {
        let schema = ContextSchema::full(vec!["view".into(), "sale".into(), "basket".into()]);
        let ts_ms = ts_s * 1000;
        let prev = delta_s.map(|d| ts_ms - d * 1000);
        let ctx = schema.build_context(ts_ms, prev, etype).unwrap();
        // exactly one active index per block, each within bounds
        prop_assert_eq!(ctx.active().len(), schema.num_blocks());
        for (block, &idx) in schema.blocks().iter().zip(ctx.active()) {
            prop_assert!(idx >= block.offset && idx < block.offset + block.size);
        }
        // decoded fields match a direct recomputation
        let decoded = schema.decode(&ctx);
        for (kind, local) in decoded {
            use ctxrec_core::context::FeatureKind::*;
            let fields = ctxrec_core::context::encode_time(ts_s, 0).unwrap();
            let expected = match kind {
                Month => fields.month,
                Hour => fields.hour,
                DayOfWeek => fields.day_of_week,
                TimeDelta => bucket_time_delta(delta_s.unwrap_or(0) as u64),
                EventType => etype,
            };
            prop_assert_eq!(local, expected);
        }
        // determinism
        let again = schema.build_context(ts_ms, prev, etype).unwrap();
        prop_assert_eq!(ctx, again);
    }

    #[test]
    fn recall_permutation_invariant_and_monotone(
        ranks in proptest::collection::vec(1usize..60, 1..80),
        seed in 0u64..1000,
    ) {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let records: Vec<PredictionRecord> = ranks
            .iter()
            .enumerate()
            .map(|(i, &rank)| PredictionRecord {
                session_id: i as u64 / 3,
                step: 1,
                target: 0,
                rank,
                event_type: 0,
                is_new: false,
                time_gap_bucket: 0,
                prefix_len: 1,
            })
            .collect();
        let mut shuffled = records.clone();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        shuffled.shuffle(&mut rng);
        for k in [1, 5, 10, 20] {
            prop_assert_eq!(
                recall_at_k(&records, k).unwrap(),
                recall_at_k(&shuffled, k).unwrap()
            );
        }
        let mut prev = 0.0;
        for k in 1..=60 {
            let r = recall_at_k(&records, k).unwrap();
            prop_assert!(r >= prev);
            prev = r;
        }
        prop_assert_eq!(prev, 1.0);
    }
}
