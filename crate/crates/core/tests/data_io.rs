//! Loader, preprocessing, and calendar behavior against independent oracles
//! (chrono for all date arithmetic, hand-derived structures for the fixture).

mod common;

use std::io::Write;
use std::path::Path;

use chrono::{Datelike, TimeZone, Timelike, Utc};
use ctxrec_core::context::encode_time;
use ctxrec_core::data::{
    clean_sessions, load_yoochoose, preprocess, DataError, EVENT_TYPE_SALE, EVENT_TYPE_VIEW,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn fixture(name: &str) -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data").join(name)
}

#[test]
fn fixture_parses_to_expected_structure() {
    let (sessions, report) = load_yoochoose(
        &fixture("yoochoose-clicks.dat"),
        Some(&fixture("yoochoose-buys.dat")),
    )
    .unwrap();
    assert_eq!(report.rows_read, 13);
    assert_eq!(report.rows_skipped, 0);
    assert_eq!(sessions.len(), 6);

    let by_id: std::collections::HashMap<u64, _> =
        sessions.iter().map(|s| (s.id, s)).collect();
    assert_eq!(by_id[&1].events.len(), 3);
    assert!(by_id[&1].events.iter().all(|e| e.event_type == EVENT_TYPE_VIEW));
    assert_eq!(by_id[&1].events[0].item, "214536502");
    assert_eq!(by_id[&1].events[2].item, "214577561");

    // session 3: the purchase shares its timestamp with the second click and
    // must sort after it
    let s3 = &by_id[&3];
    assert_eq!(s3.events.len(), 3);
    assert_eq!(s3.events[1].event_type, EVENT_TYPE_VIEW);
    assert_eq!(s3.events[2].event_type, EVENT_TYPE_SALE);
    assert_eq!(s3.events[1].ts_ms, s3.events[2].ts_ms);
    assert_eq!(s3.events[2].item, "214832672");

    // session 4: view then sale two seconds later
    let s4 = &by_id[&4];
    assert_eq!(s4.events.len(), 2);
    assert_eq!(s4.events[1].event_type, EVENT_TYPE_SALE);
    assert_eq!(s4.events[1].ts_ms - s4.events[0].ts_ms, 2_314);

    // timestamps agree with chrono's parser
    let expected = Utc
        .with_ymd_and_hms(2014, 4, 7, 10, 51, 9)
        .unwrap()
        .timestamp_millis()
        + 277;
    assert_eq!(by_id[&1].events[0].ts_ms, expected);
}

#[test]
fn empty_buys_yields_views_only() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("buys.dat");
    std::fs::write(&empty, "").unwrap();
    let (sessions, _) =
        load_yoochoose(&fixture("yoochoose-clicks.dat"), Some(&empty)).unwrap();
    assert!(sessions
        .iter()
        .flat_map(|s| &s.events)
        .all(|e| e.event_type == EVENT_TYPE_VIEW));
    let (sessions_none, _) = load_yoochoose(&fixture("yoochoose-clicks.dat"), None).unwrap();
    assert_eq!(sessions.len(), sessions_none.len());
}

#[test]
fn malformed_rows_skipped_until_threshold() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("clicks.dat");
    let mut file = std::fs::File::create(&path).unwrap();
    for i in 0..398 {
        writeln!(
            file,
            "{},2014-05-0{}T12:00:0{}Z,item{},0",
            i / 4 + 1,
            i % 9 + 1,
            i % 10,
            i % 7
        )
        .unwrap();
    }
    writeln!(file, "not,a,valid,row").unwrap();
    writeln!(file, "also broken").unwrap();
    drop(file);
    // 2 bad rows out of 400 is 0.5%: skipped with a report
    let (_, report) = load_yoochoose(&path, None).unwrap();
    assert_eq!(report.rows_skipped, 2);
    assert_eq!(report.rows_read, 400);

    // push the rate over 1%: hard error
    let mut file = std::fs::OpenOptions::new().append(true).open(&path).unwrap();
    for _ in 0..4 {
        writeln!(file, "branapping").unwrap();
    }
    drop(file);
    assert!(matches!(
        load_yoochoose(&path, None),
        Err(DataError::MalformedRate { .. })
    ));
}

#[test]
fn preprocess_pipeline_on_fixture() {
    let (raw, _) = load_yoochoose(
        &fixture("yoochoose-clicks.dat"),
        Some(&fixture("yoochoose-buys.dat")),
    )
    .unwrap();

    // cleaning is idempotent
    let cleaned_once = clean_sessions(raw.clone(), 20);
    let cleaned_twice = clean_sessions(cleaned_once.clone(), 20);
    assert_eq!(cleaned_once, cleaned_twice);
    // session 5 had a single event and is gone
    assert!(cleaned_once.iter().all(|s| s.id != 5));

    // full preprocessing with threshold 1 keeps every item out of the oov slot
    let (encoded, vocab) = preprocess(raw.clone(), 1, 20).unwrap();
    assert_eq!(encoded.len(), 5);
    assert_eq!(vocab.oov_index(), Some(0));
    for session in &encoded {
        assert!(session.events.len() >= 2);
        assert!(session.events.windows(2).all(|w| w[0].ts_ms <= w[1].ts_ms));
    }
    // with threshold 2 only repeated items survive: 214536502 (x2, sessions 1
    // and 6), 214662742 (x2, session 2), 214832672 (x2, click+buy),
    // 214537888 (x2, click+buy)
    let (_, vocab2) = preprocess(raw, 2, 20).unwrap();
    let mut kept: Vec<&str> = vocab2
        .items()
        .iter()
        .skip(1)
        .map(String::as_str)
        .collect();
    kept.sort_unstable();
    assert_eq!(
        kept,
        vec!["214536502", "214537888", "214662742", "214832672"]
    );
}

#[test]
fn calendar_matches_chrono_on_random_timestamps() {
    let mut rng = ChaCha8Rng::seed_from_u64(412);
    for _ in 0..1000 {
        // 1970..2100
        let ts: i64 = rng.random_range(0..4_102_444_800);
        let fields = encode_time(ts, 0).unwrap();
        let oracle = Utc.timestamp_opt(ts, 0).unwrap();
        assert_eq!(fields.month, oracle.month0(), "ts={ts}");
        assert_eq!(fields.hour, oracle.hour(), "ts={ts}");
        assert_eq!(
            fields.day_of_week,
            oracle.weekday().num_days_from_monday(),
            "ts={ts}"
        );
    }
    // negative timestamps (pre-1970) as well
    for _ in 0..200 {
        let ts: i64 = -rng.random_range(0..1_000_000_000);
        let fields = encode_time(ts, 0).unwrap();
        let oracle = Utc.timestamp_opt(ts, 0).unwrap();
        assert_eq!(fields.month, oracle.month0(), "ts={ts}");
        assert_eq!(fields.hour, oracle.hour(), "ts={ts}");
        assert_eq!(fields.day_of_week, oracle.weekday().num_days_from_monday());
    }
}

#[test]
fn fixed_offset_matches_chrono_fixed_zone() {
    use chrono::FixedOffset;
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for &offset in &[3600, -5 * 3600, 5 * 3600 + 1800] {
        let zone = FixedOffset::east_opt(offset).unwrap();
        for _ in 0..200 {
            let ts: i64 = rng.random_range(0..4_000_000_000);
            let fields = encode_time(ts, offset).unwrap();
            let oracle = zone.timestamp_opt(ts, 0).unwrap();
            assert_eq!(fields.month, oracle.month0());
            assert_eq!(fields.hour, oracle.hour());
            assert_eq!(fields.day_of_week, oracle.weekday().num_days_from_monday());
        }
    }
}

#[test]
fn splits_are_disjoint_and_exhaustive_on_fixture() {
    use ctxrec_core::data::{split_raw, SplitStrategy};
    let (raw, _) = load_yoochoose(
        &fixture("yoochoose-clicks.dat"),
        Some(&fixture("yoochoose-buys.dat")),
    )
    .unwrap();
    let cleaned = clean_sessions(raw, 20);
    let n = cleaned.len();
    let ids: std::collections::HashSet<u64> = cleaned.iter().map(|s| s.id).collect();
    let split = split_raw(
        cleaned,
        SplitStrategy::IdHoldout {
            valid_frac: 0.2,
            test_frac: 0.2,
        },
        4,
    )
    .unwrap();
    assert_eq!(split.train.len() + split.valid.len() + split.test.len(), n);
    let mut seen = std::collections::HashSet::new();
    for s in split.train.iter().chain(&split.valid).chain(&split.test) {
        assert!(seen.insert(s.id), "session {} appears twice", s.id);
    }
    assert_eq!(seen, ids);
}
