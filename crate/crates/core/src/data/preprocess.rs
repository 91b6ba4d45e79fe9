//! Session cleaning, vocabulary construction, and encoding.

use std::collections::HashMap;

use super::{DataError, Event, RawSession, Session, Vocab, OOV_TOKEN};

/// Sort events within each session, keep the `max_len` latest, and drop
/// sessions shorter than two events. Idempotent.
pub fn clean_sessions(mut sessions: Vec<RawSession>, max_len: usize) -> Vec<RawSession> {
    for session in &mut sessions {
        // Tie-break equal timestamps by event type so a purchase sorts after
        // the view of the same moment.
        session
            .events
            .sort_by_key(|e| (e.ts_ms, e.event_type));
        if session.events.len() > max_len {
            session.events.drain(..session.events.len() - max_len);
        }
    }
    sessions.retain(|s| s.events.len() >= 2);
    sessions.sort_by_key(|s| s.id);
    sessions
}

/// Count item occurrences and retain ids seen at least `min_count` times.
/// Everything else maps to the reserved out-of-vocabulary index 0.
pub fn build_vocab(sessions: &[RawSession], min_count: usize) -> Vocab {
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for session in sessions {
        for event in &session.events {
            *counts.entry(event.item.as_str()).or_default() += 1;
        }
    }
    let mut retained: Vec<&str> = counts
        .iter()
        .filter(|(_, &c)| c >= min_count)
        .map(|(&item, _)| item)
        .collect();
    retained.sort_unstable();
    let mut items = Vec::with_capacity(retained.len() + 1);
    items.push(OOV_TOKEN.to_string());
    items.extend(retained.into_iter().map(String::from));
    Vocab::from_parts(items, Some(0))
}

/// Encode cleaned sessions against a fixed vocabulary.
pub fn encode_sessions(sessions: &[RawSession], vocab: &Vocab) -> Result<Vec<Session>, DataError> {
    sessions
        .iter()
        .map(|session| {
            let events = session
                .events
                .iter()
                .map(|e| {
                    let item = vocab.encode(&e.item).ok_or_else(|| DataError::UnknownItem {
                        item: e.item.clone(),
                    })?;
                    Ok(Event {
                        ts_ms: e.ts_ms,
                        item,
                        event_type: e.event_type,
                    })
                })
                .collect::<Result<Vec<_>, DataError>>()?;
            Ok(Session {
                id: session.id,
                events,
            })
        })
        .collect()
}

/// Full preprocessing: clean, build the vocabulary on these sessions, encode.
/// When holding out evaluation splits, build the vocabulary from the training
/// split alone and run `clean_sessions` + `encode_sessions` on the rest.
pub fn preprocess(
    sessions: Vec<RawSession>,
    min_count: usize,
    max_len: usize,
) -> Result<(Vec<Session>, Vocab), DataError> {
    let cleaned = clean_sessions(sessions, max_len);
    if cleaned.is_empty() {
        return Err(DataError::Empty {
            stage: "preprocessing",
        });
    }
    let vocab = build_vocab(&cleaned, min_count);
    let encoded = encode_sessions(&cleaned, &vocab)?;
    Ok((encoded, vocab))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::RawEvent;

    fn raw(id: u64, items: &[(&str, i64)]) -> RawSession {
        RawSession {
            id,
            events: items
                .iter()
                .map(|(item, ts)| RawEvent {
                    ts_ms: *ts,
                    item: item.to_string(),
                    event_type: 0,
                })
                .collect(),
        }
    }

    #[test]
    fn truncates_to_latest_events() {
        let events: Vec<(String, i64)> = (0..25).map(|i| (format!("i{i}"), i as i64)).collect();
        let refs: Vec<(&str, i64)> = events.iter().map(|(s, t)| (s.as_str(), *t)).collect();
        let cleaned = clean_sessions(vec![raw(1, &refs)], 20);
        assert_eq!(cleaned[0].events.len(), 20);
        assert_eq!(cleaned[0].events[0].item, "i5");
        assert_eq!(cleaned[0].events[19].item, "i24");
    }

    #[test]
    fn drops_single_event_sessions() {
        let cleaned = clean_sessions(vec![raw(1, &[("a", 0)]), raw(2, &[("a", 0), ("b", 1)])], 20);
        assert_eq!(cleaned.len(), 1);
        assert_eq!(cleaned[0].id, 2);
    }

    #[test]
    fn clean_is_idempotent() {
        let sessions = vec![
            raw(3, &[("c", 5), ("a", 1), ("b", 3)]),
            raw(1, &[("x", 2), ("y", 1)]),
        ];
        let once = clean_sessions(sessions, 2);
        let twice = clean_sessions(once.clone(), 2);
        assert_eq!(once, twice);
    }

    #[test]
    fn below_threshold_items_map_to_oov() {
        // q appears 4 times, one short of the threshold; a appears 5 times
        let sessions = vec![
            raw(1, &[("q", 0), ("a", 1), ("q", 2), ("a", 3)]),
            raw(2, &[("q", 0), ("a", 1), ("q", 2), ("a", 3), ("a", 4)]),
        ];
        let (encoded, vocab) = preprocess(sessions, 5, 20).unwrap();
        assert_eq!(vocab.oov_index(), Some(0));
        assert!(vocab.contains("a"));
        assert!(!vocab.contains("q"));
        let a = vocab.encode("a").unwrap();
        assert_eq!(encoded[0].events[0].item, 0); // q -> oov
        assert_eq!(encoded[0].events[1].item, a);
    }

    #[test]
    fn vocab_round_trip_for_retained() {
        let sessions = vec![raw(1, &[("a", 0), ("b", 1), ("a", 2), ("b", 3), ("a", 4)])];
        let vocab = build_vocab(&clean_sessions(sessions, 20), 2);
        for item in ["a", "b"] {
            let idx = vocab.encode(item).unwrap();
            assert_eq!(vocab.decode(idx), Some(item));
        }
    }
}
