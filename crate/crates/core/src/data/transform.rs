//! Corpus transforms.

use std::collections::HashMap;

use super::{Corpus, Event, Session, Vocab};

/// Relabel items as (item, event type) pairs, so a plain recurrent model sees
/// one vocabulary entry per combination. The Cartesian blow-up makes each
/// pair rare; this configuration is known to optimize poorly and ships for
/// completeness only, with pair-level evaluation.
pub fn cartesian_item_event(corpus: &Corpus) -> Corpus {
    let mut pair_index: HashMap<(u32, u32), u32> = HashMap::new();
    let mut items: Vec<String> = Vec::new();
    let sessions = corpus
        .sessions
        .iter()
        .map(|session| Session {
            id: session.id,
            events: session
                .events
                .iter()
                .map(|e| {
                    let next_id = pair_index.len() as u32;
                    let item = *pair_index.entry((e.item, e.event_type)).or_insert_with(|| {
                        let ext = corpus.vocab.decode(e.item).unwrap_or("?");
                        let etype = &corpus.event_types[e.event_type as usize];
                        items.push(format!("{ext}~{etype}"));
                        next_id
                    });
                    Event {
                        ts_ms: e.ts_ms,
                        item,
                        event_type: e.event_type,
                    }
                })
                .collect(),
        })
        .collect();
    Corpus {
        sessions,
        vocab: Vocab::from_parts(items, None),
        event_types: corpus.event_types.clone(),
    }
}
