//! Corpus ingestion, preprocessing, splitting, the canonical on-disk corpus
//! format, and the synthetic sequence generator used as a verification
//! oracle.

mod canonical;
mod preprocess;
mod split;
mod synthetic;
mod transform;
mod yoochoose;

use std::collections::HashMap;

use thiserror::Error;

pub use canonical::{read_corpus, write_corpus};
pub use preprocess::{build_vocab, clean_sessions, encode_sessions, preprocess};
pub use split::{split_encoded, split_raw, SplitResult, SplitStrategy};
pub use synthetic::{generate_synthetic, SyntheticSpec, TransitionTable};
pub use transform::cartesian_item_event;
pub use yoochoose::{
    load_yoochoose, yoochoose_event_types, LoadReport, EVENT_TYPE_SALE, EVENT_TYPE_VIEW,
};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}: {rows_bad} of {rows_total} rows malformed (over 1% threshold)")]
    MalformedRate {
        path: String,
        rows_bad: usize,
        rows_total: usize,
    },
    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },
    #[error("corpus is empty after {stage}")]
    Empty { stage: &'static str },
    #[error("split produced an empty {part} partition")]
    EmptySplit { part: &'static str },
    #[error("unknown item `{item}` and the vocabulary has no out-of-vocabulary slot")]
    UnknownItem { item: String },
    #[error("unknown event type `{name}` (known: {known:?})")]
    UnknownEventType { name: String, known: Vec<String> },
    #[error("invalid synthetic spec: {0}")]
    BadSpec(String),
}

/// One user-item interaction, already encoded against a vocabulary.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Event {
    pub ts_ms: i64,
    pub item: u32,
    pub event_type: u32,
}

/// Ordered event sequence; the unit of training and evaluation.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Session {
    pub id: u64,
    pub events: Vec<Event>,
}

impl Session {
    pub fn start_ts_ms(&self) -> i64 {
        self.events.first().map_or(0, |e| e.ts_ms)
    }
}

/// An interaction as parsed from raw input, item still an external id.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RawEvent {
    pub ts_ms: i64,
    pub item: String,
    pub event_type: u32,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RawSession {
    pub id: u64,
    pub events: Vec<RawEvent>,
}

impl RawSession {
    pub fn start_ts_ms(&self) -> i64 {
        self.events.first().map_or(0, |e| e.ts_ms)
    }
}

/// External-id to dense-index map. When built with a min-occurrence
/// threshold, index 0 is the reserved out-of-vocabulary id; identity
/// vocabularies (synthetic corpora) have no such slot.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    items: Vec<String>,
    oov: Option<u32>,
    lookup: HashMap<String, u32>,
}

pub const OOV_TOKEN: &str = "<oov>";

impl Vocab {
    pub fn from_parts(items: Vec<String>, oov: Option<u32>) -> Self {
        let lookup = items
            .iter()
            .enumerate()
            .map(|(i, s)| (s.clone(), i as u32))
            .collect();
        Vocab { items, oov, lookup }
    }

    /// Identity vocabulary over `n` dense items named "0".."n-1".
    pub fn identity(n: u32) -> Self {
        Self::from_parts((0..n).map(|i| i.to_string()).collect(), None)
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn oov_index(&self) -> Option<u32> {
        self.oov
    }

    pub fn items(&self) -> &[String] {
        &self.items
    }

    /// Dense index for an external id; unknown ids fall back to the
    /// out-of-vocabulary index when one exists.
    pub fn encode(&self, item: &str) -> Option<u32> {
        self.lookup.get(item).copied().or(self.oov)
    }

    /// True when the id is present without falling back to the OOV slot.
    pub fn contains(&self, item: &str) -> bool {
        self.lookup.contains_key(item)
    }

    pub fn decode(&self, index: u32) -> Option<&str> {
        self.items.get(index as usize).map(String::as_str)
    }
}

/// Encoded sessions plus everything needed to interpret them.
#[derive(Clone, Debug)]
pub struct Corpus {
    pub sessions: Vec<Session>,
    pub vocab: Vocab,
    pub event_types: Vec<String>,
}

impl Corpus {
    pub fn num_events(&self) -> usize {
        self.sessions.iter().map(|s| s.events.len()).sum()
    }

    /// Prediction targets: every event except each session's first.
    pub fn num_targets(&self) -> usize {
        self.sessions
            .iter()
            .map(|s| s.events.len().saturating_sub(1))
            .sum()
    }
}
