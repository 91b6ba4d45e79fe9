//! Canonical encoded-corpus format: one CSV line per event
//! (`session_id,ts_ms,item_idx,event_type_idx`) plus a JSON vocabulary
//! sidecar at `<corpus>.vocab.json`.

use std::collections::BTreeMap;
use std::io::{BufRead, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Corpus, DataError, Event, Session, Vocab};

#[derive(Serialize, Deserialize)]
struct VocabSidecar {
    items: Vec<String>,
    oov_index: Option<u32>,
    event_types: Vec<String>,
}

pub fn sidecar_path(corpus_path: &Path) -> PathBuf {
    let mut name = corpus_path.file_name().unwrap_or_default().to_os_string();
    name.push(".vocab.json");
    corpus_path.with_file_name(name)
}

pub fn write_corpus(path: &Path, corpus: &Corpus) -> Result<(), DataError> {
    let io_err = |source| DataError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut out = BufWriter::new(std::fs::File::create(path).map_err(io_err)?);
    for session in &corpus.sessions {
        for event in &session.events {
            writeln!(
                out,
                "{},{},{},{}",
                session.id, event.ts_ms, event.item, event.event_type
            )
            .map_err(io_err)?;
        }
    }
    out.flush().map_err(io_err)?;

    let sidecar = VocabSidecar {
        items: corpus.vocab.items().to_vec(),
        oov_index: corpus.vocab.oov_index(),
        event_types: corpus.event_types.clone(),
    };
    let sidecar_file = sidecar_path(path);
    let json = serde_json::to_string_pretty(&sidecar).expect("vocab sidecar serializes");
    std::fs::write(&sidecar_file, json).map_err(|source| DataError::Io {
        path: sidecar_file.display().to_string(),
        source,
    })?;
    Ok(())
}

pub fn read_corpus(path: &Path) -> Result<Corpus, DataError> {
    let io_err = |source| DataError::Io {
        path: path.display().to_string(),
        source,
    };
    let sidecar_file = sidecar_path(path);
    let sidecar: VocabSidecar = serde_json::from_str(
        &std::fs::read_to_string(&sidecar_file).map_err(|source| DataError::Io {
            path: sidecar_file.display().to_string(),
            source,
        })?,
    )
    .map_err(|e| DataError::Parse {
        path: sidecar_file.display().to_string(),
        line: 0,
        message: e.to_string(),
    })?;
    let vocab = Vocab::from_parts(sidecar.items, sidecar.oov_index);

    let file = std::fs::File::open(path).map_err(io_err)?;
    let reader = std::io::BufReader::new(file);
    let mut by_session: BTreeMap<u64, Vec<Event>> = BTreeMap::new();
    for (line_no, line) in reader.lines().enumerate() {
        let line = line.map_err(io_err)?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| DataError::Parse {
            path: path.display().to_string(),
            line: line_no + 1,
            message,
        };
        let mut fields = line.splitn(4, ',');
        let mut next = |name: &str| {
            fields
                .next()
                .ok_or_else(|| parse_err(format!("missing field `{name}`")))
        };
        let session_id: u64 = next("session_id")?
            .trim()
            .parse()
            .map_err(|e| parse_err(format!("session_id: {e}")))?;
        let ts_ms: i64 = next("ts_ms")?
            .trim()
            .parse()
            .map_err(|e| parse_err(format!("ts_ms: {e}")))?;
        let item: u32 = next("item_idx")?
            .trim()
            .parse()
            .map_err(|e| parse_err(format!("item_idx: {e}")))?;
        let event_type: u32 = next("event_type_idx")?
            .trim()
            .parse()
            .map_err(|e| parse_err(format!("event_type_idx: {e}")))?;
        if item as usize >= vocab.len() {
            return Err(parse_err(format!(
                "item index {item} outside vocabulary of {}",
                vocab.len()
            )));
        }
        if event_type as usize >= sidecar.event_types.len() {
            return Err(parse_err(format!("event type index {event_type} unknown")));
        }
        by_session.entry(session_id).or_default().push(Event {
            ts_ms,
            item,
            event_type,
        });
    }
    if by_session.is_empty() {
        return Err(DataError::Empty { stage: "read" });
    }
    let sessions = by_session
        .into_iter()
        .map(|(id, events)| Session { id, events })
        .collect();
    Ok(Corpus {
        sessions,
        vocab,
        event_types: sidecar.event_types,
    })
}
