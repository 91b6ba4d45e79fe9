pub mod evaluate;
pub mod generate;
pub mod predict;
pub mod train;

use std::path::Path;

use anyhow::{anyhow, Context, Result};
use ctxrec_core::data::{
    self, clean_sessions, encode_sessions, read_corpus, split_raw, Corpus, Session,
};

use crate::config::{DataFormat, RunConfig};

/// Errors carry the exit code the process should end with: 2 for
/// usage/config problems, 3 for numeric failures, 1 otherwise.
pub enum CliError {
    Usage(anyhow::Error),
    Numeric(String),
    Other(anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Numeric(_) => 3,
            CliError::Other(_) => 1,
        }
    }

    pub fn message(&self) -> String {
        match self {
            CliError::Usage(e) | CliError::Other(e) => format!("{e:#}"),
            CliError::Numeric(m) => format!("numeric failure: {m}"),
        }
    }
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        CliError::Other(e)
    }
}

pub fn usage(e: impl Into<anyhow::Error>) -> CliError {
    CliError::Usage(e.into())
}

/// Corpus splits ready for training.
pub struct LoadedData {
    pub train: Corpus,
    pub valid: Vec<Session>,
    pub test: Vec<Session>,
}

/// Keep the latest `max_len` events and drop sessions shorter than two;
/// canonical corpora are usually preprocessed already, so this is a cheap
/// idempotent guard.
fn clean_encoded(mut sessions: Vec<Session>, max_len: usize) -> Vec<Session> {
    for session in &mut sessions {
        if session.events.len() > max_len {
            session.events.drain(..session.events.len() - max_len);
        }
    }
    sessions.retain(|s| s.events.len() >= 2);
    sessions
}

pub fn load_for_training(config: &RunConfig) -> Result<LoadedData, CliError> {
    match config.data.format {
        DataFormat::Canonical => {
            let path = config.data.corpus.as_ref().unwrap();
            let corpus = read_corpus(path).map_err(usage)?;
            let sessions = clean_encoded(corpus.sessions, config.data.max_len);
            if sessions.is_empty() {
                return Err(usage(anyhow!(
                    "{}: no sessions with at least two events",
                    path.display()
                )));
            }
            let (train_sessions, valid, test) = match config.split_strategy() {
                None => (sessions, Vec::new(), Vec::new()),
                Some((strategy, seed)) => {
                    let split =
                        data::split_encoded(sessions, strategy, seed).map_err(usage)?;
                    (split.train, split.valid, split.test)
                }
            };
            let mut corpus = Corpus {
                sessions: train_sessions,
                vocab: corpus.vocab,
                event_types: corpus.event_types,
            };
            if config.data.cartesian_item_event {
                if !valid.is_empty() || !test.is_empty() {
                    return Err(usage(anyhow!(
                        "cartesian-item-event training supports split strategy \"none\" only"
                    )));
                }
                corpus = data::cartesian_item_event(&corpus);
            }
            Ok(LoadedData {
                train: corpus,
                valid,
                test,
            })
        }
        DataFormat::Yoochoose => {
            let clicks = config.data.clicks.as_ref().unwrap();
            let (raw, report) =
                data::load_yoochoose(clicks, config.data.buys.as_deref()).map_err(usage)?;
            if report.rows_skipped > 0 {
                eprintln!(
                    "warning: skipped {} of {} malformed rows",
                    report.rows_skipped, report.rows_read
                );
            }
            let cleaned = clean_sessions(raw, config.data.max_len);
            let (train_raw, valid_raw, test_raw) = match config.split_strategy() {
                None => (cleaned, Vec::new(), Vec::new()),
                Some((strategy, seed)) => {
                    let split = split_raw(cleaned, strategy, seed).map_err(usage)?;
                    (split.train, split.valid, split.test)
                }
            };
            // Vocabulary from the training split only; held-out items fall
            // into the out-of-vocabulary slot.
            let vocab = data::build_vocab(&train_raw, config.data.min_count);
            let encode = |part: &[data::RawSession]| encode_sessions(part, &vocab);
            let train_sessions = encode(&train_raw).map_err(usage)?;
            if train_sessions.is_empty() {
                return Err(usage(anyhow!("training split is empty")));
            }
            let valid = encode(&valid_raw).map_err(usage)?;
            let test = encode(&test_raw).map_err(usage)?;
            let mut corpus = Corpus {
                sessions: train_sessions,
                vocab,
                event_types: data::yoochoose_event_types(),
            };
            if config.data.cartesian_item_event {
                if !valid.is_empty() || !test.is_empty() {
                    return Err(usage(anyhow!(
                        "cartesian-item-event training supports split strategy \"none\" only"
                    )));
                }
                corpus = data::cartesian_item_event(&corpus);
            }
            Ok(LoadedData {
                train: corpus,
                valid,
                test,
            })
        }
    }
}

/// Load an evaluation corpus and require it to match the checkpoint's
/// vocabulary and event types exactly (canonical) or be encodable through
/// them (raw clickstream).
pub fn load_for_evaluation(
    format: DataFormat,
    corpus_path: Option<&Path>,
    clicks: Option<&Path>,
    buys: Option<&Path>,
    max_len: usize,
    vocab: &ctxrec_core::data::Vocab,
    event_types: &[String],
) -> Result<Vec<Session>, CliError> {
    match format {
        DataFormat::Canonical => {
            let path = corpus_path
                .ok_or_else(|| usage(anyhow!("canonical evaluation needs a corpus path")))?;
            let corpus = read_corpus(path).map_err(usage)?;
            if corpus.vocab.items() != vocab.items() {
                return Err(usage(anyhow!(
                    "{}: corpus vocabulary ({} items) does not match the checkpoint ({} items)",
                    path.display(),
                    corpus.vocab.len(),
                    vocab.len()
                )));
            }
            if corpus.event_types != event_types {
                return Err(usage(anyhow!(
                    "{}: corpus event types {:?} do not match the checkpoint {:?}",
                    path.display(),
                    corpus.event_types,
                    event_types
                )));
            }
            Ok(clean_encoded(corpus.sessions, max_len))
        }
        DataFormat::Yoochoose => {
            let clicks =
                clicks.ok_or_else(|| usage(anyhow!("yoochoose evaluation needs --clicks")))?;
            let (raw, _) = data::load_yoochoose(clicks, buys).map_err(usage)?;
            if event_types != data::yoochoose_event_types().as_slice() {
                return Err(usage(anyhow!(
                    "checkpoint was not trained on view/sale event types"
                )));
            }
            let cleaned = clean_sessions(raw, max_len);
            encode_sessions(&cleaned, vocab).map_err(usage)
        }
    }
}

pub fn create_run_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir)
        .with_context(|| format!("cannot create run directory {}", dir.display()))
        .map_err(CliError::Other)
}
