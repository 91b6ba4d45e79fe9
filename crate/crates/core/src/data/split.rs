//! Train/validation/test partitioning.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{DataError, RawSession, Session};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SplitStrategy {
    /// Consecutive periods by session start time: train, then validation,
    /// then test, with the last two spanning the given durations.
    TimeHoldout { valid_secs: i64, test_secs: i64 },
    /// Randomly held-out session ids for validation and test.
    IdHoldout { valid_frac: f64, test_frac: f64 },
}

#[derive(Clone, Debug)]
pub struct SplitResult<T> {
    pub train: Vec<T>,
    pub valid: Vec<T>,
    pub test: Vec<T>,
}

pub fn split_raw(
    sessions: Vec<RawSession>,
    strategy: SplitStrategy,
    seed: u64,
) -> Result<SplitResult<RawSession>, DataError> {
    split_by(sessions, strategy, seed, RawSession::start_ts_ms)
}

pub fn split_encoded(
    sessions: Vec<Session>,
    strategy: SplitStrategy,
    seed: u64,
) -> Result<SplitResult<Session>, DataError> {
    split_by(sessions, strategy, seed, Session::start_ts_ms)
}

fn split_by<T>(
    sessions: Vec<T>,
    strategy: SplitStrategy,
    seed: u64,
    start_ts_ms: impl Fn(&T) -> i64,
) -> Result<SplitResult<T>, DataError> {
    if sessions.is_empty() {
        return Err(DataError::Empty { stage: "split" });
    }
    let mut result = match strategy {
        SplitStrategy::TimeHoldout {
            valid_secs,
            test_secs,
        } => {
            let end = sessions.iter().map(&start_ts_ms).max().unwrap() + 1;
            let test_from = end - test_secs * 1000;
            let valid_from = test_from - valid_secs * 1000;
            let mut result = SplitResult {
                train: Vec::new(),
                valid: Vec::new(),
                test: Vec::new(),
            };
            for session in sessions {
                let ts = start_ts_ms(&session);
                if ts >= test_from {
                    result.test.push(session);
                } else if ts >= valid_from {
                    result.valid.push(session);
                } else {
                    result.train.push(session);
                }
            }
            result
        }
        SplitStrategy::IdHoldout {
            valid_frac,
            test_frac,
        } => {
            let n = sessions.len();
            let n_test = (test_frac * n as f64).round() as usize;
            let n_valid = (valid_frac * n as f64).round() as usize;
            let mut order: Vec<usize> = (0..n).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            order.shuffle(&mut rng);
            let mut picked: Vec<u8> = vec![0; n];
            for &i in order.iter().take(n_test) {
                picked[i] = 2;
            }
            for &i in order.iter().skip(n_test).take(n_valid) {
                picked[i] = 1;
            }
            let mut result = SplitResult {
                train: Vec::new(),
                valid: Vec::new(),
                test: Vec::new(),
            };
            for (session, mark) in sessions.into_iter().zip(picked) {
                match mark {
                    2 => result.test.push(session),
                    1 => result.valid.push(session),
                    _ => result.train.push(session),
                }
            }
            result
        }
    };
    for (part, bucket) in [
        ("train", &mut result.train),
        ("valid", &mut result.valid),
        ("test", &mut result.test),
    ] {
        if bucket.is_empty() {
            return Err(DataError::EmptySplit { part });
        }
    }
    Ok(result)
}
