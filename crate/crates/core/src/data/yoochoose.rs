//! Loader for the RecSys 2015 clickstream layout: a clicks file
//! (`session_id,timestamp,item_id,category`) and an optional buys file
//! (`session_id,timestamp,item_id,price,quantity`), timestamps ISO-8601.

use std::collections::HashMap;
use std::path::Path;

use super::{DataError, RawEvent, RawSession};
use crate::context::days_from_civil;

pub const EVENT_TYPE_VIEW: u32 = 0;
pub const EVENT_TYPE_SALE: u32 = 1;

/// Event type names in index order for this layout.
pub fn yoochoose_event_types() -> Vec<String> {
    vec!["view".into(), "sale".into()]
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct LoadReport {
    pub rows_read: usize,
    pub rows_skipped: usize,
}

/// Load and merge clicks and buys into per-session event lists ordered by
/// timestamp (purchases after views at equal timestamps). Malformed rows are
/// counted and skipped; more than 1% of them is a hard error.
pub fn load_yoochoose(
    clicks_path: &Path,
    buys_path: Option<&Path>,
) -> Result<(Vec<RawSession>, LoadReport), DataError> {
    let mut sessions: HashMap<u64, Vec<RawEvent>> = HashMap::new();
    let mut report = LoadReport::default();
    read_file(clicks_path, EVENT_TYPE_VIEW, 4, &mut sessions, &mut report)?;
    if let Some(buys) = buys_path {
        read_file(buys, EVENT_TYPE_SALE, 5, &mut sessions, &mut report)?;
    }
    let mut out: Vec<RawSession> = sessions
        .into_iter()
        .map(|(id, mut events)| {
            events.sort_by_key(|e| (e.ts_ms, e.event_type));
            RawSession { id, events }
        })
        .collect();
    out.sort_by_key(|s| s.id);
    Ok((out, report))
}

fn read_file(
    path: &Path,
    event_type: u32,
    min_fields: usize,
    sessions: &mut HashMap<u64, Vec<RawEvent>>,
    report: &mut LoadReport,
) -> Result<(), DataError> {
    let io_err = |source| DataError::Io {
        path: path.display().to_string(),
        source,
    };
    let file = std::fs::File::open(path).map_err(io_err)?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(file);
    let mut bad = 0usize;
    let mut total = 0usize;
    for record in reader.records() {
        total += 1;
        let Ok(record) = record else {
            bad += 1;
            continue;
        };
        let parsed = (|| {
            if record.len() < min_fields {
                return None;
            }
            let session_id: u64 = record.get(0)?.trim().parse().ok()?;
            let ts_ms = parse_iso8601_ms(record.get(1)?.trim())?;
            let item = record.get(2)?.trim();
            if item.is_empty() {
                return None;
            }
            Some((session_id, ts_ms, item.to_string()))
        })();
        match parsed {
            Some((session_id, ts_ms, item)) => {
                sessions.entry(session_id).or_default().push(RawEvent {
                    ts_ms,
                    item,
                    event_type,
                });
            }
            None => bad += 1,
        }
    }
    report.rows_read += total;
    report.rows_skipped += bad;
    if total > 0 && bad * 100 > total {
        return Err(DataError::MalformedRate {
            path: path.display().to_string(),
            rows_bad: bad,
            rows_total: total,
        });
    }
    Ok(())
}

/// Parse `YYYY-MM-DDTHH:MM:SS[.fff]Z` into epoch milliseconds.
pub(crate) fn parse_iso8601_ms(s: &str) -> Option<i64> {
    let s = s.strip_suffix('Z').unwrap_or(s);
    let (date, time) = s.split_once('T')?;
    let mut date_parts = date.splitn(3, '-');
    let year: i64 = date_parts.next()?.parse().ok()?;
    let month: u32 = date_parts.next()?.parse().ok()?;
    let day: u32 = date_parts.next()?.parse().ok()?;
    if !(1..=12).contains(&month) || !(1..=31).contains(&day) {
        return None;
    }
    let (hms, frac) = match time.split_once('.') {
        Some((hms, frac)) => (hms, frac),
        None => (time, ""),
    };
    let mut time_parts = hms.splitn(3, ':');
    let hour: i64 = time_parts.next()?.parse().ok()?;
    let minute: i64 = time_parts.next()?.parse().ok()?;
    let second: i64 = time_parts.next()?.parse().ok()?;
    if !(0..24).contains(&hour) || !(0..60).contains(&minute) || !(0..60).contains(&second) {
        return None;
    }
    let millis = if frac.is_empty() {
        0
    } else {
        let digits: String = frac.chars().take(3).collect();
        if digits.chars().any(|c| !c.is_ascii_digit()) {
            return None;
        }
        let val: i64 = digits.parse().ok()?;
        val * 10i64.pow(3 - digits.len() as u32)
    };
    let days = days_from_civil(year, month, day);
    Some(((days * 86_400 + hour * 3600 + minute * 60 + second) * 1000) + millis)
}
