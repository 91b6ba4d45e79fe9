//! Discrete contextual features: calendar fields, log-scale time-gap
//! buckets, and event types, one-hot encoded and concatenated into a single
//! context vector per event.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Number of time-delta buckets before the optional first-event bucket.
pub const TIME_DELTA_BUCKETS: u32 = 21;

#[derive(Debug, Error)]
pub enum ContextError {
    #[error("timestamp {0} outside supported calendar range")]
    TimestampOutOfRange(i64),
    #[error("feature index {index} out of bounds for block {block} (size {size})")]
    IndexOutOfBounds {
        block: &'static str,
        index: u32,
        size: u32,
    },
}

/// Which feature a block encodes. Order in the schema is fixed and travels
/// with the checkpoint so inference cannot drift from training.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeatureKind {
    Month,
    Hour,
    DayOfWeek,
    TimeDelta,
    EventType,
}

/// Toggles and conventions that determine the schema layout.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContextSchemaConfig {
    pub month: bool,
    pub hour: bool,
    pub day_of_week: bool,
    pub time_delta: bool,
    pub event_type: bool,
    /// Give the first event of a session its own 22nd delta bucket instead of
    /// folding it into bucket 0.
    pub first_event_bucket: bool,
    /// Fixed offset applied before calendar decomposition, seconds east of UTC.
    pub utc_offset_secs: i32,
}

impl Default for ContextSchemaConfig {
    fn default() -> Self {
        ContextSchemaConfig {
            month: true,
            hour: true,
            day_of_week: true,
            time_delta: true,
            event_type: true,
            first_event_bucket: false,
            utc_offset_secs: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Block {
    pub kind: FeatureKind,
    pub size: u32,
    /// Offset of this block inside the concatenated vector.
    pub offset: u32,
}

/// Ordered feature encoders; total dimension is the sum of block sizes.
/// The event-type block reserves its last index for out-of-vocabulary types.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContextSchema {
    blocks: Vec<Block>,
    event_types: Vec<String>,
    config: ContextSchemaConfig,
    total_dim: u32,
}

impl ContextSchema {
    pub fn new(config: ContextSchemaConfig, event_types: Vec<String>) -> Self {
        let delta_size = if config.first_event_bucket {
            TIME_DELTA_BUCKETS + 1
        } else {
            TIME_DELTA_BUCKETS
        };
        let mut blocks = Vec::new();
        let mut offset = 0u32;
        let mut push = |kind, size: u32, blocks: &mut Vec<Block>| {
            blocks.push(Block { kind, size, offset });
            offset += size;
        };
        if config.month {
            push(FeatureKind::Month, 12, &mut blocks);
        }
        if config.hour {
            push(FeatureKind::Hour, 24, &mut blocks);
        }
        if config.day_of_week {
            push(FeatureKind::DayOfWeek, 7, &mut blocks);
        }
        if config.time_delta {
            push(FeatureKind::TimeDelta, delta_size, &mut blocks);
        }
        if config.event_type {
            // +1 reserves the out-of-vocabulary slot.
            push(FeatureKind::EventType, event_types.len() as u32 + 1, &mut blocks);
        }
        ContextSchema {
            blocks,
            event_types,
            config,
            total_dim: offset,
        }
    }

    /// Schema with every feature enabled at UTC, the default configuration.
    pub fn full(event_types: Vec<String>) -> Self {
        Self::new(ContextSchemaConfig::default(), event_types)
    }

    /// Schema carrying only the event-type block.
    pub fn event_type_only(event_types: Vec<String>) -> Self {
        Self::new(
            ContextSchemaConfig {
                month: false,
                hour: false,
                day_of_week: false,
                time_delta: false,
                event_type: true,
                ..ContextSchemaConfig::default()
            },
            event_types,
        )
    }

    /// Dimension of the concatenated one-hot vector (V_c).
    pub fn dim(&self) -> u32 {
        self.total_dim
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn num_blocks(&self) -> usize {
        self.blocks.len()
    }

    pub fn config(&self) -> &ContextSchemaConfig {
        &self.config
    }

    pub fn event_types(&self) -> &[String] {
        &self.event_types
    }

    /// Stable index for an event type; unknown types map to the reserved
    /// out-of-vocabulary slot after the known ones.
    pub fn encode_event_type(&self, name: &str) -> u32 {
        self.event_types
            .iter()
            .position(|t| t == name)
            .unwrap_or(self.event_types.len()) as u32
    }

    /// Encode one event given the previous event's timestamp (milliseconds).
    pub fn build_context(
        &self,
        ts_ms: i64,
        prev_ts_ms: Option<i64>,
        event_type_idx: u32,
    ) -> Result<ContextVector, ContextError> {
        let mut active = Vec::with_capacity(self.blocks.len());
        let mut time_fields: Option<TimeFields> = None;
        for block in &self.blocks {
            let local = match block.kind {
                FeatureKind::Month | FeatureKind::Hour | FeatureKind::DayOfWeek => {
                    let fields = match &time_fields {
                        Some(f) => *f,
                        None => {
                            let f = encode_time(
                                ts_ms.div_euclid(1000),
                                self.config.utc_offset_secs,
                            )?;
                            time_fields = Some(f);
                            f
                        }
                    };
                    match block.kind {
                        FeatureKind::Month => fields.month,
                        FeatureKind::Hour => fields.hour,
                        _ => fields.day_of_week,
                    }
                }
                FeatureKind::TimeDelta => match prev_ts_ms {
                    Some(prev) => {
                        let delta_s = (ts_ms - prev).max(0) as u64 / 1000;
                        bucket_time_delta(delta_s)
                    }
                    // First event of a sequence: bucket 0, or the dedicated
                    // extra bucket when configured.
                    None if self.config.first_event_bucket => TIME_DELTA_BUCKETS,
                    None => 0,
                },
                FeatureKind::EventType => event_type_idx,
            };
            if local >= block.size {
                return Err(ContextError::IndexOutOfBounds {
                    block: block.kind.name(),
                    index: local,
                    size: block.size,
                });
            }
            active.push(block.offset + local);
        }
        Ok(ContextVector { active })
    }

    /// Recover per-block local indices from a vector built against this
    /// schema.
    pub fn decode(&self, ctx: &ContextVector) -> Vec<(FeatureKind, u32)> {
        self.blocks
            .iter()
            .zip(&ctx.active)
            .map(|(block, &global)| (block.kind, global - block.offset))
            .collect()
    }
}

impl FeatureKind {
    fn name(self) -> &'static str {
        match self {
            FeatureKind::Month => "month",
            FeatureKind::Hour => "hour",
            FeatureKind::DayOfWeek => "day-of-week",
            FeatureKind::TimeDelta => "time-delta",
            FeatureKind::EventType => "event-type",
        }
    }
}

/// Sparse context vector: exactly one active index per enabled block, stored
/// in schema order. Densification happens only inside the kernel.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ContextVector {
    active: Vec<u32>,
}

impl ContextVector {
    pub fn active(&self) -> &[u32] {
        &self.active
    }
}

/// Log2-scale time-gap bucket: min(floor(log2(delta+1)), 20). Total over all
/// deltas, monotone, and saturating.
pub fn bucket_time_delta(delta_seconds: u64) -> u32 {
    let shifted = delta_seconds.saturating_add(1);
    // floor(log2(n)) for n >= 1
    let bucket = 63 - shifted.leading_zeros();
    bucket.min(TIME_DELTA_BUCKETS - 1)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TimeFields {
    /// 0 = January.
    pub month: u32,
    pub hour: u32,
    /// 0 = Monday.
    pub day_of_week: u32,
}

/// Calendar decomposition of an epoch timestamp at a fixed offset.
pub fn encode_time(epoch_secs: i64, utc_offset_secs: i32) -> Result<TimeFields, ContextError> {
    let local = epoch_secs
        .checked_add(utc_offset_secs as i64)
        .ok_or(ContextError::TimestampOutOfRange(epoch_secs))?;
    let days = local.div_euclid(86_400);
    let secs_of_day = local.rem_euclid(86_400);
    let (year, month, _day) = civil_from_days(days);
    if !(1..=9999).contains(&year) {
        return Err(ContextError::TimestampOutOfRange(epoch_secs));
    }
    Ok(TimeFields {
        month: month - 1,
        hour: (secs_of_day / 3600) as u32,
        // 1970-01-01 (day 0) was a Thursday; Monday = 0.
        day_of_week: (days + 3).rem_euclid(7) as u32,
    })
}

/// Proleptic Gregorian date for a day count since 1970-01-01.
pub(crate) fn civil_from_days(days: i64) -> (i64, u32, u32) {
    let z = days + 719_468;
    let era = z.div_euclid(146_097);
    let doe = z.rem_euclid(146_097);
    let yoe = (doe - doe / 1460 + doe / 36_524 - doe / 146_096) / 365;
    let year = yoe + era * 400;
    let doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
    let mp = (5 * doy + 2) / 153;
    let day = (doy - (153 * mp + 2) / 5 + 1) as u32;
    let month = if mp < 10 { mp + 3 } else { mp - 9 } as u32;
    (if month <= 2 { year + 1 } else { year }, month, day)
}

/// Day count since 1970-01-01 for a proleptic Gregorian date.
pub(crate) fn days_from_civil(year: i64, month: u32, day: u32) -> i64 {
    let y = if month <= 2 { year - 1 } else { year };
    let era = y.div_euclid(400);
    let yoe = y - era * 400;
    let mp = if month > 2 { month - 3 } else { month + 9 } as i64;
    let doy = (153 * mp + 2) / 5 + day as i64 - 1;
    let doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
    era * 146_097 + doe - 719_468
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn delta_bucket_examples() {
        assert_eq!(bucket_time_delta(0), 0);
        assert_eq!(bucket_time_delta(1), 1);
        assert_eq!(bucket_time_delta(1024), 10); // floor(log2(1025)) = 10
        let ten_years = 10 * 365 * 24 * 3600;
        assert_eq!(bucket_time_delta(ten_years), 20);
        assert_eq!(bucket_time_delta(u64::MAX), 20);
    }

    #[test]
    fn delta_bucket_monotone_and_capped() {
        let mut prev = 0;
        for delta in 0..(1u64 << 21) {
            let b = bucket_time_delta(delta);
            assert!(b >= prev && b <= 20, "delta={delta}");
            prev = b;
        }
    }

    #[test]
    fn epoch_zero_fields() {
        let f = encode_time(0, 0).unwrap();
        assert_eq!(f.month, 0);
        assert_eq!(f.hour, 0);
        assert_eq!(f.day_of_week, 3); // Thursday
    }

    #[test]
    fn last_second_of_day() {
        let f = encode_time(86_399, 0).unwrap();
        assert_eq!(f.hour, 23);
        assert_eq!(f.day_of_week, 3);
    }

    #[test]
    fn weekly_periodicity() {
        let a = encode_time(1_400_000_000, 0).unwrap();
        let b = encode_time(1_400_000_000 + 7 * 86_400, 0).unwrap();
        assert_eq!(a.day_of_week, b.day_of_week);
    }

    #[test]
    fn offset_shifts_hour() {
        let f = encode_time(0, 3600).unwrap();
        assert_eq!(f.hour, 1);
    }

    #[test]
    fn event_type_oov() {
        let schema = ContextSchema::full(vec!["view".into(), "sale".into()]);
        assert_eq!(schema.encode_event_type("view"), 0);
        assert_eq!(schema.encode_event_type("sale"), 1);
        assert_eq!(schema.encode_event_type("basket"), 2);
    }

    #[test]
    fn full_schema_dimension() {
        // 12 + 24 + 7 + 21 + (2 types + oov)
        let schema = ContextSchema::full(vec!["view".into(), "sale".into()]);
        assert_eq!(schema.dim(), 12 + 24 + 7 + 21 + 3);
        assert_eq!(schema.num_blocks(), 5);
    }

    #[test]
    fn first_event_gets_bucket_zero_by_default() {
        let schema = ContextSchema::full(vec!["view".into()]);
        let ctx = schema.build_context(1_000_000_000_000, None, 0).unwrap();
        let decoded = schema.decode(&ctx);
        let (_, delta) = decoded
            .iter()
            .find(|(k, _)| *k == FeatureKind::TimeDelta)
            .unwrap();
        assert_eq!(*delta, 0);
    }

    #[test]
    fn first_event_bucket_flag_uses_extra_bucket() {
        let schema = ContextSchema::new(
            ContextSchemaConfig {
                first_event_bucket: true,
                ..ContextSchemaConfig::default()
            },
            vec!["view".into()],
        );
        assert_eq!(schema.dim(), 12 + 24 + 7 + 22 + 2);
        let ctx = schema.build_context(1_000_000_000_000, None, 0).unwrap();
        let decoded = schema.decode(&ctx);
        let (_, delta) = decoded
            .iter()
            .find(|(k, _)| *k == FeatureKind::TimeDelta)
            .unwrap();
        assert_eq!(*delta, TIME_DELTA_BUCKETS);
    }

    #[test]
    fn one_active_index_per_block() {
        let schema = ContextSchema::full(vec!["view".into(), "sale".into()]);
        let ctx = schema
            .build_context(1_396_859_469_277, Some(1_396_859_000_000), 1)
            .unwrap();
        assert_eq!(ctx.active().len(), schema.num_blocks());
        // strictly increasing across block offsets
        for (block, &idx) in schema.blocks().iter().zip(ctx.active()) {
            assert!(idx >= block.offset && idx < block.offset + block.size);
        }
    }

    #[test]
    fn civil_round_trip_sample() {
        for &days in &[-1_000_000, -1, 0, 1, 365, 10_957, 1_000_000] {
            let (y, m, d) = civil_from_days(days);
            assert_eq!(days_from_civil(y, m, d), days);
        }
    }
}
