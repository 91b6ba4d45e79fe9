//! Recall@K evaluation with session-level bootstrap confidence intervals,
//! per-projection breakdowns, and uplift comparison between reports.

use std::collections::BTreeMap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::context::{bucket_time_delta, ContextSchema};
use crate::data::Session;
use crate::kernel::{ParamSet, Real};
use crate::model::{forward_sequence, rank_of_target, ModelConfig, ModelError};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no prediction records to evaluate")]
    Empty,
    #[error("reports not comparable: {0}")]
    Mismatch(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// One scored prediction event, with the labels every projection needs.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub session_id: u64,
    /// Position of the target event within its session (first target is 1).
    pub step: usize,
    pub target: u32,
    /// 1-based rank of the target item in the model's ordering.
    pub rank: usize,
    /// Event type of the target event.
    pub event_type: u32,
    /// True when the target item does not occur earlier in the session.
    pub is_new: bool,
    /// Log2 bucket of the seconds since the previous event.
    pub time_gap_bucket: u32,
    /// Number of events preceding the target.
    pub prefix_len: usize,
}

impl PredictionRecord {
    pub fn hit(&self, k: usize) -> bool {
        self.rank <= k
    }
}

/// Score every prediction event of every session under a frozen model.
pub fn score_sessions<S: Real>(
    sessions: &[Session],
    params: &ParamSet<S>,
    config: &ModelConfig,
    schema: &ContextSchema,
) -> Result<Vec<PredictionRecord>, EvalError> {
    let mut records = Vec::new();
    for session in sessions {
        let forward = forward_sequence(session, params, config, schema)?;
        for (idx, logits) in forward.step_logits.iter().enumerate() {
            let t = idx + 1;
            let target = &session.events[t];
            let gap_secs = (target.ts_ms - session.events[t - 1].ts_ms).max(0) as u64 / 1000;
            records.push(PredictionRecord {
                session_id: session.id,
                step: t,
                target: target.item,
                rank: rank_of_target(logits, target.item),
                event_type: target.event_type,
                is_new: !session.events[..t].iter().any(|e| e.item == target.item),
                time_gap_bucket: bucket_time_delta(gap_secs),
                prefix_len: t,
            });
        }
    }
    Ok(records)
}

/// Proportion of prediction events whose target lands in the top K, averaged
/// over events (not sessions).
pub fn recall_at_k(records: &[PredictionRecord], k: usize) -> Result<f64, EvalError> {
    if records.is_empty() {
        return Err(EvalError::Empty);
    }
    let hits = records.iter().filter(|r| r.hit(k)).count();
    Ok(hits as f64 / records.len() as f64)
}

/// Settings for report generation.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EvalOptions {
    pub k: usize,
    pub resamples: usize,
    /// Two-sided confidence level, e.g. 0.95.
    pub level: f64,
    pub seed: u64,
    /// Lower boundaries of the sequence-length projection buckets.
    pub seq_len_buckets: Vec<usize>,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            k: 10,
            resamples: 30,
            level: 0.95,
            seed: 0,
            seq_len_buckets: vec![1, 2, 3, 4, 5, 10, 20],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProjectionAxis {
    EventType,
    NewHistorical,
    TimeGap,
    SeqLength,
}

pub const ALL_PROJECTIONS: [ProjectionAxis; 4] = [
    ProjectionAxis::EventType,
    ProjectionAxis::NewHistorical,
    ProjectionAxis::TimeGap,
    ProjectionAxis::SeqLength,
];

impl ProjectionAxis {
    pub fn name(self) -> &'static str {
        match self {
            ProjectionAxis::EventType => "event-type",
            ProjectionAxis::NewHistorical => "new-historical",
            ProjectionAxis::TimeGap => "time-gap",
            ProjectionAxis::SeqLength => "seq-length",
        }
    }
}

/// Recall point estimate with its bootstrap interval and the raw resample
/// values (kept so paired uplift intervals can be formed later).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MetricCell {
    pub recall: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub samples: Vec<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BucketRow {
    pub label: String,
    pub count: usize,
    /// Share of all prediction events falling in this bucket.
    pub volume: f64,
    pub metric: MetricCell,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EvalReport {
    pub k: usize,
    pub num_records: usize,
    pub num_sessions: usize,
    pub resamples: usize,
    pub level: f64,
    pub seed: u64,
    /// Hash of the scored session ids and record counts; uplift requires
    /// matching fingerprints.
    pub fingerprint: u64,
    pub overall: MetricCell,
    pub projections: BTreeMap<String, Vec<BucketRow>>,
}

/// Groups record indices by session, in first-appearance order.
fn session_groups(records: &[PredictionRecord]) -> Vec<(u64, Vec<usize>)> {
    let mut order: Vec<u64> = Vec::new();
    let mut groups: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
    for (i, r) in records.iter().enumerate() {
        let entry = groups.entry(r.session_id).or_insert_with(|| {
            order.push(r.session_id);
            Vec::new()
        });
        entry.push(i);
    }
    order
        .into_iter()
        .map(|id| {
            let idxs = groups.remove(&id).unwrap();
            (id, idxs)
        })
        .collect()
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    if sorted.len() == 1 {
        return sorted[0];
    }
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] * (1.0 - frac) + sorted[hi] * frac
}

fn interval(samples: &[f64], level: f64) -> (f64, f64) {
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let alpha = (1.0 - level) / 2.0;
    (percentile(&sorted, alpha), percentile(&sorted, 1.0 - alpha))
}

/// Session-level bootstrap of Recall@K: sessions are resampled with
/// replacement to respect within-session correlation, then recall is
/// recomputed per resample. Percentile interval.
pub fn bootstrap_ci(
    records: &[PredictionRecord],
    k: usize,
    resamples: usize,
    level: f64,
    seed: u64,
) -> Result<(f64, f64), EvalError> {
    let cell = bootstrap_cell(records, k, resamples, level, seed)?;
    Ok((cell.ci_low, cell.ci_high))
}

fn bootstrap_cell(
    records: &[PredictionRecord],
    k: usize,
    resamples: usize,
    level: f64,
    seed: u64,
) -> Result<MetricCell, EvalError> {
    let recall = recall_at_k(records, k)?;
    let groups = session_groups(records);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut samples = Vec::with_capacity(resamples);
    for _ in 0..resamples {
        let mut hits = 0usize;
        let mut total = 0usize;
        for _ in 0..groups.len() {
            let (_, idxs) = &groups[rng.random_range(0..groups.len())];
            total += idxs.len();
            hits += idxs.iter().filter(|&&i| records[i].hit(k)).count();
        }
        samples.push(hits as f64 / total as f64);
    }
    let (ci_low, ci_high) = interval(&samples, level);
    Ok(MetricCell {
        recall,
        ci_low,
        ci_high,
        samples,
    })
}

fn seq_len_label(prefix_len: usize, boundaries: &[usize]) -> String {
    let mut idx = 0;
    for (i, &b) in boundaries.iter().enumerate() {
        if prefix_len >= b {
            idx = i;
        }
    }
    let lo = boundaries[idx];
    match boundaries.get(idx + 1) {
        Some(&hi) if hi == lo + 1 => format!("{lo}"),
        Some(&hi) => format!("{lo}-{}", hi - 1),
        None => format!("{lo}+"),
    }
}

fn bucket_key(
    record: &PredictionRecord,
    axis: ProjectionAxis,
    event_types: &[String],
    seq_buckets: &[usize],
) -> String {
    match axis {
        ProjectionAxis::EventType => event_types
            .get(record.event_type as usize)
            .cloned()
            .unwrap_or_else(|| format!("type{}", record.event_type)),
        ProjectionAxis::NewHistorical => {
            if record.is_new {
                "new".into()
            } else {
                "historical".into()
            }
        }
        ProjectionAxis::TimeGap => format!("gap{:02}", record.time_gap_bucket),
        ProjectionAxis::SeqLength => seq_len_label(record.prefix_len, seq_buckets),
    }
}

/// Partition records along one axis and compute per-bucket recall, CI, and
/// relative volume. The partition is exhaustive and disjoint by construction.
pub fn project(
    records: &[PredictionRecord],
    axis: ProjectionAxis,
    event_types: &[String],
    opts: &EvalOptions,
) -> Result<Vec<BucketRow>, EvalError> {
    if records.is_empty() {
        return Err(EvalError::Empty);
    }
    let mut buckets: BTreeMap<String, Vec<PredictionRecord>> = BTreeMap::new();
    for record in records {
        buckets
            .entry(bucket_key(record, axis, event_types, &opts.seq_len_buckets))
            .or_default()
            .push(record.clone());
    }
    let total = records.len() as f64;
    buckets
        .into_iter()
        .map(|(label, bucket_records)| {
            let metric = bootstrap_cell(
                &bucket_records,
                opts.k,
                opts.resamples,
                opts.level,
                opts.seed,
            )?;
            Ok(BucketRow {
                label,
                count: bucket_records.len(),
                volume: bucket_records.len() as f64 / total,
                metric,
            })
        })
        .collect()
}

fn fingerprint(records: &[PredictionRecord]) -> u64 {
    // FNV-1a over (session id, record count) pairs; stable across runs.
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    let mut mix = |value: u64| {
        for byte in value.to_le_bytes() {
            hash ^= byte as u64;
            hash = hash.wrapping_mul(0x1000_0000_01b3);
        }
    };
    for (id, idxs) in session_groups(records) {
        mix(id);
        mix(idxs.len() as u64);
    }
    hash
}

/// Full report: overall metric plus all four projections.
pub fn build_report(
    records: &[PredictionRecord],
    event_types: &[String],
    opts: &EvalOptions,
) -> Result<EvalReport, EvalError> {
    if records.is_empty() {
        return Err(EvalError::Empty);
    }
    let overall = bootstrap_cell(records, opts.k, opts.resamples, opts.level, opts.seed)?;
    let mut projections = BTreeMap::new();
    for axis in ALL_PROJECTIONS {
        projections.insert(
            axis.name().to_string(),
            project(records, axis, event_types, opts)?,
        );
    }
    Ok(EvalReport {
        k: opts.k,
        num_records: records.len(),
        num_sessions: session_groups(records).len(),
        resamples: opts.resamples,
        level: opts.level,
        seed: opts.seed,
        fingerprint: fingerprint(records),
        overall,
        projections,
    })
}

/// Score sessions and build the report in one call.
pub fn evaluate<S: Real>(
    sessions: &[Session],
    params: &ParamSet<S>,
    config: &ModelConfig,
    schema: &ContextSchema,
    event_types: &[String],
    opts: &EvalOptions,
) -> Result<(Vec<PredictionRecord>, EvalReport), EvalError> {
    let records = score_sessions(sessions, params, config, schema)?;
    let report = build_report(&records, event_types, opts)?;
    Ok((records, report))
}

/// Percent uplift of `a` over baseline `b`.
pub fn uplift_pct(a: f64, b: f64) -> f64 {
    100.0 * (a - b) / b
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct UpliftCell {
    pub candidate: f64,
    pub baseline: f64,
    pub pct: f64,
    /// Percentile interval of the per-resample recall difference.
    pub diff_ci_low: f64,
    pub diff_ci_high: f64,
    /// True when the difference interval excludes zero.
    pub significant: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct UpliftReport {
    pub k: usize,
    pub overall: UpliftCell,
    /// Per-projection cells for bucket labels present in both reports.
    pub projections: BTreeMap<String, Vec<(String, UpliftCell)>>,
}

fn uplift_cell(a: &MetricCell, b: &MetricCell, level: f64) -> UpliftCell {
    let diffs: Vec<f64> = a
        .samples
        .iter()
        .zip(&b.samples)
        .map(|(x, y)| x - y)
        .collect();
    let (lo, hi) = interval(&diffs, level);
    UpliftCell {
        candidate: a.recall,
        baseline: b.recall,
        pct: uplift_pct(a.recall, b.recall),
        diff_ci_low: lo,
        diff_ci_high: hi,
        significant: lo > 0.0 || hi < 0.0,
    }
}

/// Compare a candidate report against a baseline computed on the identical
/// test set (same fingerprint, K, and bootstrap settings). Because both
/// bootstraps were seeded identically over the same sessions, per-resample
/// differences are paired.
pub fn uplift(candidate: &EvalReport, baseline: &EvalReport) -> Result<UpliftReport, EvalError> {
    if candidate.k != baseline.k {
        return Err(EvalError::Mismatch(format!(
            "K differs: {} vs {}",
            candidate.k, baseline.k
        )));
    }
    if candidate.fingerprint != baseline.fingerprint {
        return Err(EvalError::Mismatch(
            "reports were built on different test sets".into(),
        ));
    }
    if candidate.seed != baseline.seed || candidate.resamples != baseline.resamples {
        return Err(EvalError::Mismatch(
            "bootstrap settings differ; intervals are not paired".into(),
        ));
    }
    let overall = uplift_cell(&candidate.overall, &baseline.overall, candidate.level);
    let mut projections = BTreeMap::new();
    for (axis, cand_rows) in &candidate.projections {
        let Some(base_rows) = baseline.projections.get(axis) else {
            continue;
        };
        let mut cells = Vec::new();
        for row in cand_rows {
            if let Some(base) = base_rows.iter().find(|b| b.label == row.label) {
                cells.push((
                    row.label.clone(),
                    uplift_cell(&row.metric, &base.metric, candidate.level),
                ));
            }
        }
        projections.insert(axis.clone(), cells);
    }
    Ok(UpliftReport {
        k: candidate.k,
        overall,
        projections,
    })
}

/// Human-readable table mirroring the usual recall-comparison layout.
pub fn render_report(report: &EvalReport) -> String {
    use std::fmt::Write;
    let mut out = String::new();
    let _ = writeln!(
        out,
        "Recall@{}: {:.4}  [{:.4}, {:.4}]  ({} events, {} sessions, {} bootstraps)",
        report.k,
        report.overall.recall,
        report.overall.ci_low,
        report.overall.ci_high,
        report.num_records,
        report.num_sessions,
        report.resamples,
    );
    for (axis, rows) in &report.projections {
        let _ = writeln!(out, "\n[{axis}]");
        let _ = writeln!(
            out,
            "{:<14} {:>10} {:>8} {:>22}",
            "bucket", "recall", "volume", "95% CI"
        );
        for row in rows {
            let _ = writeln!(
                out,
                "{:<14} {:>10.4} {:>7.1}% {:>10.4}, {:>9.4}",
                row.label,
                row.metric.recall,
                row.volume * 100.0,
                row.metric.ci_low,
                row.metric.ci_high,
            );
        }
    }
    out
}

pub fn render_uplift(up: &UpliftReport) -> String {
    use std::fmt::Write;
    let mut out = String::new();
    let flag = |c: &UpliftCell| if c.significant { "*" } else { " " };
    let _ = writeln!(
        out,
        "Recall@{}: {:.4} vs baseline {:.4}  ({:+.1}%){}  diff CI [{:.4}, {:.4}]",
        up.k,
        up.overall.candidate,
        up.overall.baseline,
        up.overall.pct,
        flag(&up.overall),
        up.overall.diff_ci_low,
        up.overall.diff_ci_high,
    );
    for (axis, cells) in &up.projections {
        let _ = writeln!(out, "\n[{axis}]");
        for (label, cell) in cells {
            let _ = writeln!(
                out,
                "{:<14} {:>8.4} vs {:>8.4}  ({:+.1}%){}",
                label,
                cell.candidate,
                cell.baseline,
                cell.pct,
                flag(cell),
            );
        }
    }
    out
}

/// Per-projection plot data: tab-separated (x, y, ci_low, ci_high, volume).
pub fn write_plot_data(dir: &std::path::Path, report: &EvalReport) -> std::io::Result<()> {
    use std::io::Write;
    std::fs::create_dir_all(dir)?;
    for (axis, rows) in &report.projections {
        let mut file = std::fs::File::create(dir.join(format!("{axis}.tsv")))?;
        writeln!(file, "x\ty\tci_low\tci_high\tvolume")?;
        for row in rows {
            writeln!(
                file,
                "{}\t{}\t{}\t{}\t{}",
                row.label, row.metric.recall, row.metric.ci_low, row.metric.ci_high, row.volume
            )?;
        }
    }
    Ok(())
}
