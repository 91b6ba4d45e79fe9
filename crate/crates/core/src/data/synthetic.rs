//! Context-conditioned Markov sequence generator.
//!
//! Sessions are sampled from a first-order chain whose next-item distribution
//! depends jointly on the previous item and the event type of the upcoming
//! event. Because the generating process is known, the best achievable
//! Recall@K is computable in closed form and serves as a ceiling oracle for
//! trained models.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Corpus, DataError, Event, Session, Vocab};

/// Next-item distributions indexed by (previous item, event type of the next
/// event). Rows are sparse (item, probability) lists.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(try_from = "TableRepr", into = "TableRepr")]
pub struct TransitionTable {
    vocab_size: u32,
    n_event_types: u32,
    /// Row for (item i, type e) lives at i * n_event_types + e.
    rows: Vec<Vec<(u32, f64)>>,
}

/// Serialized form: either explicit rows or a generator description.
#[derive(Serialize, Deserialize)]
struct TableRepr {
    vocab_size: u32,
    n_event_types: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    rows: Option<Vec<Vec<(u32, f64)>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    generator: Option<GeneratorRepr>,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", rename_all_fields = "kebab-case")]
enum GeneratorRepr {
    Uniform,
    SeededSparse { support: u32, decay: f64, seed: u64 },
}

impl TryFrom<TableRepr> for TransitionTable {
    type Error = String;

    fn try_from(repr: TableRepr) -> Result<Self, String> {
        let table = match (repr.rows, repr.generator) {
            (Some(rows), None) => {
                TransitionTable::from_rows(repr.vocab_size, repr.n_event_types, rows)
                    .map_err(|e| e.to_string())?
            }
            (None, Some(GeneratorRepr::Uniform)) => {
                TransitionTable::uniform(repr.vocab_size, repr.n_event_types)
            }
            (None, Some(GeneratorRepr::SeededSparse { support, decay, seed })) => {
                TransitionTable::seeded_sparse(
                    repr.vocab_size,
                    repr.n_event_types,
                    support,
                    decay,
                    seed,
                )
            }
            _ => return Err("transition table needs exactly one of `rows` or `generator`".into()),
        };
        table.validate().map_err(|e| e.to_string())?;
        Ok(table)
    }
}

impl From<TransitionTable> for TableRepr {
    fn from(table: TransitionTable) -> Self {
        TableRepr {
            vocab_size: table.vocab_size,
            n_event_types: table.n_event_types,
            rows: Some(table.rows),
            generator: None,
        }
    }
}

impl TransitionTable {
    pub fn from_rows(
        vocab_size: u32,
        n_event_types: u32,
        rows: Vec<Vec<(u32, f64)>>,
    ) -> Result<Self, DataError> {
        if rows.len() != (vocab_size * n_event_types) as usize {
            return Err(DataError::BadSpec(format!(
                "expected {} transition rows, got {}",
                vocab_size * n_event_types,
                rows.len()
            )));
        }
        let table = TransitionTable {
            vocab_size,
            n_event_types,
            rows,
        };
        table.validate()?;
        Ok(table)
    }

    /// Uniform next-item distribution regardless of context.
    pub fn uniform(vocab_size: u32, n_event_types: u32) -> Self {
        let p = 1.0 / vocab_size as f64;
        let row: Vec<(u32, f64)> = (0..vocab_size).map(|j| (j, p)).collect();
        TransitionTable {
            vocab_size,
            n_event_types,
            rows: vec![row; (vocab_size * n_event_types) as usize],
        }
    }

    /// Deterministic chain: (item, type) -> single next item.
    pub fn deterministic(
        vocab_size: u32,
        n_event_types: u32,
        next: impl Fn(u32, u32) -> u32,
    ) -> Self {
        let mut rows = Vec::with_capacity((vocab_size * n_event_types) as usize);
        for item in 0..vocab_size {
            for etype in 0..n_event_types {
                rows.push(vec![(next(item, etype), 1.0)]);
            }
        }
        TransitionTable {
            vocab_size,
            n_event_types,
            rows,
        }
    }

    /// Random sparse rows: each (item, type) gets `support` candidate next
    /// items with geometrically decaying probabilities. Different event types
    /// draw different supports, which is what makes context informative.
    pub fn seeded_sparse(
        vocab_size: u32,
        n_event_types: u32,
        support: u32,
        decay: f64,
        seed: u64,
    ) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let support = support.min(vocab_size);
        let mut rows = Vec::with_capacity((vocab_size * n_event_types) as usize);
        let mut weights = Vec::with_capacity(support as usize);
        let mut total = 0.0;
        for i in 0..support {
            let w = decay.powi(i as i32);
            weights.push(w);
            total += w;
        }
        for w in &mut weights {
            *w /= total;
        }
        for _item in 0..vocab_size {
            for _etype in 0..n_event_types {
                let mut candidates: Vec<u32> = (0..vocab_size).collect();
                // partial Fisher-Yates: draw `support` distinct items
                for i in 0..support as usize {
                    let j = rng.random_range(i..candidates.len());
                    candidates.swap(i, j);
                }
                let row = candidates[..support as usize]
                    .iter()
                    .zip(&weights)
                    .map(|(&item, &w)| (item, w))
                    .collect();
                rows.push(row);
            }
        }
        TransitionTable {
            vocab_size,
            n_event_types,
            rows,
        }
    }

    pub fn row(&self, item: u32, etype: u32) -> &[(u32, f64)] {
        &self.rows[(item * self.n_event_types + etype) as usize]
    }

    fn validate(&self) -> Result<(), DataError> {
        if self.rows.len() != (self.vocab_size * self.n_event_types) as usize {
            return Err(DataError::BadSpec(format!(
                "expected {} transition rows, got {}",
                self.vocab_size * self.n_event_types,
                self.rows.len()
            )));
        }
        for (idx, row) in self.rows.iter().enumerate() {
            if row.is_empty() {
                return Err(DataError::BadSpec(format!("transition row {idx} is empty")));
            }
            let sum: f64 = row.iter().map(|(_, p)| p).sum();
            if (sum - 1.0).abs() > 1e-9 {
                return Err(DataError::BadSpec(format!(
                    "transition row {idx} sums to {sum}, expected 1"
                )));
            }
            for &(item, p) in row {
                if item >= self.vocab_size || p < 0.0 {
                    return Err(DataError::BadSpec(format!(
                        "transition row {idx} has invalid entry ({item}, {p})"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Mean over items of the average pairwise symmetrized KL divergence
    /// between the per-event-type rows. Zero when context carries no signal.
    pub fn context_divergence(&self) -> f64 {
        if self.n_event_types < 2 {
            return 0.0;
        }
        let v = self.vocab_size as usize;
        let mut total = 0.0;
        let mut pairs = 0usize;
        let mut dense_a = vec![0.0; v];
        let mut dense_b = vec![0.0; v];
        for item in 0..self.vocab_size {
            for e1 in 0..self.n_event_types {
                for e2 in (e1 + 1)..self.n_event_types {
                    densify(self.row(item, e1), &mut dense_a);
                    densify(self.row(item, e2), &mut dense_b);
                    total += sym_kl(&dense_a, &dense_b);
                    pairs += 1;
                }
            }
        }
        total / pairs as f64
    }

    /// Sum of the K largest probabilities of the (item, type) row.
    fn top_k_mass(&self, item: u32, etype: u32, k: usize) -> f64 {
        let mut probs: Vec<f64> = self.row(item, etype).iter().map(|&(_, p)| p).collect();
        probs.sort_by(|a, b| b.partial_cmp(a).unwrap());
        let explicit: f64 = probs.iter().take(k).sum();
        // Items absent from a sparse row have probability zero and never
        // enter the top K while any listed mass remains.
        if probs.len() >= k {
            explicit
        } else {
            explicit.min(1.0)
        }
    }
}

fn densify(row: &[(u32, f64)], out: &mut [f64]) {
    out.fill(0.0);
    for &(item, p) in row {
        out[item as usize] = p;
    }
}

fn sym_kl(a: &[f64], b: &[f64]) -> f64 {
    const EPS: f64 = 1e-12;
    let mut kl_ab = 0.0;
    let mut kl_ba = 0.0;
    for (&pa, &pb) in a.iter().zip(b) {
        let pa = pa.max(EPS);
        let pb = pb.max(EPS);
        kl_ab += pa * (pa / pb).ln();
        kl_ba += pb * (pb / pa).ln();
    }
    (kl_ab + kl_ba) / 2.0
}

/// Full specification of the generative process.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub vocab_size: u32,
    pub event_types: Vec<String>,
    /// Marginal distribution over event types, independent per event.
    pub event_type_probs: Vec<f64>,
    pub transitions: TransitionTable,
    /// Distribution over session lengths (length, probability).
    pub length_probs: Vec<(u32, f64)>,
    /// Time gap in seconds between consecutive events, per event type.
    pub gap_secs_by_type: Vec<Vec<(u64, f64)>>,
    /// Session start timestamps are spread uniformly over this window.
    pub start_ts_ms: i64,
    pub start_window_secs: u64,
    pub num_sessions: u32,
    pub seed: u64,
    /// Minimum required context divergence; 0 disables the check.
    pub min_context_divergence: f64,
}

impl SyntheticSpec {
    /// Spec with uniform transitions, handy for chance-level calibration.
    pub fn uniform(vocab_size: u32, n_event_types: u32, num_sessions: u32, seed: u64) -> Self {
        SyntheticSpec {
            vocab_size,
            event_types: (0..n_event_types).map(|i| format!("type{i}")).collect(),
            event_type_probs: vec![1.0 / n_event_types as f64; n_event_types as usize],
            transitions: TransitionTable::uniform(vocab_size, n_event_types),
            length_probs: (3..=12).map(|l| (l, 0.1)).collect(),
            gap_secs_by_type: vec![vec![(5, 0.5), (60, 0.3), (3600, 0.2)]; n_event_types as usize],
            start_ts_ms: 1_396_310_400_000, // 2014-04-01T00:00:00Z
            start_window_secs: 14 * 86_400,
            num_sessions,
            seed,
            min_context_divergence: 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), DataError> {
        let e = self.event_types.len();
        if e == 0 || self.vocab_size == 0 {
            return Err(DataError::BadSpec("empty vocab or event types".into()));
        }
        check_dist("event_type_probs", &self.event_type_probs)?;
        if self.event_type_probs.len() != e {
            return Err(DataError::BadSpec(format!(
                "{} event types but {} marginal probabilities",
                e,
                self.event_type_probs.len()
            )));
        }
        if self.gap_secs_by_type.len() != e {
            return Err(DataError::BadSpec(
                "gap_secs_by_type must have one distribution per event type".into(),
            ));
        }
        for gaps in &self.gap_secs_by_type {
            check_dist("gap_secs", &gaps.iter().map(|&(_, p)| p).collect::<Vec<_>>())?;
        }
        let len_probs: Vec<f64> = self.length_probs.iter().map(|&(_, p)| p).collect();
        check_dist("length_probs", &len_probs)?;
        if self.length_probs.iter().any(|&(l, _)| l < 2) {
            return Err(DataError::BadSpec(
                "session lengths below 2 cannot produce targets".into(),
            ));
        }
        self.transitions.validate()?;
        if self.transitions.vocab_size != self.vocab_size
            || self.transitions.n_event_types as usize != e
        {
            return Err(DataError::BadSpec(
                "transition table dimensions disagree with spec".into(),
            ));
        }
        if self.min_context_divergence > 0.0 {
            let div = self.transitions.context_divergence();
            if div <= self.min_context_divergence {
                return Err(DataError::BadSpec(format!(
                    "context divergence {div:.4} below required {}",
                    self.min_context_divergence
                )));
            }
        }
        Ok(())
    }

    /// Best achievable Recall@K under this process, for a predictor that
    /// observes the previous item and the upcoming event's type. Exact:
    /// propagates the item-visitation distribution through the chain and
    /// weights each prediction position by the probability a session reaches
    /// it.
    pub fn bayes_recall_at_k(&self, k: usize) -> f64 {
        let v = self.vocab_size as usize;
        let e = self.event_types.len();
        let max_len = self
            .length_probs
            .iter()
            .map(|&(l, _)| l)
            .max()
            .unwrap_or(2) as usize;
        // top-K mass per (item, type), weighted by the type marginal
        let mut expected_topk = vec![0.0; v];
        for item in 0..v as u32 {
            for etype in 0..e as u32 {
                expected_topk[item as usize] += self.event_type_probs[etype as usize]
                    * self.transitions.top_k_mass(item, etype, k);
            }
        }
        // visitation distribution over the previous item, starting uniform
        let mut visit = vec![1.0 / v as f64; v];
        let mut next = vec![0.0; v];
        let mut numer = 0.0;
        let mut denom = 0.0;
        for t in 1..max_len {
            // weight: probability a session has a target at position t
            let w: f64 = self
                .length_probs
                .iter()
                .filter(|&&(l, _)| l as usize > t)
                .map(|&(_, p)| p)
                .sum();
            if w > 0.0 {
                let hit: f64 = visit
                    .iter()
                    .zip(&expected_topk)
                    .map(|(&pi, &tk)| pi * tk)
                    .sum();
                numer += w * hit;
                denom += w;
            }
            next.fill(0.0);
            for (item, &pi) in visit.iter().enumerate() {
                if pi == 0.0 {
                    continue;
                }
                for etype in 0..e as u32 {
                    let pe = self.event_type_probs[etype as usize];
                    for &(j, p) in self.transitions.row(item as u32, etype) {
                        next[j as usize] += pi * pe * p;
                    }
                }
            }
            std::mem::swap(&mut visit, &mut next);
        }
        numer / denom
    }
}

fn check_dist(name: &str, probs: &[f64]) -> Result<(), DataError> {
    if probs.is_empty() {
        return Err(DataError::BadSpec(format!("{name} is empty")));
    }
    if probs.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
        return Err(DataError::BadSpec(format!("{name} has out-of-range entries")));
    }
    let sum: f64 = probs.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(DataError::BadSpec(format!("{name} sums to {sum}, expected 1")));
    }
    Ok(())
}

fn sample_categorical<R: Rng>(rng: &mut R, probs: impl Iterator<Item = f64> + Clone) -> usize {
    let x: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, p) in probs.clone().enumerate() {
        acc += p;
        last = i;
        if x < acc {
            return i;
        }
    }
    last
}

/// Sample a corpus from the spec. Deterministic for a given spec.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Corpus, DataError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut sessions = Vec::with_capacity(spec.num_sessions as usize);
    for id in 0..spec.num_sessions {
        let len_idx = sample_categorical(&mut rng, spec.length_probs.iter().map(|&(_, p)| p));
        let length = spec.length_probs[len_idx].0;
        let mut ts_ms =
            spec.start_ts_ms + (rng.random_range(0..=spec.start_window_secs) * 1000) as i64;
        let mut events = Vec::with_capacity(length as usize);
        let mut prev_item: Option<u32> = None;
        for _ in 0..length {
            let etype =
                sample_categorical(&mut rng, spec.event_type_probs.iter().copied()) as u32;
            let item = match prev_item {
                None => rng.random_range(0..spec.vocab_size),
                Some(prev) => {
                    let row = spec.transitions.row(prev, etype);
                    let idx = sample_categorical(&mut rng, row.iter().map(|&(_, p)| p));
                    row[idx].0
                }
            };
            if prev_item.is_some() {
                let gaps = &spec.gap_secs_by_type[etype as usize];
                let g = sample_categorical(&mut rng, gaps.iter().map(|&(_, p)| p));
                ts_ms += (gaps[g].0 * 1000) as i64;
            }
            events.push(Event {
                ts_ms,
                item,
                event_type: etype,
            });
            prev_item = Some(item);
        }
        sessions.push(Session {
            id: id as u64,
            events,
        });
    }
    Ok(Corpus {
        sessions,
        vocab: Vocab::identity(spec.vocab_size),
        event_types: spec.event_types.clone(),
    })
}
