//! Epoch shuffling and padded batch assembly.

use std::rc::Rc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::context::{ContextSchema, ContextVector};
use crate::data::Session;
use crate::model::{encode_session_steps, ModelError, SequenceBatch};

/// Endless stream of padded mini-batches. Sessions are reshuffled at each
/// epoch boundary with the seeded generator, so the stream is a pure function
/// of (sessions, seed, batch_size).
pub struct BatchStream {
    encoded: Vec<Vec<(u32, ContextVector)>>,
    batch_size: usize,
    rng: ChaCha8Rng,
    order: Vec<usize>,
    cursor: usize,
}

impl BatchStream {
    pub fn new(
        sessions: &[Session],
        schema: &ContextSchema,
        batch_size: usize,
        seed: u64,
    ) -> Result<Self, ModelError> {
        if sessions.is_empty() {
            return Err(ModelError::Config("empty training corpus".into()));
        }
        let encoded = sessions
            .iter()
            .map(|s| {
                if s.events.len() < 2 {
                    return Err(ModelError::SessionTooShort {
                        id: s.id,
                        len: s.events.len(),
                    });
                }
                Ok(encode_session_steps(s, schema)?)
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(BatchStream {
            order: (0..encoded.len()).collect(),
            encoded,
            batch_size,
            rng: ChaCha8Rng::seed_from_u64(seed),
            cursor: 0,
        })
    }

    pub fn next_batch(&mut self) -> SequenceBatch {
        if self.cursor == 0 {
            self.order.shuffle(&mut self.rng);
        }
        let end = (self.cursor + self.batch_size).min(self.order.len());
        let picked = &self.order[self.cursor..end];
        let batch = assemble(&self.encoded, picked);
        self.cursor = if end == self.order.len() { 0 } else { end };
        batch
    }
}

/// Pad the picked sessions to the longest one. Padded positions carry item 0,
/// an empty context, and a false target mask; the first event of every
/// session is never a target.
fn assemble(encoded: &[Vec<(u32, ContextVector)>], picked: &[usize]) -> SequenceBatch {
    let batch = picked.len();
    let max_len = picked.iter().map(|&i| encoded[i].len()).max().unwrap();
    let mut items = Vec::with_capacity(max_len);
    let mut ctx = Vec::with_capacity(max_len);
    let mut target_mask = Vec::with_capacity(max_len);
    for t in 0..max_len {
        let mut step_items = Vec::with_capacity(batch);
        let mut step_ctx = Vec::with_capacity(batch);
        let mut step_mask = Vec::with_capacity(batch);
        for &idx in picked {
            let session = &encoded[idx];
            match session.get(t) {
                Some((item, c)) => {
                    step_items.push(*item);
                    step_ctx.push(c.active().to_vec());
                    step_mask.push(t > 0);
                }
                None => {
                    step_items.push(0);
                    step_ctx.push(Vec::new());
                    step_mask.push(false);
                }
            }
        }
        items.push(Rc::new(step_items));
        ctx.push(Rc::new(step_ctx));
        target_mask.push(Rc::new(step_mask));
    }
    SequenceBatch {
        batch,
        max_len,
        items,
        ctx,
        target_mask,
    }
}
