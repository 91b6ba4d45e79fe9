//! Dense linear algebra with reverse-mode gradient accumulation, plus Adam.
//!
//! Everything the model family needs: rank-2 matrices (batches ride along as
//! rows), a Wengert tape recording matrix-level primitives, and the
//! optimizer. Single-threaded per tape; concurrent gradient evaluation is
//! fine as long as each tape works over its own parameter snapshot and the
//! parameter update itself stays exclusive.

mod adam;
mod matrix;
mod scalar;
mod tape;

use std::collections::BTreeMap;

use thiserror::Error;

pub use adam::{adam_step, AdamState};
pub use matrix::{Matrix, Shape};
pub use scalar::{sigmoid, Real};
pub use tape::{softmax, ActiveCols, Gradients, NodeId, Tape};

#[derive(Debug, Error)]
pub enum KernelError {
    #[error("{op}: incompatible shapes {lhs} vs {rhs}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Shape,
        rhs: Shape,
    },
    #[error("buffer length mismatch: expected {expected}, got {got}")]
    BadBuffer { expected: usize, got: usize },
    #[error("index {index} out of range (len {len})")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("{op}: non-finite input")]
    NonFiniteInput { op: &'static str },
    #[error("{op}: empty input")]
    EmptyInput { op: &'static str },
    #[error("backward requires a scalar loss, got {shape}")]
    NonScalarLoss { shape: Shape },
    #[error("non-finite gradient for parameter `{param}` at ({row}, {col})")]
    NonFiniteGradient {
        param: &'static str,
        row: usize,
        col: usize,
    },
    #[error("unknown parameter `{param}`")]
    UnknownParam { param: &'static str },
}

/// Named collection of learnable matrices. BTreeMap keeps iteration order
/// deterministic, which the reproducibility guarantees rely on.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSet<S: Real> {
    entries: BTreeMap<&'static str, Matrix<S>>,
}

impl<S: Real> ParamSet<S> {
    pub fn new() -> Self {
        ParamSet {
            entries: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, name: &'static str, value: Matrix<S>) {
        self.entries.insert(name, value);
    }

    pub fn get(&self, name: &str) -> Option<&Matrix<S>> {
        self.entries.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Matrix<S>> {
        self.entries.get_mut(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&'static str, &Matrix<S>)> {
        self.entries.iter().map(|(k, v)| (*k, v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&'static str, &mut Matrix<S>)> {
        self.entries.iter_mut().map(|(k, v)| (*k, v))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total scalar count across all entries.
    pub fn num_values(&self) -> usize {
        self.entries.values().map(Matrix::len).sum()
    }
}

impl<S: Real> Default for ParamSet<S> {
    fn default() -> Self {
        Self::new()
    }
}
