//! Training and evaluation engine for contextual next-item recommendation.
//!
//! Session sequences are modeled with a tied-embedding recurrent
//! architecture; context (event type, time-of-day features, time gaps) can
//! enter through the input representation, the output projection, and the
//! recurrent transition itself. Gradients come from a reverse-mode tape,
//! optimization from Adam with a square-root learning-rate decay, and
//! evaluation reports Recall@K with session-level bootstrap intervals.

pub mod checkpoint;
pub mod context;
pub mod data;
pub mod eval;
pub mod kernel;
pub mod model;
pub mod train;
