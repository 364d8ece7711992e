//! Continual learning with mask-isolated sub-networks, similarity-gated
//! forward/backward knowledge transfer, and a benchmark harness.

pub mod bench;
pub mod error;
pub mod learner;
pub mod masks;
pub mod nn;
pub mod numerics;
pub mod rng;
pub mod similarity;
pub mod theory;
pub mod transfer;

pub use error::{Error, Result};

/// Sequential task identifier, starting at 0.
pub type TaskId = u32;
