//! Desk-scale spoken language understanding training toolkit.
//!
//! The crate trains small sequence models that map acoustic-style feature
//! frames to concept label sequences, tracks the energy spent doing so, and
//! reports efficiency alongside accuracy.

pub mod corpus;
pub mod ctc;
pub mod curriculum;
pub mod energy;
pub mod error;
pub mod metrics;
pub mod model;
pub mod numerics;

pub use error::{Error, Result};
