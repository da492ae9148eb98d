//! Temporal self-supervised stock representations and the downstream desks
//! that consume them: similarity queries, pairs trading, index tracking, and
//! mean-variance portfolio construction.

pub mod data;
pub mod opt;
pub mod pairs;
pub mod similarity;
pub mod tdg;
pub mod tracking;
pub mod error;
pub mod eval;
pub mod model;

pub use error::{Error, Result};
