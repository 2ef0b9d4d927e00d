//! Robust sailing-route search.
//!
//! A regatta court is discretized into square cells and lifted into a layered
//! (cell, tack) DAG. An evolutionary algorithm searches for waypoint lists whose
//! developed route families are cheap across many simulated wind scenarios.
//! Evaluation is sharded over scenarios, memoized in a fitness cache, and can be
//! short-circuited by a gradient-boosted good/bad classifier plus a cost regressor.

pub mod court;
pub mod error;
pub mod eval;
pub mod evo;
pub mod gbdt;
pub mod graph;
pub mod harness;
pub mod seed;
pub mod surrogate;
pub mod windsim;

pub use error::{Error, Result};
