//! Multi-feature fairness-aware re-ranking.
//!
//! A base recommender produces a candidate pool for each arriving user. One
//! re-ranker per sensitive item feature can promote that feature's protected
//! items. A choice function looks at the protected-item exposure delivered
//! over a sliding window of recent batches and decides which re-ranker each
//! user gets: uniformly ([`ChoiceFunction::Fixed`]), the worst feature
//! ([`ChoiceFunction::LeastMisery`]), in proportion to unfairness
//! ([`ChoiceFunction::Dynamic`]), or through a probabilistic serial
//! assignment that also respects each user's tolerance for diversity
//! ([`ChoiceFunction::Allocation`]).
//!
//! [`simulator`] replays users in shuffled batches and records per-batch
//! fairness, regret and nDCG.

pub mod catalog;
pub mod choice;
pub mod error;
pub mod fairness;
pub mod io;
pub mod profiles;
pub mod recommender;
pub mod rerank;
pub mod rng;
pub mod simulator;

pub use choice::ChoiceFunction;
pub use error::{Error, Result};
