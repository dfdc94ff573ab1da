//! Feature-specific re-rankers: a convex blend of normalised base score and
//! a protected-item indicator.

use crate::catalog::ProtectionTable;
use crate::error::{Error, Result};
use crate::recommender::{RecommendationList, ScoredItem};

/// Re-ranker for one sensitive feature. `feature` indexes the sensitive spec.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Reranker {
    pub feature: usize,
    pub lambda: f64,
}

impl Reranker {
    pub fn new(feature: usize, lambda: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&lambda) {
            return Err(Error::InvalidArgument(format!(
                "lambda {lambda} outside [0, 1]"
            )));
        }
        Ok(Self { feature, lambda })
    }
}

/// `lambda * score + (1 - lambda) * [protected]`.
#[inline]
pub fn rho(reranker: &Reranker, normalized_base_score: f64, protected: bool) -> f64 {
    let indicator = if protected { 1.0 } else { 0.0 };
    reranker.lambda * normalized_base_score + (1.0 - reranker.lambda) * indicator
}

/// Re-scores every pool item with [`rho`] after min-max normalising the base
/// scores over the pool, sorts by the new score (ties keep pool order) and
/// keeps the first `display_length`. A pool with constant scores normalises
/// to all ones.
pub fn rerank(
    reranker: &Reranker,
    pool: &RecommendationList,
    protection: &ProtectionTable,
    display_length: usize,
) -> RecommendationList {
    let entries = pool.entries();
    let (lo, hi) = entries
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), e| {
            (lo.min(e.score), hi.max(e.score))
        });
    let range = hi - lo;
    let mut rescored: Vec<ScoredItem> = entries
        .iter()
        .map(|e| {
            let norm = if range > 0.0 {
                (e.score - lo) / range
            } else {
                1.0
            };
            ScoredItem {
                item: e.item,
                score: rho(
                    reranker,
                    norm,
                    protection.is_protected(e.item, reranker.feature),
                ),
            }
        })
        .collect();
    // Stable: equal scores stay in pool order.
    rescored.sort_by(|a, b| b.score.total_cmp(&a.score));
    rescored.truncate(display_length);
    RecommendationList::from_entries(pool.owner(), rescored)
}
