//! Exposure, windowed absolute-unfairness metrics, the unfairness vector,
//! regret and nDCG.

use std::collections::{HashMap, VecDeque};

use crate::catalog::{ItemCatalog, ProtectionTable, SensitiveSpec};
use crate::error::{Error, Result};
use crate::profiles::Rating;
use crate::recommender::RecommendationList;

/// Numerical slack on the eligibility boundary `1 - M_j >= epsilon`.
const ELIGIBILITY_SLACK: f64 = 1e-12;

/// Fraction of `list` that is protected for sensitive feature `feature`.
pub fn exposure(
    list: &RecommendationList,
    catalog: &ItemCatalog,
    spec: &SensitiveSpec,
    feature: &str,
) -> Result<f64> {
    let j = spec
        .position(feature)
        .ok_or_else(|| Error::UnknownFeature(feature.to_string()))?;
    if list.is_empty() {
        return Err(Error::InvalidArgument("exposure of an empty list".into()));
    }
    let entry = &spec.entries()[j];
    let hits = list
        .items()
        .filter(|&i| entry.protects(catalog.item(i)))
        .count();
    Ok(hits as f64 / list.len() as f64)
}

/// [`exposure`] against a precomputed protection table. Empty lists have
/// zero exposure.
pub fn list_exposure(list: &RecommendationList, table: &ProtectionTable, feature: usize) -> f64 {
    if list.is_empty() {
        return 0.0;
    }
    let hits = list
        .items()
        .filter(|&i| table.is_protected(i, feature))
        .count();
    hits as f64 / list.len() as f64
}

/// `1 - |1 - 2 e|`: one at exposure 0.5, zero at 0 and 1.
pub fn absolute_unfairness_metric(mean_exposure: f64) -> f64 {
    1.0 - (1.0 - 2.0 * mean_exposure).abs()
}

/// A list delivered to a user.
#[derive(Debug, Clone, PartialEq)]
pub struct Delivery {
    pub user: String,
    pub list: RecommendationList,
}

/// The last `capacity` batches of deliveries, oldest first.
#[derive(Debug, Clone)]
pub struct HistoryWindow {
    capacity: usize,
    batches: VecDeque<Vec<Delivery>>,
}

impl HistoryWindow {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::InvalidArgument(
                "window capacity must be at least 1".into(),
            ));
        }
        Ok(Self {
            capacity,
            batches: VecDeque::with_capacity(capacity + 1),
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Appends a batch, evicting the oldest beyond capacity.
    pub fn push_batch(&mut self, batch: Vec<Delivery>) {
        self.batches.push_back(batch);
        while self.batches.len() > self.capacity {
            self.batches.pop_front();
        }
    }

    pub fn batch_count(&self) -> usize {
        self.batches.len()
    }

    pub fn list_count(&self) -> usize {
        self.batches.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.list_count() == 0
    }

    pub fn deliveries(&self) -> impl Iterator<Item = &Delivery> {
        self.batches.iter().flatten()
    }

    /// Mean exposure over every list in the window.
    pub fn mean_exposure(&self, table: &ProtectionTable, feature: usize) -> Option<f64> {
        let n = self.list_count();
        if n == 0 {
            return None;
        }
        let total: f64 = self
            .deliveries()
            .map(|d| list_exposure(&d.list, table, feature))
            .sum();
        Some(total / n as f64)
    }
}

/// A fairness metric over the delivery history. Implementations see both the
/// lists and the users they went to, though exposure metrics only read lists.
pub trait FairnessMetric {
    /// Value in `[0, 1]`, higher is fairer. `None` on an empty window.
    fn evaluate(&self, window: &HistoryWindow) -> Option<f64>;
}

/// Absolute-unfairness metric on protected exposure for one feature.
#[derive(Debug, Clone, Copy)]
pub struct AbsoluteUnfairness<'a> {
    pub table: &'a ProtectionTable,
    pub feature: usize,
}

impl FairnessMetric for AbsoluteUnfairness<'_> {
    fn evaluate(&self, window: &HistoryWindow) -> Option<f64> {
        window
            .mean_exposure(self.table, self.feature)
            .map(absolute_unfairness_metric)
    }
}

/// Absolute-unfairness metric of `feature` over the window.
pub fn metric_m(
    window: &HistoryWindow,
    catalog: &ItemCatalog,
    spec: &SensitiveSpec,
    feature: &str,
) -> Result<f64> {
    let j = spec
        .position(feature)
        .ok_or_else(|| Error::UnknownFeature(feature.to_string()))?;
    let table = ProtectionTable::new(catalog, spec);
    AbsoluteUnfairness {
        table: &table,
        feature: j,
    }
    .evaluate(window)
    .ok_or_else(|| Error::Undefined("fairness metric over an empty window".into()))
}

/// Per-feature fairness metrics and the derived unfairness distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct FairnessState {
    pub metrics: Vec<f64>,
    pub epsilon: f64,
    /// `1 - (M_j - epsilon)` before normalisation.
    pub raw: Vec<f64>,
    /// `raw` normalised over eligible features; zero elsewhere.
    pub uf: Vec<f64>,
    pub eligible: Vec<bool>,
}

impl FairnessState {
    /// True when no feature is unfair enough to warrant re-ranking.
    pub fn skip(&self) -> bool {
        !self.eligible.iter().any(|&e| e)
    }

    pub fn eligible_features(&self) -> Vec<usize> {
        (0..self.eligible.len())
            .filter(|&j| self.eligible[j])
            .collect()
    }
}

/// Builds the unfairness vector from per-feature metrics.
///
/// A feature is eligible for re-ranking when its unfairness `1 - M_j` reaches
/// `epsilon`. Eligible features share probability mass in proportion to
/// `1 - (M_j - epsilon)`.
pub fn unfairness_vector(metrics: &[f64], epsilon: f64) -> Result<FairnessState> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "epsilon {epsilon} must lie in (0, 1)"
        )));
    }
    if let Some(m) = metrics.iter().find(|m| !(0.0..=1.0).contains(*m)) {
        return Err(Error::InvalidArgument(format!(
            "metric value {m} outside [0, 1]"
        )));
    }
    let raw: Vec<f64> = metrics.iter().map(|m| 1.0 - (m - epsilon)).collect();
    let eligible: Vec<bool> = metrics
        .iter()
        .map(|m| 1.0 - m >= epsilon - ELIGIBILITY_SLACK)
        .collect();
    let total: f64 = raw
        .iter()
        .zip(&eligible)
        .filter(|(_, &e)| e)
        .map(|(r, _)| r)
        .sum();
    let uf = raw
        .iter()
        .zip(&eligible)
        .map(|(r, &e)| if e { r / total } else { 0.0 })
        .collect();
    Ok(FairnessState {
        metrics: metrics.to_vec(),
        epsilon,
        raw,
        uf,
        eligible,
    })
}

/// Graded nDCG@`display_length` with the owner's test ratings as gains and a
/// `1 / log2(i + 1)` discount. Zero when the owner has no positive test
/// rating.
pub fn ndcg(
    slate: &RecommendationList,
    test_ratings: &[Rating],
    catalog: &ItemCatalog,
    display_length: usize,
) -> f64 {
    let gains: HashMap<usize, f64> = test_ratings
        .iter()
        .filter_map(|r| catalog.index_of(&r.item_id).map(|i| (i, r.value)))
        .collect();
    let dcg: f64 = slate
        .items()
        .take(display_length)
        .enumerate()
        .map(|(pos, item)| gains.get(&item).copied().unwrap_or(0.0) / discount(pos))
        .sum();
    let mut ideal: Vec<f64> = gains.values().copied().filter(|g| *g > 0.0).collect();
    ideal.sort_by(|a, b| b.total_cmp(a));
    let idcg: f64 = ideal
        .iter()
        .take(display_length)
        .enumerate()
        .map(|(pos, g)| g / discount(pos))
        .sum();
    if idcg > 0.0 {
        dcg / idcg
    } else {
        0.0
    }
}

/// `log2(i + 1)` for zero-based position `pos` (`i = pos + 1`).
fn discount(pos: usize) -> f64 {
    ((pos + 2) as f64).log2()
}

/// Per-feature regret `1 - M_j` for one batch.
#[derive(Debug, Clone, PartialEq)]
pub struct RegretRecord {
    pub batch_index: usize,
    pub per_feature: Vec<f64>,
    pub average: f64,
}

impl RegretRecord {
    pub fn from_metrics(batch_index: usize, metrics: &[f64]) -> Self {
        let per_feature: Vec<f64> = metrics.iter().map(|m| 1.0 - m).collect();
        let average = if per_feature.is_empty() {
            0.0
        } else {
            per_feature.iter().sum::<f64>() / per_feature.len() as f64
        };
        Self {
            batch_index,
            per_feature,
            average,
        }
    }
}

/// Mean and population variance of the per-batch average regret.
pub fn regret_stats(series: &[RegretRecord]) -> Result<(f64, f64)> {
    if series.is_empty() {
        return Err(Error::InvalidArgument("empty regret series".into()));
    }
    Ok(mean_variance(series.iter().map(|r| r.average)))
}

pub(crate) fn mean_variance(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    let var = values.map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var)
}
