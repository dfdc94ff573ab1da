//! Choice functions that decide which re-ranker (if any) a user receives:
//! fixed lottery, least misery, dynamic lottery, and the allocation lottery
//! built on the probabilistic serial mechanism.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::error::{Error, Result};
use crate::fairness::FairnessState;

/// Tolerance on probability sums.
pub const PROBABILITY_TOLERANCE: f64 = 1e-12;

/// Remaining capacity below this is treated as exhausted.
const EXHAUSTION_TOLERANCE: f64 = 1e-12;

/// A distribution over re-rankers (indexed by sensitive feature), or the
/// sentinel meaning "deliver the base list unchanged".
#[derive(Debug, Clone, PartialEq)]
pub enum Lottery {
    Skip,
    Weights(Vec<f64>),
}

impl Lottery {
    /// Normalises non-negative weights into a lottery; all-zero weights give
    /// [`Lottery::Skip`]. Equal positive weights give exactly the uniform
    /// lottery of [`fixed_lottery`].
    pub fn from_weights(weights: &[f64]) -> Result<Self> {
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::InvalidArgument(format!(
                "invalid lottery weights {weights:?}"
            )));
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Ok(Lottery::Skip);
        }
        let mut positive = weights.iter().filter(|w| **w > 0.0);
        let first = positive.next().copied();
        if positive.all(|w| Some(*w) == first) {
            let support: Vec<bool> = weights.iter().map(|w| *w > 0.0).collect();
            return Ok(fixed_lottery(&support));
        }
        Ok(Lottery::Weights(
            weights.iter().map(|w| w / total).collect(),
        ))
    }

    pub fn is_skip(&self) -> bool {
        matches!(self, Lottery::Skip)
    }

    pub fn probabilities(&self) -> Option<&[f64]> {
        match self {
            Lottery::Skip => None,
            Lottery::Weights(p) => Some(p),
        }
    }
}

/// Uniform lottery over the features flagged in `features`.
pub fn fixed_lottery(features: &[bool]) -> Lottery {
    let k = features.iter().filter(|&&f| f).count();
    if k == 0 {
        return Lottery::Skip;
    }
    Lottery::Weights(
        features
            .iter()
            .map(|&f| if f { 1.0 / k as f64 } else { 0.0 })
            .collect(),
    )
}

/// The most unfair eligible feature; ties go to the lowest index.
pub fn least_misery(state: &FairnessState) -> Option<usize> {
    let mut best: Option<usize> = None;
    for j in state.eligible_features() {
        match best {
            Some(b) if state.uf[j] <= state.uf[b] => {}
            _ => best = Some(j),
        }
    }
    best
}

/// Lottery proportional to the unfairness vector.
pub fn dynamic_lottery(state: &FairnessState) -> Lottery {
    if state.skip() {
        return Lottery::Skip;
    }
    let weights: Vec<f64> = state
        .uf
        .iter()
        .zip(&state.eligible)
        .map(|(u, &e)| if e { *u } else { 0.0 })
        .collect();
    Lottery::from_weights(&weights).unwrap_or(Lottery::Skip)
}

/// Fractional assignment of objects (columns) to agents (rows).
#[derive(Debug, Clone, PartialEq)]
pub struct AllocationMatrix {
    rows: Vec<Vec<f64>>,
}

impl AllocationMatrix {
    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn cell(&self, agent: usize, object: usize) -> f64 {
        self.rows[agent][object]
    }

    pub fn column_sum(&self, object: usize) -> f64 {
        self.rows.iter().map(|r| r[object]).sum()
    }

    pub fn total(&self) -> f64 {
        self.rows.iter().flatten().sum()
    }

    /// Agent's row scaled to sum to one.
    pub fn normalized_row(&self, agent: usize) -> Vec<f64> {
        let row = &self.rows[agent];
        let s: f64 = row.iter().sum();
        if s > 0.0 {
            row.iter().map(|x| x / s).collect()
        } else {
            row.clone()
        }
    }
}

/// Probabilistic serial (simultaneous eating) assignment.
///
/// All agents eat their most-preferred object with capacity left, at unit
/// speed. When an object runs out its eaters move down their preference
/// lists. Eating stops once each agent has eaten `min(1, sum(capacities) / n)`
/// or every object is gone. The simulation jumps from one exhaustion event
/// to the next, so it is exact up to floating-point rounding.
///
/// `preferences[i]` must be a permutation of `0..capacities.len()`. Returns
/// `None` when the total capacity is zero.
pub fn probabilistic_serial(
    preferences: &[Vec<usize>],
    capacities: &[f64],
) -> Result<Option<AllocationMatrix>> {
    let m = capacities.len();
    if capacities.iter().any(|c| !(c.is_finite() && *c >= 0.0)) {
        return Err(Error::InvalidArgument(format!(
            "invalid capacities {capacities:?}"
        )));
    }
    for (i, p) in preferences.iter().enumerate() {
        let mut seen = vec![false; m];
        let valid = p.len() == m
            && p.iter()
                .all(|&j| j < m && !std::mem::replace(&mut seen[j], true));
        if !valid {
            return Err(Error::InvalidArgument(format!(
                "preference list of agent {i} is not a strict order over {m} objects"
            )));
        }
    }
    let n = preferences.len();
    let total: f64 = capacities.iter().sum();
    if total <= 0.0 {
        return Ok(None);
    }
    let mut rows = vec![vec![0.0; m]; n];
    if n == 0 {
        return Ok(Some(AllocationMatrix { rows }));
    }
    let quota = (total / n as f64).min(1.0);
    let mut remaining = capacities.to_vec();
    let mut exhausted: Vec<bool> = remaining.iter().map(|&c| c <= 0.0).collect();
    let mut cursor = vec![0usize; n];
    let mut t = 0.0;
    let mut eaters = vec![0usize; m];

    loop {
        for (i, pref) in preferences.iter().enumerate() {
            while cursor[i] < m && exhausted[pref[cursor[i]]] {
                cursor[i] += 1;
            }
        }
        eaters.iter_mut().for_each(|e| *e = 0);
        for (i, pref) in preferences.iter().enumerate() {
            if cursor[i] < m {
                eaters[pref[cursor[i]]] += 1;
            }
        }
        if t >= quota || eaters.iter().all(|&e| e == 0) {
            break;
        }
        // Time until the next object runs out, or until agents reach quota.
        let mut dt = quota - t;
        let mut first_out = None;
        for j in 0..m {
            if eaters[j] > 0 {
                let until = remaining[j] / eaters[j] as f64;
                if until <= dt {
                    dt = until;
                    first_out = Some(j);
                }
            }
        }
        for (i, pref) in preferences.iter().enumerate() {
            if cursor[i] < m {
                rows[i][pref[cursor[i]]] += dt;
            }
        }
        for j in 0..m {
            if eaters[j] > 0 {
                remaining[j] -= eaters[j] as f64 * dt;
                if remaining[j] <= EXHAUSTION_TOLERANCE {
                    remaining[j] = 0.0;
                    exhausted[j] = true;
                }
            }
        }
        if let Some(j) = first_out {
            remaining[j] = 0.0;
            exhausted[j] = true;
        } else {
            t = quota;
            continue;
        }
        t += dt;
    }
    Ok(Some(AllocationMatrix { rows }))
}

/// Per-user lotteries from the probabilistic serial mechanism.
///
/// Each eligible re-ranker gets capacity `n * uf_j` for a batch of `n` users,
/// so total capacity equals the batch size and every user ends up with a
/// full unit of probability. `preferences[i]` is user `i`'s strict order over
/// all sensitive features; ineligible features are dropped from it.
pub fn allocation_lottery(
    state: &FairnessState,
    preferences: &[Vec<usize>],
) -> Result<Vec<Lottery>> {
    let n = preferences.len();
    if state.skip() {
        return Ok(vec![Lottery::Skip; n]);
    }
    let eligible = state.eligible_features();
    let mut column = vec![usize::MAX; state.uf.len()];
    for (c, &j) in eligible.iter().enumerate() {
        column[j] = c;
    }
    let uf_total: f64 = eligible.iter().map(|&j| state.uf[j]).sum();
    let capacities: Vec<f64> = eligible
        .iter()
        .map(|&j| n as f64 * state.uf[j] / uf_total)
        .collect();
    let mut cols_prefs = Vec::with_capacity(n);
    for (i, p) in preferences.iter().enumerate() {
        if p.len() != state.uf.len() {
            return Err(Error::InvalidArgument(format!(
                "preference list of user {i} covers {} of {} features",
                p.len(),
                state.uf.len()
            )));
        }
        cols_prefs.push(
            p.iter()
                .filter(|&&j| j < column.len() && column[j] != usize::MAX)
                .map(|&j| column[j])
                .collect::<Vec<_>>(),
        );
    }
    let Some(matrix) = probabilistic_serial(&cols_prefs, &capacities)? else {
        return Ok(vec![Lottery::Skip; n]);
    };
    (0..n)
        .map(|i| {
            let row = matrix.normalized_row(i);
            let mut full = vec![0.0; state.uf.len()];
            for (c, &j) in eligible.iter().enumerate() {
                full[j] = row[c];
            }
            Lottery::from_weights(&full)
        })
        .collect()
}

/// Categorical draw from the lottery; `None` for [`Lottery::Skip`].
pub fn sample<R: Rng>(lottery: &Lottery, rng: &mut R) -> Option<usize> {
    let probs = lottery.probabilities()?;
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut last = None;
    for (j, &p) in probs.iter().enumerate() {
        if p <= 0.0 {
            continue;
        }
        acc += p;
        last = Some(j);
        if u < acc {
            return Some(j);
        }
    }
    last
}

/// How re-rankers are chosen for each user.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ChoiceFunction {
    /// Never re-rank; delivers the base recommender's lists.
    Base,
    Fixed,
    LeastMisery,
    Dynamic,
    Allocation,
}

impl ChoiceFunction {
    pub const ALL: [ChoiceFunction; 5] = [
        ChoiceFunction::Base,
        ChoiceFunction::Fixed,
        ChoiceFunction::LeastMisery,
        ChoiceFunction::Dynamic,
        ChoiceFunction::Allocation,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ChoiceFunction::Base => "base",
            ChoiceFunction::Fixed => "fixed",
            ChoiceFunction::LeastMisery => "least_misery",
            ChoiceFunction::Dynamic => "dynamic",
            ChoiceFunction::Allocation => "allocation",
        }
    }
}

impl fmt::Display for ChoiceFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ChoiceFunction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ChoiceFunction::ALL
            .into_iter()
            .find(|c| c.name() == s.trim())
            .ok_or_else(|| {
                let names: Vec<&str> = ChoiceFunction::ALL.iter().map(|c| c.name()).collect();
                Error::Config(format!(
                    "unknown choice function `{s}`; expected one of {}",
                    names.join(", ")
                ))
            })
    }
}
