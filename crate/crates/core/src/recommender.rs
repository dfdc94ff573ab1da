//! Base recommender: a non-negative latent-factor model fitted on train
//! ratings, or an externally supplied dense score matrix.

use std::cmp::Ordering;
use std::collections::{HashMap, HashSet};
use std::io::Read;

use log::warn;
use rand::Rng;

use crate::catalog::ItemCatalog;
use crate::error::{Error, Result};
use crate::profiles::UserProfile;
use crate::rng::{self, streams};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoredItem {
    /// Catalog index.
    pub item: usize,
    pub score: f64,
}

/// Ranked items for one user, best first.
#[derive(Debug, Clone, PartialEq)]
pub struct RecommendationList {
    owner: String,
    entries: Vec<ScoredItem>,
}

impl RecommendationList {
    /// Wraps already-ranked entries.
    pub fn from_entries(owner: impl Into<String>, entries: Vec<ScoredItem>) -> Self {
        Self {
            owner: owner.into(),
            entries,
        }
    }

    pub fn owner(&self) -> &str {
        &self.owner
    }

    pub fn entries(&self) -> &[ScoredItem] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn items(&self) -> impl Iterator<Item = usize> + '_ {
        self.entries.iter().map(|e| e.item)
    }

    /// First `k` entries as a new list.
    pub fn truncated(&self, k: usize) -> Self {
        Self {
            owner: self.owner.clone(),
            entries: self.entries[..k.min(self.entries.len())].to_vec(),
        }
    }

    pub fn item_ids<'a>(&'a self, catalog: &'a ItemCatalog) -> Vec<&'a str> {
        self.items().map(|i| catalog.item(i).id.as_str()).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitParams {
    pub factors: usize,
    pub epochs: usize,
    pub regularization: f64,
    /// Upper bound of the uniform factor initialisation.
    pub init_scale: f64,
    /// Include global mean and user/item biases in the prediction.
    pub biases: bool,
    pub seed: u64,
}

impl Default for FitParams {
    fn default() -> Self {
        Self {
            factors: 20,
            epochs: 30,
            regularization: 0.02,
            init_scale: 0.1,
            biases: true,
            seed: 0,
        }
    }
}

/// Fitted non-negative factor model.
///
/// Prediction is `offset + b_u + b_i + p_u . q_i` with `p_u, q_i >= 0`, where
/// `offset` is the global train mean when biases are enabled and zero
/// otherwise.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorModel {
    factors: usize,
    global_mean: f64,
    offset: f64,
    user_index: HashMap<String, usize>,
    user_bias: Vec<f64>,
    item_bias: Vec<f64>,
    user_factors: Vec<f64>,
    item_factors: Vec<f64>,
    user_seen: Vec<bool>,
    item_seen: Vec<bool>,
    loss_history: Vec<f64>,
}

impl FactorModel {
    pub fn factors(&self) -> usize {
        self.factors
    }

    pub fn global_mean(&self) -> f64 {
        self.global_mean
    }

    /// Regularised objective after each epoch.
    pub fn loss_history(&self) -> &[f64] {
        &self.loss_history
    }

    pub fn user_factors(&self) -> &[f64] {
        &self.user_factors
    }

    pub fn item_factors(&self) -> &[f64] {
        &self.item_factors
    }

    fn predict(&self, u: usize, i: usize) -> f64 {
        let d = self.factors;
        let p = &self.user_factors[u * d..(u + 1) * d];
        let q = &self.item_factors[i * d..(i + 1) * d];
        self.offset + self.user_bias[u] + self.item_bias[i] + dot(p, q)
    }
}

/// Dense user-by-item score matrix supplied by an external recommender.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix {
    n_items: usize,
    user_index: HashMap<String, usize>,
    scores: Vec<f64>,
    item_means: Vec<f64>,
    global_mean: f64,
}

impl ScoreMatrix {
    /// Reads `user_id,<item_id>...` rows. Every catalog item must have a
    /// column; unknown item columns are errors.
    pub fn from_csv<R: Read>(reader: R, catalog: &ItemCatalog) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(reader);
        let headers = rdr
            .headers()
            .map_err(|e| Error::csv("scores header", e))?
            .clone();
        if headers.get(0) != Some("user_id") {
            return Err(Error::MissingColumn("user_id".into()));
        }
        let mut col_item = Vec::with_capacity(headers.len() - 1);
        for h in headers.iter().skip(1) {
            col_item.push(
                catalog
                    .index_of(h)
                    .ok_or_else(|| Error::UnknownItem(h.to_string()))?,
            );
        }
        let present: HashSet<usize> = col_item.iter().copied().collect();
        if let Some(missing) = (0..catalog.len()).find(|i| !present.contains(i)) {
            return Err(Error::MissingColumn(catalog.item(missing).id.clone()));
        }
        let n_items = catalog.len();
        let mut user_index = HashMap::new();
        let mut scores = Vec::new();
        for (line, record) in rdr.records().enumerate() {
            let row = line + 2;
            let record = record.map_err(|e| Error::csv(format!("scores row {row}"), e))?;
            let user = record.get(0).unwrap_or_default().to_string();
            if user_index.insert(user.clone(), user_index.len()).is_some() {
                return Err(Error::InvalidArgument(format!(
                    "scores row {row}: duplicate user `{user}`"
                )));
            }
            let mut dense = vec![0.0; n_items];
            for (c, &item) in col_item.iter().enumerate() {
                let raw = record.get(c + 1).unwrap_or_default();
                let v: f64 = raw.parse().map_err(|_| {
                    Error::InvalidArgument(format!("scores row {row}: `{raw}` is not a number"))
                })?;
                if !v.is_finite() {
                    return Err(Error::InvalidArgument(format!(
                        "scores row {row}: non-finite score"
                    )));
                }
                dense[item] = v;
            }
            scores.extend(dense);
        }
        let n_users = user_index.len();
        let mut item_means = vec![0.0; n_items];
        if n_users > 0 {
            for u in 0..n_users {
                for (i, m) in item_means.iter_mut().enumerate() {
                    *m += scores[u * n_items + i];
                }
            }
            item_means.iter_mut().for_each(|m| *m /= n_users as f64);
        }
        let global_mean = if n_items > 0 {
            item_means.iter().sum::<f64>() / n_items as f64
        } else {
            0.0
        };
        Ok(Self {
            n_items,
            user_index,
            scores,
            item_means,
            global_mean,
        })
    }
}

/// Source of base scores `R(u, v)`.
#[derive(Debug, Clone, PartialEq)]
pub enum ScoreModel {
    Factorization(FactorModel),
    Precomputed(ScoreMatrix),
}

/// A score and whether it came from a cold-entity fallback.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Score {
    pub value: f64,
    pub fallback: bool,
}

impl ScoreModel {
    /// Score for a user/item pair. Unknown or untrained users and items fall
    /// back to bias-only scores (the global mean when both are cold).
    pub fn score(&self, catalog: &ItemCatalog, user: &str, item: &str) -> Score {
        let item = catalog.index_of(item);
        match self {
            ScoreModel::Factorization(m) => {
                let u = m.user_index.get(user).copied().filter(|&u| m.user_seen[u]);
                let i = item.filter(|&i| i < m.item_seen.len() && m.item_seen[i]);
                match (u, i) {
                    (Some(u), Some(i)) => Score {
                        value: m.predict(u, i),
                        fallback: false,
                    },
                    (Some(u), None) => Score {
                        value: m.global_mean + m.user_bias[u],
                        fallback: true,
                    },
                    (None, Some(i)) => Score {
                        value: m.global_mean + m.item_bias[i],
                        fallback: true,
                    },
                    (None, None) => Score {
                        value: m.global_mean,
                        fallback: true,
                    },
                }
            }
            ScoreModel::Precomputed(s) => match (s.user_index.get(user), item) {
                (Some(&u), Some(i)) => Score {
                    value: s.scores[u * s.n_items + i],
                    fallback: false,
                },
                (None, Some(i)) => Score {
                    value: s.item_means[i],
                    fallback: true,
                },
                _ => Score {
                    value: s.global_mean,
                    fallback: true,
                },
            },
        }
    }

    /// Scores of every catalog item for `user`, indexed by catalog position.
    pub fn score_all(&self, catalog: &ItemCatalog, user: &str) -> Vec<f64> {
        match self {
            ScoreModel::Factorization(m) => {
                let u = m.user_index.get(user).copied().filter(|&u| m.user_seen[u]);
                (0..catalog.len())
                    .map(|i| {
                        let seen = i < m.item_seen.len() && m.item_seen[i];
                        match (u, seen) {
                            (Some(u), true) => m.predict(u, i),
                            (Some(u), false) => m.global_mean + m.user_bias[u],
                            (None, true) => m.global_mean + m.item_bias[i],
                            (None, false) => m.global_mean,
                        }
                    })
                    .collect()
            }
            ScoreModel::Precomputed(s) => match s.user_index.get(user) {
                Some(&u) => s.scores[u * s.n_items..(u + 1) * s.n_items].to_vec(),
                None => s.item_means.clone(),
            },
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Fits a non-negative factor model to the train ratings by cyclic
/// coordinate descent.
///
/// The objective is the squared error over train ratings plus, for every
/// rating, `regularization` times the squared norms of the parameters it
/// touches, so users and items with more ratings are penalised in
/// proportion. Each sweep minimises it exactly in one coordinate at a time
/// (user bias, then each user factor, then the same for items), projecting
/// factors onto `[0, inf)`. Every step is an exact minimisation of a convex
/// one-dimensional quadratic, so the objective never increases between
/// epochs.
pub fn fit(
    profiles: &[UserProfile],
    catalog: &ItemCatalog,
    params: &FitParams,
) -> Result<FactorModel> {
    if params.factors == 0 {
        return Err(Error::Config("model.factors must be at least 1".into()));
    }
    if !params.regularization.is_finite() || params.regularization < 0.0 {
        return Err(Error::Config(
            "model.regularization must be non-negative".into(),
        ));
    }
    let d = params.factors;
    let n_users = profiles.len();
    let n_items = catalog.len();

    let mut user_index = HashMap::with_capacity(n_users);
    let mut obs_user = Vec::new();
    let mut obs_item = Vec::new();
    let mut obs_value = Vec::new();
    for (u, p) in profiles.iter().enumerate() {
        if user_index.insert(p.user_id.clone(), u).is_some() {
            return Err(Error::InvalidArgument(format!(
                "duplicate user `{}`",
                p.user_id
            )));
        }
        for r in &p.train {
            let i = catalog
                .index_of(&r.item_id)
                .ok_or_else(|| Error::UnknownItem(r.item_id.clone()))?;
            obs_user.push(u);
            obs_item.push(i);
            obs_value.push(r.value);
        }
    }
    if obs_value.is_empty() {
        return Err(Error::InvalidArgument("no train ratings to fit".into()));
    }
    let global_mean = obs_value.iter().sum::<f64>() / obs_value.len() as f64;
    let offset = if params.biases { global_mean } else { 0.0 };

    let mut by_user: Vec<Vec<usize>> = vec![Vec::new(); n_users];
    let mut by_item: Vec<Vec<usize>> = vec![Vec::new(); n_items];
    for (k, (&u, &i)) in obs_user.iter().zip(&obs_item).enumerate() {
        by_user[u].push(k);
        by_item[i].push(k);
    }
    let user_seen: Vec<bool> = by_user.iter().map(|v| !v.is_empty()).collect();
    let item_seen: Vec<bool> = by_item.iter().map(|v| !v.is_empty()).collect();
    let cold_items = item_seen.iter().filter(|s| !**s).count();
    if cold_items > 0 {
        warn!("{cold_items} items have no train ratings; they are scored by bias fallback");
    }

    let mut rng = rng::substream(params.seed, streams::MODEL_INIT, 0);
    let mut user_factors: Vec<f64> = (0..n_users * d)
        .map(|_| rng.gen::<f64>() * params.init_scale)
        .collect();
    let mut item_factors: Vec<f64> = (0..n_items * d)
        .map(|_| rng.gen::<f64>() * params.init_scale)
        .collect();
    let mut user_bias = vec![0.0; n_users];
    let mut item_bias = vec![0.0; n_items];
    for (u, seen) in user_seen.iter().enumerate() {
        if !seen {
            user_factors[u * d..(u + 1) * d]
                .iter_mut()
                .for_each(|x| *x = 0.0);
        }
    }
    for (i, seen) in item_seen.iter().enumerate() {
        if !seen {
            item_factors[i * d..(i + 1) * d]
                .iter_mut()
                .for_each(|x| *x = 0.0);
        }
    }

    let reg = params.regularization;
    let mut residual = vec![0.0; obs_value.len()];
    let mut loss_history = Vec::with_capacity(params.epochs);

    let refresh = |residual: &mut [f64], uf: &[f64], itf: &[f64], ub: &[f64], ib: &[f64]| {
        for k in 0..residual.len() {
            let (u, i) = (obs_user[k], obs_item[k]);
            residual[k] = obs_value[k]
                - offset
                - ub[u]
                - ib[i]
                - dot(&uf[u * d..(u + 1) * d], &itf[i * d..(i + 1) * d]);
        }
    };

    for _ in 0..params.epochs {
        refresh(
            &mut residual,
            &user_factors,
            &item_factors,
            &user_bias,
            &item_bias,
        );
        sweep(
            &by_user,
            &obs_item,
            &mut residual,
            &mut user_bias,
            params.biases,
            &mut user_factors,
            &item_factors,
            d,
            reg,
        );
        sweep(
            &by_item,
            &obs_user,
            &mut residual,
            &mut item_bias,
            params.biases,
            &mut item_factors,
            &user_factors,
            d,
            reg,
        );
        refresh(
            &mut residual,
            &user_factors,
            &item_factors,
            &user_bias,
            &item_bias,
        );
        let sq: f64 = residual.iter().map(|r| r * r).sum();
        let penalty: f64 = (0..obs_value.len())
            .map(|k| {
                let (u, i) = (obs_user[k], obs_item[k]);
                let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>();
                norm(&user_factors[u * d..(u + 1) * d])
                    + norm(&item_factors[i * d..(i + 1) * d])
                    + user_bias[u] * user_bias[u]
                    + item_bias[i] * item_bias[i]
            })
            .sum();
        loss_history.push(sq + reg * penalty);
    }

    Ok(FactorModel {
        factors: d,
        global_mean,
        offset,
        user_index,
        user_bias,
        item_bias,
        user_factors,
        item_factors,
        user_seen,
        item_seen,
        loss_history,
    })
}

/// One coordinate-descent pass over the rows of one side of the
/// factorisation. `own` holds this side's factors, `other` the opposite
/// side's; `partner[k]` is the opposite-side row of observation `k`.
#[allow(clippy::too_many_arguments)]
fn sweep(
    rows: &[Vec<usize>],
    partner: &[usize],
    residual: &mut [f64],
    bias: &mut [f64],
    fit_bias: bool,
    own: &mut [f64],
    other: &[f64],
    d: usize,
    reg: f64,
) {
    for (r, obs) in rows.iter().enumerate() {
        if obs.is_empty() {
            continue;
        }
        if fit_bias {
            let old = bias[r];
            let num: f64 = obs.iter().map(|&k| residual[k] + old).sum();
            let new = num / (obs.len() as f64 * (1.0 + reg));
            for &k in obs {
                residual[k] += old - new;
            }
            bias[r] = new;
        }
        for f in 0..d {
            let old = own[r * d + f];
            let mut num = 0.0;
            let mut den = reg * obs.len() as f64;
            for &k in obs {
                let q = other[partner[k] * d + f];
                num += (residual[k] + old * q) * q;
                den += q * q;
            }
            if den <= 0.0 {
                continue;
            }
            let new = (num / den).max(0.0);
            if new != old {
                for &k in obs {
                    residual[k] += (old - new) * other[partner[k] * d + f];
                }
                own[r * d + f] = new;
            }
        }
    }
}

fn rank_order(catalog: &ItemCatalog) -> impl Fn(&ScoredItem, &ScoredItem) -> Ordering + '_ {
    move |a, b| {
        b.score
            .total_cmp(&a.score)
            .then_with(|| catalog.item(a.item).id.cmp(&catalog.item(b.item).id))
    }
}

/// Top `pool_size` catalog items for the profile's user by base score, ties
/// broken by ascending item id. With `exclude_train` the user's train items
/// are skipped. A pool larger than the candidate count is truncated with a
/// warning.
pub fn recommend(
    model: &ScoreModel,
    catalog: &ItemCatalog,
    profile: &UserProfile,
    pool_size: usize,
    exclude_train: bool,
) -> RecommendationList {
    let all: Vec<usize> = (0..catalog.len()).collect();
    recommend_among(model, catalog, profile, &all, pool_size, exclude_train)
}

/// As [`recommend`], restricted to the given catalog indices.
pub fn recommend_among(
    model: &ScoreModel,
    catalog: &ItemCatalog,
    profile: &UserProfile,
    candidates: &[usize],
    pool_size: usize,
    exclude_train: bool,
) -> RecommendationList {
    let scores = model.score_all(catalog, &profile.user_id);
    let excluded: HashSet<usize> = if exclude_train {
        profile
            .train
            .iter()
            .filter_map(|r| catalog.index_of(&r.item_id))
            .collect()
    } else {
        HashSet::new()
    };
    let mut entries: Vec<ScoredItem> = candidates
        .iter()
        .filter(|i| !excluded.contains(i))
        .map(|&item| ScoredItem {
            item,
            score: scores[item],
        })
        .collect();
    if pool_size > entries.len() {
        warn!(
            "user `{}`: pool size {pool_size} exceeds {} candidates; truncated",
            profile.user_id,
            entries.len()
        );
    }
    let cmp = rank_order(catalog);
    let k = pool_size.min(entries.len());
    if k > 0 && k < entries.len() {
        entries.select_nth_unstable_by(k - 1, &cmp);
        entries.truncate(k);
    }
    entries.sort_by(&cmp);
    entries.truncate(k);
    RecommendationList::from_entries(profile.user_id.clone(), entries)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::{Feature, FeatureSchema};
    use crate::profiles::Rating;
    use std::collections::BTreeMap;

    fn catalog(n: usize) -> ItemCatalog {
        let schema = FeatureSchema::new(vec![Feature {
            name: "F".into(),
            domain: vec!["a".into(), "b".into()],
        }])
        .unwrap();
        let mut c = ItemCatalog::new(schema);
        for i in 0..n {
            c.push(&format!("i{i:03}"), &[if i % 2 == 0 { "a" } else { "b" }])
                .unwrap();
        }
        c
    }

    fn profile(user: &str, train: &[(usize, f64)]) -> UserProfile {
        UserProfile {
            user_id: user.into(),
            train: train
                .iter()
                .map(|&(i, v)| Rating {
                    user_id: user.into(),
                    item_id: format!("i{i:03}"),
                    value: v,
                })
                .collect(),
            test: vec![],
            tolerance: BTreeMap::new(),
        }
    }

    /// Fully observed rank-1 matrix `u_a * v_b`.
    fn rank_one(n_users: usize, n_items: usize) -> (ItemCatalog, Vec<UserProfile>, Vec<Vec<f64>>) {
        let c = catalog(n_items);
        let u: Vec<f64> = (0..n_users).map(|a| 1.0 + 0.15 * a as f64).collect();
        let v: Vec<f64> = (0..n_items).map(|b| 0.5 + 0.2 * b as f64).collect();
        let truth: Vec<Vec<f64>> = u
            .iter()
            .map(|x| v.iter().map(|y| x * y).collect())
            .collect();
        let profiles = (0..n_users)
            .map(|a| {
                profile(
                    &format!("u{a}"),
                    &(0..n_items).map(|b| (b, truth[a][b])).collect::<Vec<_>>(),
                )
            })
            .collect();
        (c, profiles, truth)
    }

    fn rank_one_params() -> FitParams {
        FitParams {
            factors: 1,
            epochs: 300,
            regularization: 1e-6,
            init_scale: 0.5,
            biases: false,
            seed: 3,
        }
    }

    #[test]
    fn rank_one_recovery() {
        let (c, profiles, truth) = rank_one(8, 10);
        let m = fit(&profiles, &c, &rank_one_params()).unwrap();
        let model = ScoreModel::Factorization(m);
        let mut sq = 0.0;
        for (a, row) in truth.iter().enumerate() {
            for (b, t) in row.iter().enumerate() {
                let s = model.score(&c, &format!("u{a}"), &format!("i{b:03}"));
                assert!(!s.fallback);
                sq += (s.value - t).powi(2);
            }
        }
        let rmse = (sq / 80.0).sqrt();
        assert!(rmse < 0.05, "rmse {rmse}");
    }

    #[test]
    fn zero_factors_rejected() {
        let (c, profiles, _) = rank_one(2, 2);
        let params = FitParams {
            factors: 0,
            ..FitParams::default()
        };
        assert!(matches!(fit(&profiles, &c, &params), Err(Error::Config(_))));
    }

    #[test]
    fn fit_is_bitwise_deterministic() {
        let (c, profiles, _) = rank_one(6, 9);
        let a = fit(&profiles, &c, &FitParams::default()).unwrap();
        let b = fit(&profiles, &c, &FitParams::default()).unwrap();
        assert_eq!(
            a.user_factors
                .iter()
                .map(|x| x.to_bits())
                .collect::<Vec<_>>(),
            b.user_factors
                .iter()
                .map(|x| x.to_bits())
                .collect::<Vec<_>>()
        );
        assert_eq!(
            a.item_factors
                .iter()
                .map(|x| x.to_bits())
                .collect::<Vec<_>>(),
            b.item_factors
                .iter()
                .map(|x| x.to_bits())
                .collect::<Vec<_>>()
        );
    }

    #[test]
    fn loss_non_increasing_and_factors_non_negative() {
        let c = catalog(12);
        let profiles: Vec<UserProfile> = (0..7)
            .map(|u| {
                let train: Vec<(usize, f64)> = (0..12)
                    .filter(|i| (i + u) % 3 != 0)
                    .map(|i| (i, 1.0 + ((i * 7 + u * 3) % 5) as f64))
                    .collect();
                profile(&format!("u{u}"), &train)
            })
            .collect();
        let m = fit(
            &profiles,
            &c,
            &FitParams {
                factors: 4,
                epochs: 40,
                ..FitParams::default()
            },
        )
        .unwrap();
        for w in m.loss_history().windows(2) {
            assert!(w[1] <= w[0] + 1e-9, "{} -> {}", w[0], w[1]);
        }
        assert!(m
            .user_factors
            .iter()
            .chain(&m.item_factors)
            .all(|x| *x >= 0.0 && x.is_finite()));
    }

    #[test]
    fn cold_entities_fall_back() {
        let c = catalog(4);
        let profiles = vec![
            profile("u0", &[(0, 5.0), (1, 3.0)]),
            profile("u1", &[(0, 4.0)]),
        ];
        let model = ScoreModel::Factorization(fit(&profiles, &c, &FitParams::default()).unwrap());
        let s = model.score(&c, "nobody", "i003");
        assert!(s.fallback);
        assert!((s.value - 4.0).abs() < 1e-12);
        assert!(model.score(&c, "nobody", "i000").fallback);
        assert!(model.score(&c, "u0", "i003").fallback);
        assert!(!model.score(&c, "u0", "i001").fallback);
    }

    #[test]
    fn zero_model_scores_global_mean() {
        let c = catalog(2);
        let m = FactorModel {
            factors: 2,
            global_mean: 3.5,
            offset: 3.5,
            user_index: [("u".to_string(), 0)].into_iter().collect(),
            user_bias: vec![0.0],
            item_bias: vec![0.0, 0.0],
            user_factors: vec![0.0; 2],
            item_factors: vec![0.0; 4],
            user_seen: vec![true],
            item_seen: vec![true, true],
            loss_history: vec![],
        };
        let s = ScoreModel::Factorization(m).score(&c, "u", "i001");
        assert_eq!(s.value, 3.5);
    }

    fn matrix(rows: &str, c: &ItemCatalog) -> ScoreModel {
        ScoreModel::Precomputed(ScoreMatrix::from_csv(rows.as_bytes(), c).unwrap())
    }

    #[test]
    fn full_permutation_of_small_catalog() {
        let c = catalog(3);
        let m = matrix("user_id,i000,i001,i002\nu,0.2,0.9,0.5\n", &c);
        let list = recommend(&m, &c, &profile("u", &[]), 3, false);
        assert_eq!(list.item_ids(&c), vec!["i001", "i002", "i000"]);
    }

    #[test]
    fn ties_broken_by_item_id() {
        let c = catalog(4);
        let m = matrix("user_id,i003,i001,i000,i002\nu,1,1,1,1\n", &c);
        let list = recommend(&m, &c, &profile("u", &[]), 4, false);
        assert_eq!(list.item_ids(&c), vec!["i000", "i001", "i002", "i003"]);
    }

    #[test]
    fn train_items_excluded() {
        let c = catalog(5);
        let m = matrix("user_id,i000,i001,i002,i003,i004\nu,5,4,3,2,1\n", &c);
        let p = profile("u", &[(0, 5.0), (2, 3.0)]);
        let list = recommend(&m, &c, &p, 3, true);
        assert_eq!(list.item_ids(&c), vec!["i001", "i003", "i004"]);
        let oversize = recommend(&m, &c, &p, 10, true);
        assert_eq!(oversize.len(), 3);
    }

    #[test]
    fn score_matrix_requires_every_item() {
        let c = catalog(3);
        assert!(ScoreMatrix::from_csv("user_id,i000,i001\nu,1,2\n".as_bytes(), &c).is_err());
        assert!(
            ScoreMatrix::from_csv("user_id,i000,i001,i002,zz\nu,1,2,3,4\n".as_bytes(), &c).is_err()
        );
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn recommend_is_sorted_and_stable(scores in proptest::collection::vec(0u8..6, 3..25), pool in 1usize..25) {
                let n = scores.len();
                let c = catalog(n);
                let header: Vec<String> = (0..n).map(|i| format!("i{i:03}")).collect();
                let row: Vec<String> = scores.iter().map(|s| s.to_string()).collect();
                let csv = format!("user_id,{}\nu,{}\n", header.join(","), row.join(","));
                let m = matrix(&csv, &c);
                let p = profile("u", &[]);
                let list = recommend(&m, &c, &p, pool, false);
                prop_assert_eq!(list.len(), pool.min(n));
                for w in list.entries().windows(2) {
                    prop_assert!(w[0].score >= w[1].score);
                }
                let pool_items: Vec<usize> = list.items().collect();
                let again = recommend_among(&m, &c, &p, &pool_items, pool, false);
                prop_assert_eq!(again, list);
            }
        }
    }
}
