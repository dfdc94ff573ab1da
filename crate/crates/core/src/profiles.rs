//! User rating histories, the train/test split, and entropy-based tolerance.

use std::collections::{BTreeMap, HashMap};
use std::io::Read;

use log::warn;
use rand::seq::SliceRandom;
use rand::Rng;

use crate::catalog::{ItemCatalog, SensitiveSpec};
use crate::error::{Error, Result};
use crate::rng::{self, streams};

#[derive(Debug, Clone, PartialEq)]
pub struct Rating {
    pub user_id: String,
    pub item_id: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UserProfile {
    pub user_id: String,
    pub train: Vec<Rating>,
    pub test: Vec<Rating>,
    /// Tolerance per sensitive feature name, in nats.
    pub tolerance: BTreeMap<String, f64>,
}

/// Reads a `user_id,item_id,rating[,timestamp]` table. Ratings on items the
/// catalog does not know, or outside `scale`, are errors.
pub fn read_ratings<R: Read>(
    reader: R,
    catalog: &ItemCatalog,
    scale: (f64, f64),
) -> Result<Vec<Rating>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| Error::csv("ratings header", e))?
        .clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    };
    let (u, i, r) = (col("user_id")?, col("item_id")?, col("rating")?);
    let mut out = Vec::new();
    for (line, record) in rdr.records().enumerate() {
        let row = line + 2;
        let record = record.map_err(|e| Error::csv(format!("ratings row {row}"), e))?;
        let item_id = record.get(i).unwrap_or_default();
        if catalog.index_of(item_id).is_none() {
            return Err(Error::UnknownItem(item_id.to_string()));
        }
        let raw = record.get(r).unwrap_or_default();
        let value: f64 = raw.parse().map_err(|_| {
            Error::InvalidArgument(format!("ratings row {row}: `{raw}` is not a number"))
        })?;
        if !(value >= scale.0 && value <= scale.1) {
            return Err(Error::InvalidArgument(format!(
                "ratings row {row}: {value} outside rating scale [{}, {}]",
                scale.0, scale.1
            )));
        }
        out.push(Rating {
            user_id: record.get(u).unwrap_or_default().to_string(),
            item_id: item_id.to_string(),
            value,
        });
    }
    Ok(out)
}

/// Randomly partitions each user's ratings into train and test.
///
/// Users come back sorted by id. A user with `n` ratings gets
/// `ceil(train_fraction * n)` train ratings, capped at `n - 1` so that every
/// user with two or more ratings keeps at least one test rating. Users with a
/// single rating are kept wholly in train and logged.
pub fn split_profiles(
    ratings: &[Rating],
    train_fraction: f64,
    seed: u64,
) -> Result<Vec<UserProfile>> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "train fraction {train_fraction} must lie in (0, 1)"
        )));
    }
    let mut by_user: BTreeMap<&str, Vec<&Rating>> = BTreeMap::new();
    for r in ratings {
        by_user.entry(r.user_id.as_str()).or_default().push(r);
    }
    let mut profiles = Vec::with_capacity(by_user.len());
    for (idx, (user, mut rs)) in by_user.into_iter().enumerate() {
        let n = rs.len();
        let mut rng = rng::substream(seed, streams::SPLIT, idx as u64);
        rs.shuffle(&mut rng);
        let n_train = if n == 1 {
            warn!("user `{user}` has a single rating; kept in train with an empty test set");
            1
        } else {
            (((train_fraction * n as f64) - 1e-9).ceil() as usize).clamp(1, n - 1)
        };
        let (train, test) = rs.split_at(n_train);
        profiles.push(UserProfile {
            user_id: user.to_string(),
            train: train.iter().map(|r| (*r).clone()).collect(),
            test: test.iter().map(|r| (*r).clone()).collect(),
            tolerance: BTreeMap::new(),
        });
    }
    Ok(profiles)
}

/// Shannon entropy (natural log) of the value distribution of `feature`
/// over the user's train items. Rating values do not weight the counts.
pub fn compute_tolerance(
    profile: &UserProfile,
    catalog: &ItemCatalog,
    feature: &str,
) -> Result<f64> {
    let f = catalog
        .schema()
        .feature_index(feature)
        .ok_or_else(|| Error::UnknownFeature(feature.to_string()))?;
    if profile.train.is_empty() {
        return Err(Error::Undefined(format!(
            "tolerance of user `{}`: empty train profile",
            profile.user_id
        )));
    }
    let mut counts: HashMap<usize, usize> = HashMap::new();
    for r in &profile.train {
        let idx = catalog
            .index_of(&r.item_id)
            .ok_or_else(|| Error::UnknownItem(r.item_id.clone()))?;
        *counts.entry(catalog.item(idx).values[f]).or_default() += 1;
    }
    // Sum in domain order so the result does not depend on hash iteration.
    let mut counts: Vec<(usize, usize)> = counts.into_iter().collect();
    counts.sort_unstable();
    let total = profile.train.len() as f64;
    let entropy = counts
        .iter()
        .map(|&(_, c)| {
            let p = c as f64 / total;
            -p * p.ln()
        })
        .sum::<f64>();
    Ok(entropy.max(0.0))
}

/// Fills `profile.tolerance` for every sensitive feature.
pub fn assign_tolerances(
    profiles: &mut [UserProfile],
    catalog: &ItemCatalog,
    spec: &SensitiveSpec,
) -> Result<()> {
    for p in profiles.iter_mut() {
        let mut tol = BTreeMap::new();
        for e in spec.entries() {
            tol.insert(e.name.clone(), compute_tolerance(p, catalog, &e.name)?);
        }
        p.tolerance = tol;
    }
    Ok(())
}

/// Orders `features` (indices into `sensitive_features`) by descending
/// tolerance. Equal tolerances are ordered by a uniform draw from `rng`.
pub fn preference_order<R: Rng>(
    profile: &UserProfile,
    sensitive_features: &[String],
    rng: &mut R,
) -> Vec<usize> {
    let tau: Vec<f64> = sensitive_features
        .iter()
        .map(|f| profile.tolerance.get(f).copied().unwrap_or(0.0))
        .collect();
    order_by_tolerance(&tau, rng)
}

/// Indices of `tau` by descending value, ties in random order.
pub fn order_by_tolerance<R: Rng>(tau: &[f64], rng: &mut R) -> Vec<usize> {
    let mut order: Vec<usize> = (0..tau.len()).collect();
    order.shuffle(rng);
    order.sort_by(|&a, &b| tau[b].total_cmp(&tau[a]));
    order
}
