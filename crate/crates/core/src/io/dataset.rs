//! Loading inputs and preparing everything a simulation needs.

use std::fs::File;
use std::io::BufReader;
use std::path::Path;

use log::{info, warn};
use rand::seq::index;

use crate::catalog::{identify_protected, infer_schema, ItemCatalog, SensitiveSpec};
use crate::error::{Error, Result};
use crate::io::config::{
    Config, ProtectedValues, SensitiveChoice, DEFAULT_LAMBDA, DEFAULT_PERCENTILE,
};
use crate::profiles::{assign_tolerances, read_ratings, split_profiles, UserProfile};
use crate::recommender::{fit, recommend, RecommendationList, ScoreMatrix, ScoreModel};
use crate::rng::{self, streams};

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::io(path, e))
}

/// Reads the item table, inferring the schema when `schema` is `None`.
pub fn load_catalog(
    path: &Path,
    schema: Option<&crate::catalog::FeatureSchema>,
) -> Result<ItemCatalog> {
    let schema = match schema {
        Some(s) => s.clone(),
        None => infer_schema(open(path)?)?,
    };
    ItemCatalog::from_csv(open(path)?, schema)
}

/// Protected values chosen for one feature, with how they were chosen.
#[derive(Debug, Clone, PartialEq)]
pub struct ProtectedReport {
    pub feature: String,
    pub values: Vec<String>,
    pub percentile: Option<f64>,
    pub lambda: f64,
}

/// Inputs ready for [`crate::simulator::Simulation::new`].
#[derive(Debug, Clone)]
pub struct Prepared {
    pub catalog: ItemCatalog,
    pub profiles: Vec<UserProfile>,
    pub model: ScoreModel,
    pub spec: SensitiveSpec,
    pub protected: Vec<ProtectedReport>,
}

/// Base lists for a seeded subset of users, used to pick protected values.
pub fn trial_lists(
    config: &Config,
    catalog: &ItemCatalog,
    profiles: &[UserProfile],
    model: &ScoreModel,
) -> Vec<RecommendationList> {
    let n = profiles.len();
    let take = ((config.trial.user_fraction * n as f64 - 1e-9).ceil() as usize).clamp(1, n.max(1));
    let mut chosen: Vec<usize> = if take >= n {
        (0..n).collect()
    } else {
        let mut rng = rng::substream(config.simulation.seed, streams::TRIAL, 0);
        index::sample(&mut rng, n, take).into_vec()
    };
    chosen.sort_unstable();
    chosen
        .into_iter()
        .map(|u| {
            recommend(
                model,
                catalog,
                &profiles[u],
                config.trial.list_length,
                config.simulation.exclude_train,
            )
        })
        .collect()
}

/// Loads the catalog, ratings and scores, fits the base model if needed and
/// resolves the sensitive features.
pub fn prepare(config: &Config) -> Result<Prepared> {
    let ds = &config.dataset;
    let catalog = load_catalog(&ds.items, ds.schema.as_ref())?;
    info!(
        "loaded {} items over {} features",
        catalog.len(),
        catalog.schema().len()
    );
    let ratings = read_ratings(open(&ds.ratings)?, &catalog, ds.rating_scale)?;
    let mut profiles = split_profiles(&ratings, ds.train_fraction, config.simulation.seed)?;
    info!(
        "loaded {} ratings from {} users",
        ratings.len(),
        profiles.len()
    );
    if profiles.is_empty() {
        return Err(Error::InvalidArgument("ratings file has no rows".into()));
    }
    let model = match &ds.scores {
        Some(path) => ScoreModel::Precomputed(ScoreMatrix::from_csv(open(path)?, &catalog)?),
        None => {
            let m = fit(&profiles, &catalog, &config.model)?;
            if let Some(loss) = m.loss_history().last() {
                info!("base model fitted, final training loss {loss:.6}");
            }
            ScoreModel::Factorization(m)
        }
    };

    let choices: Vec<SensitiveChoice> = if ds.sensitive.is_empty() {
        catalog
            .schema()
            .features()
            .iter()
            .map(|f| SensitiveChoice {
                feature: f.name.clone(),
                values: ProtectedValues::Auto {
                    percentile: DEFAULT_PERCENTILE,
                },
                lambda: DEFAULT_LAMBDA,
            })
            .collect()
    } else {
        ds.sensitive.clone()
    };

    let needs_trial = choices
        .iter()
        .any(|c| matches!(c.values, ProtectedValues::Auto { .. }));
    let trial = if needs_trial {
        trial_lists(config, &catalog, &profiles, &model)
    } else {
        Vec::new()
    };

    let mut protected = Vec::new();
    for c in &choices {
        let (values, percentile) = match &c.values {
            ProtectedValues::Explicit(v) => (v.clone(), None),
            ProtectedValues::Auto { percentile } => (
                identify_protected(&trial, &catalog, &c.feature, *percentile)?,
                Some(*percentile),
            ),
        };
        if values.is_empty() {
            warn!(
                "feature `{}` has no protected values and is not treated as sensitive",
                c.feature
            );
            continue;
        }
        protected.push(ProtectedReport {
            feature: c.feature.clone(),
            values,
            percentile,
            lambda: c.lambda,
        });
    }
    let entries: Vec<(String, Vec<String>, f64)> = protected
        .iter()
        .map(|p| (p.feature.clone(), p.values.clone(), p.lambda))
        .collect();
    let spec = SensitiveSpec::new(catalog.schema(), &entries)?;
    assign_tolerances(&mut profiles, &catalog, &spec)?;
    Ok(Prepared {
        catalog,
        profiles,
        model,
        spec,
        protected,
    })
}
