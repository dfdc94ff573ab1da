//! Seeded synthetic datasets with a planted latent structure and controllable
//! value-popularity skew.
//!
//! Each feature value `r` (0-based, of `D`) is drawn for an item with weight
//! `skew^(-r / (D - 1))`, so the most common value is `skew` times as likely
//! as the rarest and `skew = 1` is uniform. Users and items carry latent
//! vectors with independent `Uniform(0, latent_scale)` components. A user
//! rates a fixed number of items, chosen without replacement with weight
//! `exp(affinity * u.v)`, and the rating is
//! `clamp(round(global_mean + u.v + noise), min, max)`.

use std::path::{Path, PathBuf};

use rand::distributions::WeightedIndex;
use rand::prelude::*;
use rand_distr::Normal;
use serde::{Deserialize, Serialize};

use crate::catalog::{Feature, FeatureSchema, ItemCatalog};
use crate::error::{Error, Result};
use crate::io::config::{
    DatasetSection, FileConfig, ModelSection, ProtectedSection, SchemaEntry, SensitiveEntry,
    SimulationSection, DEFAULT_LAMBDA, DEFAULT_PERCENTILE,
};
use crate::io::results::atomic_write;
use crate::profiles::Rating;
use crate::rng::{self, streams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticFeature {
    pub name: String,
    /// Domain size.
    pub values: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    #[serde(default)]
    pub seed: u64,
    pub users: usize,
    pub items: usize,
    /// Fraction of the catalog each user rates.
    pub density: f64,
    /// Ratio of the most to the least frequent value of every feature.
    #[serde(default = "one")]
    pub skew: f64,
    /// Standard deviation of the rating noise.
    #[serde(default = "half")]
    pub noise: f64,
    #[serde(default = "two")]
    pub latent_dim: usize,
    #[serde(default = "one")]
    pub latent_scale: f64,
    /// Strength of the latent preference when picking which items to rate.
    #[serde(default = "one")]
    pub affinity: f64,
    #[serde(default = "mean")]
    pub global_mean: f64,
    #[serde(default = "rmin")]
    pub rating_min: f64,
    #[serde(default = "rmax")]
    pub rating_max: f64,
    pub features: Vec<SyntheticFeature>,
    /// Re-ranker weight written into the generated configuration.
    #[serde(default = "lambda")]
    pub lambda: f64,
    #[serde(default = "percentile")]
    pub auto_percentile: f64,
    /// Copied into the generated configuration.
    #[serde(default)]
    pub simulation: SimulationSection,
    #[serde(default)]
    pub model: ModelSection,
}

fn one() -> f64 {
    1.0
}
fn half() -> f64 {
    0.5
}
fn two() -> usize {
    2
}
fn mean() -> f64 {
    2.5
}
fn rmin() -> f64 {
    1.0
}
fn rmax() -> f64 {
    5.0
}
fn lambda() -> f64 {
    DEFAULT_LAMBDA
}
fn percentile() -> f64 {
    DEFAULT_PERCENTILE
}

impl SyntheticSpec {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Parse {
            path: PathBuf::from("<generator spec>"),
            message: e.to_string(),
        })
    }

    /// Ratings per user.
    pub fn ratings_per_user(&self) -> usize {
        (self.density * self.items as f64).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if self.users == 0 || self.items == 0 {
            return Err(Error::Config(
                "users and items must both be positive".into(),
            ));
        }
        if self.features.is_empty() {
            return Err(Error::Config("at least one feature is required".into()));
        }
        if let Some(f) = self.features.iter().find(|f| f.values < 2) {
            return Err(Error::Config(format!(
                "feature `{}` needs at least 2 values",
                f.name
            )));
        }
        if !(self.density > 0.0 && self.density <= 1.0) {
            return Err(Error::Config(format!(
                "density = {} must lie in (0, 1]",
                self.density
            )));
        }
        let per_user = self.ratings_per_user();
        if per_user < 2 || per_user > self.items {
            return Err(Error::Config(format!(
                "density {} gives {per_user} ratings per user over {} items; need between 2 and the item count",
                self.density, self.items
            )));
        }
        if !(self.skew >= 1.0 && self.skew.is_finite()) {
            return Err(Error::Config(format!(
                "skew = {} must be at least 1",
                self.skew
            )));
        }
        if self.noise.is_nan()
            || self.noise < 0.0
            || self.latent_dim == 0
            || self.latent_scale.is_nan()
            || self.latent_scale <= 0.0
        {
            return Err(Error::Config(
                "noise must be non-negative, latent_dim and latent_scale positive".into(),
            ));
        }
        if self.rating_min.partial_cmp(&self.rating_max) != Some(std::cmp::Ordering::Less) {
            return Err(Error::Config("rating_min must be below rating_max".into()));
        }
        Ok(())
    }

    pub fn schema(&self) -> Result<FeatureSchema> {
        FeatureSchema::new(
            self.features
                .iter()
                .map(|f| Feature {
                    name: f.name.clone(),
                    domain: (0..f.values).map(|r| format!("{}-{r}", f.name)).collect(),
                })
                .collect(),
        )
    }
}

/// A generated dataset held in memory.
#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub catalog: ItemCatalog,
    pub ratings: Vec<Rating>,
}

fn pad(n: usize) -> usize {
    n.saturating_sub(1).to_string().len()
}

fn latent<R: Rng>(rng: &mut R, d: usize, scale: f64) -> Vec<f64> {
    (0..d).map(|_| rng.gen::<f64>() * scale).collect()
}

/// Builds the dataset described by `spec`.
pub fn generate(spec: &SyntheticSpec) -> Result<SyntheticData> {
    spec.validate()?;
    let schema = spec.schema()?;
    let mut catalog = ItemCatalog::new(schema.clone());
    let mut rng = rng::substream(spec.seed, streams::GENERATOR, 0);
    let pickers: Vec<WeightedIndex<f64>> = spec
        .features
        .iter()
        .map(|f| {
            let d = f.values as f64;
            WeightedIndex::new((0..f.values).map(|r| spec.skew.powf(-(r as f64) / (d - 1.0))))
                .expect("positive weights")
        })
        .collect();
    let width = pad(spec.items);
    let mut item_latent = Vec::with_capacity(spec.items);
    for i in 0..spec.items {
        let values: Vec<&str> = pickers
            .iter()
            .enumerate()
            .map(|(f, w)| schema.feature(f).domain[w.sample(&mut rng)].as_str())
            .collect();
        catalog.push(&format!("item{i:0width$}"), &values)?;
        item_latent.push(latent(&mut rng, spec.latent_dim, spec.latent_scale));
    }

    let per_user = spec.ratings_per_user();
    let noise = Normal::new(0.0, spec.noise).map_err(|e| Error::Config(e.to_string()))?;
    let uwidth = pad(spec.users);
    let mut ratings = Vec::with_capacity(spec.users * per_user);
    for u in 0..spec.users {
        let mut rng = rng::substream(spec.seed, streams::GENERATOR, u as u64 + 1);
        let user = latent(&mut rng, spec.latent_dim, spec.latent_scale);
        let affinity: Vec<f64> = item_latent
            .iter()
            .map(|v| v.iter().zip(&user).map(|(a, b)| a * b).sum())
            .collect();
        // Weighted sampling without replacement: keep the largest
        // ln(U) / w keys, w = exp(affinity * u.v).
        let mut keys: Vec<(f64, usize)> = affinity
            .iter()
            .enumerate()
            .map(|(i, a)| {
                let uni: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
                (uni.ln() * (-spec.affinity * a).exp(), i)
            })
            .collect();
        keys.select_nth_unstable_by(per_user - 1, |a, b| b.0.total_cmp(&a.0));
        let mut chosen: Vec<usize> = keys[..per_user].iter().map(|k| k.1).collect();
        chosen.sort_unstable();
        let user_id = format!("user{u:0uwidth$}");
        for i in chosen {
            let raw = spec.global_mean + affinity[i] + noise.sample(&mut rng);
            ratings.push(Rating {
                user_id: user_id.clone(),
                item_id: catalog.item(i).id.clone(),
                value: raw.round().clamp(spec.rating_min, spec.rating_max),
            });
        }
    }
    Ok(SyntheticData { catalog, ratings })
}

pub const ITEMS_FILE: &str = "items.csv";
pub const RATINGS_FILE: &str = "ratings.csv";
pub const CONFIG_FILE: &str = "config.toml";

pub fn items_csv(catalog: &ItemCatalog) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let schema = catalog.schema();
    let mut header = vec!["item_id"];
    header.extend(schema.features().iter().map(|f| f.name.as_str()));
    w.write_record(&header)
        .map_err(|e| Error::csv("items header", e))?;
    for (idx, item) in catalog.items().iter().enumerate() {
        let mut rec = vec![item.id.as_str()];
        rec.extend((0..schema.len()).map(|f| catalog.value_of(idx, f)));
        w.write_record(&rec)
            .map_err(|e| Error::csv("items row", e))?;
    }
    w.into_inner()
        .map_err(|e| Error::InvalidArgument(e.to_string()))
}

pub fn ratings_csv(ratings: &[Rating]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["user_id", "item_id", "rating"])
        .map_err(|e| Error::csv("ratings header", e))?;
    for r in ratings {
        w.write_record([r.user_id.as_str(), r.item_id.as_str(), &r.value.to_string()])
            .map_err(|e| Error::csv("ratings row", e))?;
    }
    w.into_inner()
        .map_err(|e| Error::InvalidArgument(e.to_string()))
}

/// Simulation configuration pointing at the generated files.
pub fn config_for(spec: &SyntheticSpec) -> FileConfig {
    FileConfig {
        seed: spec.seed,
        dataset: DatasetSection {
            items: ITEMS_FILE.into(),
            ratings: RATINGS_FILE.into(),
            scores: None,
            rating_min: spec.rating_min,
            rating_max: spec.rating_max,
            train_fraction: 0.8,
        },
        schema: spec
            .schema()
            .map(|s| {
                s.features()
                    .iter()
                    .map(|f| SchemaEntry {
                        name: f.name.clone(),
                        values: f.domain.clone(),
                    })
                    .collect()
            })
            .unwrap_or_default(),
        model: spec.model.clone(),
        simulation: spec.simulation.clone(),
        protected: ProtectedSection::default(),
        sensitive: spec
            .features
            .iter()
            .map(|f| SensitiveEntry {
                feature: f.name.clone(),
                protected: None,
                auto_percentile: Some(spec.auto_percentile),
                lambda: spec.lambda,
            })
            .collect(),
    }
}

/// Generates the dataset and writes `items.csv`, `ratings.csv` and
/// `config.toml` into `out_dir`.
pub fn write_dataset(spec: &SyntheticSpec, out_dir: &Path) -> Result<SyntheticData> {
    let data = generate(spec)?;
    atomic_write(&out_dir.join(ITEMS_FILE), &items_csv(&data.catalog)?)?;
    atomic_write(&out_dir.join(RATINGS_FILE), &ratings_csv(&data.ratings)?)?;
    let config = toml::to_string(&config_for(spec)).map_err(|e| Error::Config(e.to_string()))?;
    atomic_write(&out_dir.join(CONFIG_FILE), config.as_bytes())?;
    Ok(data)
}
