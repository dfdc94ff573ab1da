//! Run configuration.
//!
//! The configuration file is TOML. Every section is optional except
//! `[dataset]`; unknown keys are rejected. Relative paths resolve against the
//! directory holding the configuration file.
//!
//! ```toml
//! seed = 0
//!
//! [dataset]
//! items = "items.csv"
//! ratings = "ratings.csv"
//! # scores = "scores.csv"       # precomputed user x item scores instead of fitting
//! rating_min = 1.0
//! rating_max = 5.0
//! train_fraction = 0.8
//!
//! [[schema]]                    # optional; inferred from the items file if absent
//! name = "Region"
//! values = ["Africa", "Middle-East", "India"]
//!
//! [model]
//! factors = 20
//! epochs = 30
//! regularization = 0.02
//!
//! [simulation]
//! choice_function = "allocation" # base | fixed | least_misery | dynamic | allocation
//! batch_fraction = 0.005
//! window_batches = 20
//! display_length = 10
//! candidate_pool_size = 100
//! epsilon = 0.05
//!
//! [protected]
//! trial_list_length = 10
//! trial_user_fraction = 1.0
//!
//! [[sensitive]]
//! feature = "Region"
//! protected = ["Africa", "India"]  # or: auto_percentile = 0.25
//! lambda = 0.5
//! ```
//!
//! Without any `[[sensitive]]` entry every feature is sensitive with
//! `auto_percentile = 0.25` and `lambda = 0.5`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::catalog::{Feature, FeatureSchema};
use crate::choice::ChoiceFunction;
use crate::error::{Error, Result};
use crate::recommender::FitParams;
use crate::simulator::SimulationConfig;

pub const DEFAULT_LAMBDA: f64 = 0.5;
pub const DEFAULT_PERCENTILE: f64 = 0.25;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    #[serde(default)]
    pub seed: u64,
    pub dataset: DatasetSection,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub schema: Vec<SchemaEntry>,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub simulation: SimulationSection,
    #[serde(default)]
    pub protected: ProtectedSection,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub sensitive: Vec<SensitiveEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSection {
    pub items: PathBuf,
    pub ratings: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scores: Option<PathBuf>,
    #[serde(default = "defaults::rating_min")]
    pub rating_min: f64,
    #[serde(default = "defaults::rating_max")]
    pub rating_max: f64,
    #[serde(default = "defaults::train_fraction")]
    pub train_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchemaEntry {
    pub name: String,
    pub values: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    #[serde(default = "defaults::factors")]
    pub factors: usize,
    #[serde(default = "defaults::epochs")]
    pub epochs: usize,
    #[serde(default = "defaults::regularization")]
    pub regularization: f64,
    #[serde(default = "defaults::init_scale")]
    pub init_scale: f64,
    #[serde(default = "defaults::yes")]
    pub biases: bool,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            factors: defaults::factors(),
            epochs: defaults::epochs(),
            regularization: defaults::regularization(),
            init_scale: defaults::init_scale(),
            biases: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationSection {
    #[serde(default = "defaults::choice")]
    pub choice_function: String,
    #[serde(default = "defaults::batch_fraction")]
    pub batch_fraction: f64,
    #[serde(default = "defaults::window_batches")]
    pub window_batches: usize,
    #[serde(default = "defaults::display_length")]
    pub display_length: usize,
    #[serde(default = "defaults::pool")]
    pub candidate_pool_size: usize,
    #[serde(default = "defaults::epsilon")]
    pub epsilon: f64,
    #[serde(default = "defaults::yes")]
    pub exclude_train: bool,
    #[serde(default = "defaults::yes")]
    pub parallel: bool,
}

impl Default for SimulationSection {
    fn default() -> Self {
        Self {
            choice_function: defaults::choice(),
            batch_fraction: defaults::batch_fraction(),
            window_batches: defaults::window_batches(),
            display_length: defaults::display_length(),
            candidate_pool_size: defaults::pool(),
            epsilon: defaults::epsilon(),
            exclude_train: true,
            parallel: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProtectedSection {
    /// Length of the base lists in the trial run; defaults to the display
    /// length.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trial_list_length: Option<usize>,
    #[serde(default = "defaults::one")]
    pub trial_user_fraction: f64,
}

impl Default for ProtectedSection {
    fn default() -> Self {
        Self {
            trial_list_length: None,
            trial_user_fraction: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensitiveEntry {
    pub feature: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub protected: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub auto_percentile: Option<f64>,
    #[serde(default = "defaults::lambda")]
    pub lambda: f64,
}

/// How a sensitive feature's protected values are chosen.
#[derive(Debug, Clone, PartialEq)]
pub enum ProtectedValues {
    Explicit(Vec<String>),
    Auto { percentile: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SensitiveChoice {
    pub feature: String,
    pub values: ProtectedValues,
    pub lambda: f64,
}

/// Everything needed to locate and interpret the input files.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetBundle {
    pub items: PathBuf,
    pub ratings: PathBuf,
    pub scores: Option<PathBuf>,
    pub schema: Option<FeatureSchema>,
    /// Empty means every feature, auto-selected.
    pub sensitive: Vec<SensitiveChoice>,
    pub rating_scale: (f64, f64),
    pub train_fraction: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialConfig {
    pub list_length: usize,
    pub user_fraction: f64,
}

/// Fully resolved configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub file: FileConfig,
    pub simulation: SimulationConfig,
    pub dataset: DatasetBundle,
    pub model: FitParams,
    pub trial: TrialConfig,
}

mod defaults {
    pub fn rating_min() -> f64 {
        1.0
    }
    pub fn rating_max() -> f64 {
        5.0
    }
    pub fn train_fraction() -> f64 {
        0.8
    }
    pub fn factors() -> usize {
        20
    }
    pub fn epochs() -> usize {
        30
    }
    pub fn regularization() -> f64 {
        0.02
    }
    pub fn init_scale() -> f64 {
        0.1
    }
    pub fn yes() -> bool {
        true
    }
    pub fn one() -> f64 {
        1.0
    }
    pub fn choice() -> String {
        "fixed".into()
    }
    pub fn batch_fraction() -> f64 {
        0.005
    }
    pub fn window_batches() -> usize {
        20
    }
    pub fn display_length() -> usize {
        10
    }
    pub fn pool() -> usize {
        100
    }
    pub fn epsilon() -> f64 {
        0.05
    }
    pub fn lambda() -> f64 {
        super::DEFAULT_LAMBDA
    }
}

fn in_range(key: &str, value: f64, lo: f64, hi: f64, lo_open: bool, hi_open: bool) -> Result<()> {
    let ok_lo = if lo_open { value > lo } else { value >= lo };
    let ok_hi = if hi_open { value < hi } else { value <= hi };
    if ok_lo && ok_hi && value.is_finite() {
        Ok(())
    } else {
        let (l, r) = (
            if lo_open { '(' } else { '[' },
            if hi_open { ')' } else { ']' },
        );
        Err(Error::Config(format!(
            "{key} = {value} is outside {l}{lo}, {hi}{r}"
        )))
    }
}

/// Reads and resolves a configuration file.
pub fn parse_config(path: &Path) -> Result<Config> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    parse_config_str(&text, base).map_err(|e| match e {
        Error::Parse { message, .. } => Error::Parse {
            path: path.to_path_buf(),
            message,
        },
        other => other,
    })
}

/// Resolves configuration text; relative paths are joined onto `base_dir`.
pub fn parse_config_str(text: &str, base_dir: &Path) -> Result<Config> {
    let file: FileConfig = toml::from_str(text).map_err(|e| Error::Parse {
        path: PathBuf::from("<config>"),
        message: e.to_string(),
    })?;
    resolve(file, base_dir)
}

/// Validates a parsed file and converts it into engine types.
pub fn resolve(file: FileConfig, base_dir: &Path) -> Result<Config> {
    let s = &file.simulation;
    let choice: ChoiceFunction = s.choice_function.parse()?;
    in_range(
        "simulation.batch_fraction",
        s.batch_fraction,
        0.0,
        1.0,
        true,
        false,
    )?;
    in_range("simulation.epsilon", s.epsilon, 0.0, 1.0, true, true)?;
    let d = &file.dataset;
    in_range(
        "dataset.train_fraction",
        d.train_fraction,
        0.0,
        1.0,
        true,
        true,
    )?;
    if d.rating_min.partial_cmp(&d.rating_max) != Some(std::cmp::Ordering::Less) {
        return Err(Error::Config(format!(
            "dataset.rating_min = {} must be below dataset.rating_max = {}",
            d.rating_min, d.rating_max
        )));
    }
    let m = &file.model;
    if m.factors == 0 {
        return Err(Error::Config(
            "model.factors = 0; must be at least 1".into(),
        ));
    }
    in_range(
        "model.regularization",
        m.regularization,
        0.0,
        f64::MAX,
        false,
        false,
    )?;
    in_range(
        "model.init_scale",
        m.init_scale,
        0.0,
        f64::MAX,
        false,
        false,
    )?;
    let p = &file.protected;
    in_range(
        "protected.trial_user_fraction",
        p.trial_user_fraction,
        0.0,
        1.0,
        true,
        false,
    )?;
    if p.trial_list_length == Some(0) {
        return Err(Error::Config(
            "protected.trial_list_length must be at least 1".into(),
        ));
    }

    let mut sensitive = Vec::with_capacity(file.sensitive.len());
    for (k, e) in file.sensitive.iter().enumerate() {
        in_range(
            &format!("sensitive[{k}].lambda"),
            e.lambda,
            0.0,
            1.0,
            false,
            false,
        )?;
        let values = match (&e.protected, e.auto_percentile) {
            (Some(_), Some(_)) => {
                return Err(Error::Config(format!(
                    "sensitive[{k}] sets both `protected` and `auto_percentile`"
                )))
            }
            (Some(v), None) => ProtectedValues::Explicit(v.clone()),
            (None, pct) => {
                let percentile = pct.unwrap_or(DEFAULT_PERCENTILE);
                in_range(
                    &format!("sensitive[{k}].auto_percentile"),
                    percentile,
                    0.0,
                    1.0,
                    true,
                    true,
                )?;
                ProtectedValues::Auto { percentile }
            }
        };
        sensitive.push(SensitiveChoice {
            feature: e.feature.clone(),
            values,
            lambda: e.lambda,
        });
    }

    let schema = if file.schema.is_empty() {
        None
    } else {
        Some(FeatureSchema::new(
            file.schema
                .iter()
                .map(|e| Feature {
                    name: e.name.clone(),
                    domain: e.values.clone(),
                })
                .collect(),
        )?)
    };

    let simulation = SimulationConfig {
        seed: file.seed,
        batch_fraction: s.batch_fraction,
        window_batches: s.window_batches,
        display_length: s.display_length,
        candidate_pool_size: s.candidate_pool_size,
        choice,
        epsilon: s.epsilon,
        exclude_train: s.exclude_train,
        parallel: s.parallel,
    };
    simulation.validate()?;

    let join = |p: &Path| {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            base_dir.join(p)
        }
    };
    let dataset = DatasetBundle {
        items: join(&d.items),
        ratings: join(&d.ratings),
        scores: d.scores.as_deref().map(join),
        schema,
        sensitive,
        rating_scale: (d.rating_min, d.rating_max),
        train_fraction: d.train_fraction,
    };
    let model = FitParams {
        factors: m.factors,
        epochs: m.epochs,
        regularization: m.regularization,
        init_scale: m.init_scale,
        biases: m.biases,
        seed: file.seed,
    };
    let trial = TrialConfig {
        list_length: p.trial_list_length.unwrap_or(s.display_length),
        user_fraction: p.trial_user_fraction,
    };
    Ok(Config {
        file,
        simulation,
        dataset,
        model,
        trial,
    })
}

impl Config {
    /// Overrides the root seed everywhere it is used.
    pub fn set_seed(&mut self, seed: u64) {
        self.file.seed = seed;
        self.simulation.seed = seed;
        self.model.seed = seed;
    }

    pub fn set_choice(&mut self, choice: ChoiceFunction) {
        self.file.simulation.choice_function = choice.name().to_string();
        self.simulation.choice = choice;
    }

    /// The resolved configuration with defaults filled in, as TOML.
    pub fn to_toml(&self) -> String {
        toml::to_string(&self.file).expect("configuration serialises")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<Config> {
        parse_config_str(text, Path::new("/data"))
    }

    const MINIMAL: &str = "[dataset]\nitems = \"items.csv\"\nratings = \"ratings.csv\"\n";

    #[test]
    fn minimal_config_gets_defaults() {
        let c = parse(MINIMAL).unwrap();
        assert_eq!(c.simulation.epsilon, 0.05);
        assert_eq!(c.simulation.batch_fraction, 0.005);
        assert_eq!(c.simulation.window_batches, 20);
        assert_eq!(c.simulation.display_length, 10);
        assert_eq!(c.simulation.candidate_pool_size, 100);
        assert_eq!(c.dataset.items, PathBuf::from("/data/items.csv"));
        assert!(c.dataset.sensitive.is_empty());
        assert_eq!(c.trial.list_length, 10);
        assert_eq!(c.model, FitParams::default());
        let with_feature =
            parse(&format!("{MINIMAL}[[sensitive]]\nfeature = \"Region\"\n")).unwrap();
        assert_eq!(with_feature.dataset.sensitive[0].lambda, 0.5);
        assert_eq!(
            with_feature.dataset.sensitive[0].values,
            ProtectedValues::Auto { percentile: 0.25 }
        );
    }

    #[test]
    fn lambda_out_of_range_names_key() {
        let err = parse(&format!(
            "{MINIMAL}[[sensitive]]\nfeature = \"Region\"\nlambda = 1.3\n"
        ))
        .unwrap_err()
        .to_string();
        assert!(err.contains("sensitive[0].lambda"), "{err}");
    }

    #[test]
    fn unknown_choice_lists_valid_names() {
        let err = parse(&format!(
            "{MINIMAL}[simulation]\nchoice_function = \"borda\"\n"
        ))
        .unwrap_err()
        .to_string();
        for name in ["fixed", "least_misery", "dynamic", "allocation"] {
            assert!(err.contains(name), "{err}");
        }
    }

    #[test]
    fn fails_closed() {
        assert!(parse(&format!("{MINIMAL}[simulation]\nwindow = 3\n")).is_err());
        assert!(parse(&format!("{MINIMAL}colour = 1\n")).is_err());
        assert!(parse("[simulation]\nepsilon = 0.1\n").is_err());
        assert!(parse(&format!("{MINIMAL}[simulation]\nepsilon = \"small\"\n")).is_err());
        assert!(parse(&format!(
            "{MINIMAL}[[sensitive]]\nfeature = \"R\"\nprotected = [\"a\"]\nauto_percentile = 0.2\n"
        ))
        .is_err());
    }

    #[test]
    fn explicit_schema_and_round_trip() {
        let text = format!(
            "seed = 3\n{MINIMAL}[[schema]]\nname = \"Region\"\nvalues = [\"Africa\", \"India\"]\n\
             [[sensitive]]\nfeature = \"Region\"\nprotected = [\"India\"]\nlambda = 0.7\n"
        );
        let c = parse(&text).unwrap();
        assert_eq!(
            c.dataset.schema.as_ref().unwrap().feature(0).domain.len(),
            2
        );
        assert_eq!(c.model.seed, 3);
        let again = parse(&c.to_toml()).unwrap();
        assert_eq!(again, c);
    }
}
