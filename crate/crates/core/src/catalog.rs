//! Item universe, categorical feature schema and sensitive-feature designation.

use std::collections::{HashMap, HashSet};
use std::io::Read;

use log::warn;

use crate::error::{Error, Result};
use crate::recommender::RecommendationList;

/// One categorical feature and its finite domain.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Feature {
    pub name: String,
    pub domain: Vec<String>,
}

/// Ordered set of categorical features. Values are stored by position in the
/// feature's domain.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeatureSchema {
    features: Vec<Feature>,
    by_name: HashMap<String, usize>,
    value_index: Vec<HashMap<String, usize>>,
}

impl FeatureSchema {
    pub fn new(features: Vec<Feature>) -> Result<Self> {
        let mut by_name = HashMap::with_capacity(features.len());
        let mut value_index = Vec::with_capacity(features.len());
        let mut cleaned = Vec::with_capacity(features.len());
        for (idx, f) in features.into_iter().enumerate() {
            let name = f.name.trim().to_string();
            if name.is_empty() {
                return Err(Error::Schema(format!("feature #{idx} has an empty name")));
            }
            if name == "item_id" {
                return Err(Error::Schema("`item_id` is reserved".into()));
            }
            if by_name.insert(name.clone(), idx).is_some() {
                return Err(Error::Schema(format!("duplicate feature `{name}`")));
            }
            if f.domain.is_empty() {
                return Err(Error::Schema(format!(
                    "feature `{name}` has an empty domain"
                )));
            }
            let mut values = HashMap::with_capacity(f.domain.len());
            let mut domain = Vec::with_capacity(f.domain.len());
            for v in f.domain {
                let v = v.trim().to_string();
                if values.insert(v.clone(), domain.len()).is_some() {
                    return Err(Error::Schema(format!(
                        "feature `{name}` lists value `{v}` twice"
                    )));
                }
                domain.push(v);
            }
            value_index.push(values);
            cleaned.push(Feature { name, domain });
        }
        Ok(Self {
            features: cleaned,
            by_name,
            value_index,
        })
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn features(&self) -> &[Feature] {
        &self.features
    }

    pub fn feature(&self, idx: usize) -> &Feature {
        &self.features[idx]
    }

    pub fn feature_index(&self, name: &str) -> Option<usize> {
        self.by_name.get(name.trim()).copied()
    }

    pub fn value_index(&self, feature: usize, value: &str) -> Option<usize> {
        self.value_index[feature].get(value.trim()).copied()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Item {
    pub id: String,
    /// Domain position of each feature value, in schema order.
    pub values: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct ItemCatalog {
    schema: FeatureSchema,
    items: Vec<Item>,
    by_id: HashMap<String, usize>,
}

impl ItemCatalog {
    pub fn new(schema: FeatureSchema) -> Self {
        Self {
            schema,
            items: Vec::new(),
            by_id: HashMap::new(),
        }
    }

    /// Adds an item given its raw string values in schema order.
    pub fn push<S: AsRef<str>>(&mut self, id: &str, values: &[S]) -> Result<usize> {
        let id = id.trim().to_string();
        if values.len() != self.schema.len() {
            return Err(Error::Schema(format!(
                "item `{id}` has {} values, schema has {} features",
                values.len(),
                self.schema.len()
            )));
        }
        if self.by_id.contains_key(&id) {
            return Err(Error::DuplicateItem(id));
        }
        let mut resolved = Vec::with_capacity(values.len());
        for (f, raw) in values.iter().enumerate() {
            let raw = raw.as_ref().trim();
            let v = self
                .schema
                .value_index(f, raw)
                .ok_or_else(|| Error::DomainViolation {
                    item: id.clone(),
                    feature: self.schema.feature(f).name.clone(),
                    value: raw.to_string(),
                })?;
            resolved.push(v);
        }
        let idx = self.items.len();
        self.by_id.insert(id.clone(), idx);
        self.items.push(Item {
            id,
            values: resolved,
        });
        Ok(idx)
    }

    /// Reads a comma-separated items table with an `item_id` column and one
    /// column per schema feature. Extra columns are ignored.
    pub fn from_csv<R: Read>(reader: R, schema: FeatureSchema) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(reader);
        let headers = rdr
            .headers()
            .map_err(|e| Error::csv("items header", e))?
            .clone();
        let col = |name: &str| {
            headers
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| Error::MissingColumn(name.to_string()))
        };
        let id_col = col("item_id")?;
        let feature_cols = schema
            .features()
            .iter()
            .map(|f| col(&f.name))
            .collect::<Result<Vec<_>>>()?;

        let mut catalog = ItemCatalog::new(schema);
        let mut values: Vec<String> = Vec::with_capacity(feature_cols.len());
        for (line, record) in rdr.records().enumerate() {
            let record = record.map_err(|e| Error::csv(format!("items row {}", line + 2), e))?;
            values.clear();
            for &c in &feature_cols {
                values.push(record.get(c).unwrap_or_default().to_string());
            }
            catalog.push(record.get(id_col).unwrap_or_default(), &values)?;
        }
        Ok(catalog)
    }

    pub fn schema(&self) -> &FeatureSchema {
        &self.schema
    }

    pub fn items(&self) -> &[Item] {
        &self.items
    }

    pub fn item(&self, idx: usize) -> &Item {
        &self.items[idx]
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.by_id.get(id.trim()).copied()
    }

    pub fn value_of(&self, item: usize, feature: usize) -> &str {
        &self.schema.feature(feature).domain[self.items[item].values[feature]]
    }
}

/// Builds a schema by scanning an items table: every non-`item_id` column
/// becomes a feature whose domain is its distinct values in order of first
/// appearance.
pub fn infer_schema<R: Read>(reader: R) -> Result<FeatureSchema> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| Error::csv("items header", e))?
        .clone();
    if !headers.iter().any(|h| h == "item_id") {
        return Err(Error::MissingColumn("item_id".into()));
    }
    let cols: Vec<(usize, String)> = headers
        .iter()
        .enumerate()
        .filter(|(_, h)| *h != "item_id")
        .map(|(i, h)| (i, h.to_string()))
        .collect();
    let mut domains: Vec<(Vec<String>, HashSet<String>)> =
        vec![(Vec::new(), HashSet::new()); cols.len()];
    for (line, record) in rdr.records().enumerate() {
        let record = record.map_err(|e| Error::csv(format!("items row {}", line + 2), e))?;
        for (k, (c, _)) in cols.iter().enumerate() {
            let v = record.get(*c).unwrap_or_default().to_string();
            if domains[k].1.insert(v.clone()) {
                domains[k].0.push(v);
            }
        }
    }
    FeatureSchema::new(
        cols.into_iter()
            .zip(domains)
            .map(|((_, name), (domain, _))| Feature { name, domain })
            .collect(),
    )
}

/// A sensitive feature with its protected values and accuracy/fairness
/// trade-off weight.
#[derive(Debug, Clone, PartialEq)]
pub struct SensitiveFeature {
    pub name: String,
    pub feature: usize,
    /// Indexed by domain position.
    pub protected: Vec<bool>,
    pub lambda: f64,
}

impl SensitiveFeature {
    pub fn protects(&self, item: &Item) -> bool {
        self.protected[item.values[self.feature]]
    }

    pub fn protected_values<'a>(&'a self, schema: &'a FeatureSchema) -> Vec<&'a str> {
        schema
            .feature(self.feature)
            .domain
            .iter()
            .zip(&self.protected)
            .filter(|(_, &p)| p)
            .map(|(v, _)| v.as_str())
            .collect()
    }
}

/// Ordered list of sensitive features. The order fixes the re-ranker index
/// used everywhere downstream.
#[derive(Debug, Clone, PartialEq)]
pub struct SensitiveSpec {
    entries: Vec<SensitiveFeature>,
}

impl SensitiveSpec {
    /// `entries` are `(feature name, protected values, lambda)`.
    pub fn new<S: AsRef<str>>(
        schema: &FeatureSchema,
        entries: &[(S, Vec<S>, f64)],
    ) -> Result<Self> {
        let mut seen = HashSet::new();
        let mut out = Vec::with_capacity(entries.len());
        for (name, values, lambda) in entries {
            let name = name.as_ref().trim();
            let feature = schema
                .feature_index(name)
                .ok_or_else(|| Error::UnknownFeature(name.to_string()))?;
            if !seen.insert(feature) {
                return Err(Error::SensitiveSpec(format!(
                    "feature `{name}` listed twice"
                )));
            }
            if !(0.0..=1.0).contains(lambda) {
                return Err(Error::SensitiveSpec(format!(
                    "lambda for `{name}` is {lambda}, must lie in [0, 1]"
                )));
            }
            let domain_len = schema.feature(feature).domain.len();
            let mut protected = vec![false; domain_len];
            for v in values {
                let v = v.as_ref();
                let idx = schema.value_index(feature, v).ok_or_else(|| {
                    Error::SensitiveSpec(format!("`{v}` is not a value of feature `{name}`"))
                })?;
                protected[idx] = true;
            }
            let count = protected.iter().filter(|&&p| p).count();
            if count == 0 || count == domain_len {
                return Err(Error::SensitiveSpec(format!(
                    "protected values of `{name}` must be a non-empty strict subset of its domain"
                )));
            }
            out.push(SensitiveFeature {
                name: name.to_string(),
                feature,
                protected,
                lambda: *lambda,
            });
        }
        Ok(Self { entries: out })
    }

    pub fn entries(&self) -> &[SensitiveFeature] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn names(&self) -> Vec<String> {
        self.entries.iter().map(|e| e.name.clone()).collect()
    }

    pub fn position(&self, feature: &str) -> Option<usize> {
        self.entries.iter().position(|e| e.name == feature.trim())
    }

    pub fn is_protected(&self, item: &Item, feature: &str) -> Result<bool> {
        let j = self
            .position(feature)
            .ok_or_else(|| Error::UnknownFeature(feature.to_string()))?;
        Ok(self.entries[j].protects(item))
    }
}

/// Precomputed protected flags, one row per catalog item and one column per
/// sensitive feature.
#[derive(Debug, Clone)]
pub struct ProtectionTable {
    n_features: usize,
    flags: Vec<bool>,
}

impl ProtectionTable {
    pub fn new(catalog: &ItemCatalog, spec: &SensitiveSpec) -> Self {
        let n_features = spec.len();
        let mut flags = Vec::with_capacity(catalog.len() * n_features);
        for item in catalog.items() {
            flags.extend(spec.entries().iter().map(|e| e.protects(item)));
        }
        Self { n_features, flags }
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    #[inline]
    pub fn is_protected(&self, item: usize, feature: usize) -> bool {
        self.flags[item * self.n_features + feature]
    }
}

/// Selects protected values for `feature` as those recommended least often in
/// a trial run.
///
/// Each domain value's appearance count over `trial_lists` forms a frequency
/// multiset (values never recommended count as zero). A value is protected
/// when its count is at or below the nearest-rank `percentile` quantile of
/// that multiset. If that would protect the whole domain the result is empty
/// and a warning is logged.
pub fn identify_protected(
    trial_lists: &[RecommendationList],
    catalog: &ItemCatalog,
    feature: &str,
    percentile: f64,
) -> Result<Vec<String>> {
    let f = catalog
        .schema()
        .feature_index(feature)
        .ok_or_else(|| Error::UnknownFeature(feature.to_string()))?;
    if trial_lists.is_empty() {
        return Err(Error::InvalidArgument("trial lists are empty".into()));
    }
    if !(percentile > 0.0 && percentile < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "percentile {percentile} must lie in (0, 1)"
        )));
    }
    let domain = &catalog.schema().feature(f).domain;
    let mut counts = vec![0usize; domain.len()];
    for list in trial_lists {
        for entry in list.entries() {
            counts[catalog.item(entry.item).values[f]] += 1;
        }
    }
    let threshold = nearest_rank(&counts, percentile);
    let selected: Vec<String> = domain
        .iter()
        .zip(&counts)
        .filter(|(_, &c)| c <= threshold)
        .map(|(v, _)| v.clone())
        .collect();
    if selected.len() == domain.len() {
        warn!(
            "feature `{feature}`: every value falls at or below the {percentile} quantile; no protected values selected"
        );
        return Ok(Vec::new());
    }
    Ok(selected)
}

fn nearest_rank(values: &[usize], p: f64) -> usize {
    let mut sorted = values.to_vec();
    sorted.sort_unstable();
    // Guard against p * n landing a hair above an integer.
    let rank = ((p * sorted.len() as f64) - 1e-9).ceil().max(1.0) as usize;
    sorted[rank.min(sorted.len()) - 1]
}
