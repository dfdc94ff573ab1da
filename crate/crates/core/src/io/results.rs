//! Result files: `summary.csv`, `trace.csv` and `manifest.toml`.
//!
//! Floats are written with Rust's shortest round-trip formatting, so a trace
//! read back reproduces the in-memory values exactly. Files are written to a
//! temporary sibling and renamed into place.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::fairness::{regret_stats, RegretRecord};
use crate::simulator::{SimulationResult, TraceRow};

pub const SUMMARY_FILE: &str = "summary.csv";
pub const TRACE_FILE: &str = "trace.csv";
pub const MANIFEST_FILE: &str = "manifest.toml";

/// Writes `bytes` to `path` via a temporary file in the same directory.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path
        .parent()
        .filter(|d| !d.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("out");
    let tmp = dir.join(format!(".{name}.tmp"));
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    drop(f);
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Per-algorithm aggregate, as stored in `summary.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub algorithm: String,
    pub ndcg: f64,
    /// Mean protected exposure averaged over sensitive features.
    pub fairness: f64,
    /// Population variance of the per-batch average regret.
    pub fairness_variance: f64,
    pub regret_mean: f64,
    pub exposure: Vec<f64>,
    pub selections: Vec<usize>,
    pub skipped: usize,
    pub batches: usize,
}

impl From<&SimulationResult> for Summary {
    fn from(r: &SimulationResult) -> Self {
        Self {
            algorithm: r.choice.name().to_string(),
            ndcg: r.ndcg,
            fairness: r.fairness,
            fairness_variance: r.regret_variance,
            regret_mean: r.regret_mean,
            exposure: r.exposure.clone(),
            selections: r.selections.clone(),
            skipped: r.skipped,
            batches: r.trace.len(),
        }
    }
}

fn csv_bytes(header: Vec<String>, rows: Vec<Vec<String>>) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(&header)
        .map_err(|e| Error::csv("writing header", e))?;
    for r in rows {
        w.write_record(&r)
            .map_err(|e| Error::csv("writing row", e))?;
    }
    w.into_inner()
        .map_err(|e| Error::InvalidArgument(format!("flushing csv: {e}")))
}

fn per_feature(prefix: &str, features: &[String]) -> Vec<String> {
    features.iter().map(|f| format!("{prefix}{f}")).collect()
}

pub fn summary_header(features: &[String]) -> Vec<String> {
    let mut h: Vec<String> = [
        "algorithm",
        "ndcg",
        "fairness",
        "fairness_variance",
        "regret_mean",
    ]
    .map(String::from)
    .to_vec();
    h.extend(per_feature("exposure_", features));
    h.extend(per_feature("selected_", features));
    h.push("skipped".into());
    h.push("batches".into());
    h
}

pub fn summary_csv(features: &[String], summaries: &[Summary]) -> Result<Vec<u8>> {
    let rows = summaries
        .iter()
        .map(|s| {
            let mut r = vec![
                s.algorithm.clone(),
                s.ndcg.to_string(),
                s.fairness.to_string(),
                s.fairness_variance.to_string(),
                s.regret_mean.to_string(),
            ];
            r.extend(s.exposure.iter().map(f64::to_string));
            r.extend(s.selections.iter().map(usize::to_string));
            r.push(s.skipped.to_string());
            r.push(s.batches.to_string());
            r
        })
        .collect();
    csv_bytes(summary_header(features), rows)
}

pub fn trace_header(features: &[String]) -> Vec<String> {
    let mut h: Vec<String> = vec!["algorithm".into(), "batch_index".into(), "users".into()];
    h.extend(per_feature("metric_", features));
    h.extend(per_feature("regret_", features));
    h.push("average_regret".into());
    h.extend(per_feature("exposure_", features));
    h.extend(per_feature("selected_", features));
    h.push("skipped".into());
    h.push("ndcg".into());
    h.push("ndcg_users".into());
    h
}

fn trace_record(algorithm: &str, r: &TraceRow) -> Vec<String> {
    let mut out = vec![
        algorithm.to_string(),
        r.batch_index.to_string(),
        r.users.to_string(),
    ];
    out.extend(r.metrics.iter().map(f64::to_string));
    out.extend(r.regret.iter().map(f64::to_string));
    out.push(r.average_regret.to_string());
    out.extend(r.exposure.iter().map(f64::to_string));
    out.extend(r.selections.iter().map(usize::to_string));
    out.push(r.skipped.to_string());
    out.push(r.ndcg.to_string());
    out.push(r.ndcg_users.to_string());
    out
}

pub fn trace_csv(results: &[SimulationResult]) -> Result<Vec<u8>> {
    let features = check_features(results)?;
    let rows = results
        .iter()
        .flat_map(|res| {
            res.trace
                .iter()
                .map(move |r| trace_record(res.choice.name(), r))
        })
        .collect();
    csv_bytes(trace_header(&features), rows)
}

fn check_features(results: &[SimulationResult]) -> Result<Vec<String>> {
    let first = results
        .first()
        .ok_or_else(|| Error::InvalidArgument("no results to write".into()))?;
    if results.iter().any(|r| r.features != first.features) {
        return Err(Error::InvalidArgument(
            "results disagree on sensitive features".into(),
        ));
    }
    Ok(first.features.clone())
}

/// Writes `summary.csv`, `trace.csv` and, when given, `manifest.toml` into
/// `out_dir`. Returns the paths written.
pub fn write_results(
    out_dir: &Path,
    results: &[SimulationResult],
    manifest: Option<&str>,
) -> Result<Vec<PathBuf>> {
    let features = check_features(results)?;
    let summaries: Vec<Summary> = results.iter().map(Summary::from).collect();
    let mut written = Vec::new();
    let summary = out_dir.join(SUMMARY_FILE);
    atomic_write(&summary, &summary_csv(&features, &summaries)?)?;
    written.push(summary);
    let trace = out_dir.join(TRACE_FILE);
    atomic_write(&trace, &trace_csv(results)?)?;
    written.push(trace);
    if let Some(text) = manifest {
        let path = out_dir.join(MANIFEST_FILE);
        atomic_write(&path, text.as_bytes())?;
        written.push(path);
    }
    Ok(written)
}

/// A trace file read back into memory.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub features: Vec<String>,
    /// Rows per algorithm, in file order of first appearance.
    pub runs: Vec<(String, Vec<TraceRow>)>,
}

fn parse_field<T: std::str::FromStr>(path: &Path, row: usize, col: &str, raw: &str) -> Result<T> {
    raw.parse().map_err(|_| Error::Parse {
        path: path.to_path_buf(),
        message: format!("row {row}, column `{col}`: cannot parse `{raw}`"),
    })
}

/// Parses a trace file written by [`write_results`].
pub fn read_trace(path: &Path) -> Result<Trace> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_trace(path, &bytes)
}

pub fn parse_trace(path: &Path, bytes: &[u8]) -> Result<Trace> {
    let mut rdr = csv::Reader::from_reader(bytes);
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| Error::csv("trace header", e))?
        .iter()
        .map(String::from)
        .collect();
    let features: Vec<String> = header
        .iter()
        .filter_map(|h| h.strip_prefix("metric_").map(String::from))
        .collect();
    if header != trace_header(&features) {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            message: "unexpected trace header".into(),
        });
    }
    let n = features.len();
    let mut runs: Vec<(String, Vec<TraceRow>)> = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let row = line + 2;
        let rec = rec.map_err(|e| Error::csv(format!("trace row {row}"), e))?;
        let cell = |k: usize| rec.get(k).unwrap_or_default();
        let name = |k: usize| header[k].as_str();
        let floats = |start: usize| -> Result<Vec<f64>> {
            (start..start + n)
                .map(|k| parse_field(path, row, name(k), cell(k)))
                .collect()
        };
        let base = 3;
        let metrics = floats(base)?;
        let regret = floats(base + n)?;
        let average_regret = parse_field(path, row, name(base + 2 * n), cell(base + 2 * n))?;
        let exposure = floats(base + 2 * n + 1)?;
        let selections = (base + 3 * n + 1..base + 4 * n + 1)
            .map(|k| parse_field(path, row, name(k), cell(k)))
            .collect::<Result<Vec<usize>>>()?;
        let tail = base + 4 * n + 1;
        let tr = TraceRow {
            batch_index: parse_field(path, row, name(1), cell(1))?,
            users: parse_field(path, row, name(2), cell(2))?,
            metrics,
            regret,
            average_regret,
            exposure,
            selections,
            skipped: parse_field(path, row, name(tail), cell(tail))?,
            ndcg: parse_field(path, row, name(tail + 1), cell(tail + 1))?,
            ndcg_users: parse_field(path, row, name(tail + 2), cell(tail + 2))?,
        };
        let algorithm = cell(0).to_string();
        match runs.iter_mut().find(|(a, _)| *a == algorithm) {
            Some((_, rows)) => rows.push(tr),
            None => runs.push((algorithm, vec![tr])),
        }
    }
    Ok(Trace { features, runs })
}

/// Recomputes the per-algorithm summary from trace rows alone.
pub fn evaluate(trace: &Trace) -> Result<Vec<Summary>> {
    let n = trace.features.len();
    let mut out = Vec::with_capacity(trace.runs.len());
    for (algorithm, rows) in &trace.runs {
        let series: Vec<RegretRecord> = rows
            .iter()
            .map(|r| RegretRecord {
                batch_index: r.batch_index,
                per_feature: r.regret.clone(),
                average: r.average_regret,
            })
            .collect();
        let (regret_mean, fairness_variance) = regret_stats(&series)?;
        let users: usize = rows.iter().map(|r| r.users).sum();
        let mut exposure = vec![0.0; n];
        let mut selections = vec![0usize; n];
        let (mut ndcg_sum, mut ndcg_users) = (0.0, 0usize);
        for r in rows {
            for j in 0..n {
                exposure[j] += r.exposure[j] * r.users as f64;
                selections[j] += r.selections[j];
            }
            ndcg_sum += r.ndcg * r.ndcg_users as f64;
            ndcg_users += r.ndcg_users;
        }
        exposure.iter_mut().for_each(|e| *e /= users.max(1) as f64);
        let fairness = if n == 0 {
            0.0
        } else {
            exposure.iter().sum::<f64>() / n as f64
        };
        out.push(Summary {
            algorithm: algorithm.clone(),
            ndcg: if ndcg_users > 0 {
                ndcg_sum / ndcg_users as f64
            } else {
                0.0
            },
            fairness,
            fairness_variance,
            regret_mean,
            exposure,
            selections,
            skipped: rows.iter().map(|r| r.skipped).sum(),
            batches: rows.len(),
        });
    }
    Ok(out)
}

/// Reads `summary.csv` into `(algorithm, column -> value)` maps.
pub fn read_summary(path: &Path) -> Result<Vec<(String, BTreeMap<String, f64>)>> {
    let mut rdr =
        csv::Reader::from_path(path).map_err(|e| Error::csv(path.display().to_string(), e))?;
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| Error::csv("summary header", e))?
        .iter()
        .map(String::from)
        .collect();
    let mut out = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::csv(format!("summary row {}", line + 2), e))?;
        let mut values = BTreeMap::new();
        for (k, h) in header.iter().enumerate().skip(1) {
            values.insert(
                h.clone(),
                parse_field(path, line + 2, h, rec.get(k).unwrap_or_default())?,
            );
        }
        out.push((rec.get(0).unwrap_or_default().to_string(), values));
    }
    Ok(out)
}
