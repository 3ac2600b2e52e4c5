//! Long-format CSV series and the JSON manifest that accompanies each file.

use std::io::Write;
use std::path::{Path, PathBuf};

use ivstream::harness::{trial_seed, RNG_ALGORITHM};
use ivstream::{ExperimentSpec, MetricSeries};
use serde::{Deserialize, Serialize};
use time::format_description::well_known::Rfc3339;
use time::OffsetDateTime;

use crate::error::{CliError, Result};

pub const CSV_HEADER: &str = "experiment_id,algorithm,trial,iteration,metric,value";
pub const TOOLKIT_VERSION: &str = concat!("ivstream ", env!("CARGO_PKG_VERSION"));

#[derive(Debug)]
struct Row<'a> {
    algorithm: &'static str,
    trial: usize,
    iteration: u64,
    metric: &'static str,
    experiment_id: &'a str,
    value: f64,
}

/// Renders series as CSV. Rows are ordered by algorithm, trial, iteration
/// and metric (experiment id breaks the remaining ties); values use the
/// shortest decimal that parses back to the same `f64`.
pub fn render_csv(series: &[MetricSeries]) -> String {
    let mut rows = Vec::new();
    for s in series {
        for t in &s.trials {
            for p in &t.points {
                for (metric, value) in p.values() {
                    rows.push(Row {
                        algorithm: s.spec.algorithm.name(),
                        trial: t.trial,
                        iteration: p.iteration,
                        metric,
                        experiment_id: &s.spec.experiment_id,
                        value,
                    });
                }
            }
        }
    }
    rows.sort_by(|a, b| {
        (a.algorithm, a.trial, a.iteration, a.metric, a.experiment_id).cmp(&(
            b.algorithm,
            b.trial,
            b.iteration,
            b.metric,
            b.experiment_id,
        ))
    });
    let mut out = String::with_capacity(64 * (rows.len() + 1));
    out.push_str(CSV_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{:?}\n",
            r.experiment_id, r.algorithm, r.trial, r.iteration, r.metric, r.value
        ));
    }
    out
}

/// Writes `contents` through a temporary file in the same directory, then
/// renames it into place.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let io = |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    };
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io)?;
    tmp.write_all(contents).map_err(io)?;
    tmp.as_file().sync_all().map_err(io)?;
    tmp.persist(path).map_err(|e| io(e.error))?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRecord {
    /// The fully resolved spec, defaults included.
    pub spec: ExperimentSpec,
    /// Per-trial seeds derived from `spec.base_seed`.
    pub trial_seeds: Vec<u64>,
    /// Hash of every sample each trial consumed; equal hashes mean paired
    /// streams.
    pub stream_hashes: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub toolkit_version: String,
    pub rng_algorithm: String,
    pub seed_derivation: String,
    pub started_at: String,
    pub finished_at: String,
    pub threads: usize,
    pub csv_path: PathBuf,
    pub manifest_path: PathBuf,
    pub experiments: Vec<ExperimentRecord>,
}

pub fn timestamp(t: OffsetDateTime) -> String {
    t.format(&Rfc3339).unwrap_or_else(|_| t.unix_timestamp().to_string())
}

impl RunManifest {
    pub fn new(
        series: &[MetricSeries],
        started: OffsetDateTime,
        finished: OffsetDateTime,
        threads: usize,
        csv_path: PathBuf,
        manifest_path: PathBuf,
    ) -> Self {
        RunManifest {
            toolkit_version: TOOLKIT_VERSION.into(),
            rng_algorithm: RNG_ALGORITHM.into(),
            seed_derivation: "trial i: splitmix64(base_seed + (i + 1) * 0x9E3779B97F4A7C15); \
                              stream 0 trains, stream 1 draws the test set"
                .into(),
            started_at: timestamp(started),
            finished_at: timestamp(finished),
            threads,
            csv_path,
            manifest_path,
            experiments: series
                .iter()
                .map(|s| ExperimentRecord {
                    spec: s.spec.clone(),
                    trial_seeds: (0..s.spec.trials)
                        .map(|i| trial_seed(s.spec.base_seed, i))
                        .collect(),
                    stream_hashes: s.stream_hashes(),
                })
                .collect(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&text)
    }
}
