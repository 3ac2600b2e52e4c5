//! The `run`, `compare` and `check` commands.

use std::path::{Path, PathBuf};

use ivstream::diagnostics::{gradient_check, sherman_morrison_check};
use ivstream::presets::{preset_specs, RunOptions};
use ivstream::{run_experiment, Algorithm, ExperimentSpec, MetricSeries};
use nalgebra::DVector;
use time::OffsetDateTime;

use crate::config::{Config, Overrides};
use crate::error::{CliError, Result};
use crate::output::{render_csv, write_atomic, RunManifest};

/// Environment variable capping the number of worker threads.
pub const THREADS_ENV: &str = "IVSTREAM_THREADS";

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Source {
    Config(PathBuf),
    Preset { name: String, cell: Option<String> },
}

/// A CSV file and the manifest describing it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Written {
    pub csv: PathBuf,
    pub manifest: PathBuf,
}

/// Thread count from `IVSTREAM_THREADS`; `None` when unset.
pub fn threads_from_env() -> Result<Option<usize>> {
    match std::env::var(THREADS_ENV) {
        Err(std::env::VarError::NotPresent) => Ok(None),
        Err(e) => Err(CliError::Config(format!("{THREADS_ENV}: {e}"))),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(CliError::Config(format!(
                "{THREADS_ENV} must be a positive integer, got {v:?}"
            ))),
        },
    }
}

fn config_stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "experiment".into())
}

pub fn load_specs(source: &Source, overrides: &Overrides) -> Result<Vec<ExperimentSpec>> {
    match source {
        Source::Config(path) => {
            let mut cfg = Config::load(path)?;
            cfg.apply(overrides);
            cfg.resolve(&config_stem(path))
        }
        Source::Preset { name, cell } => {
            let d = RunOptions::default();
            let opts = RunOptions {
                seed: overrides.seed.unwrap_or(d.seed),
                trials: overrides.trials.unwrap_or(d.trials),
                iters: overrides.iters.unwrap_or(d.iters),
            };
            Ok(preset_specs(name, cell.as_deref(), &opts)?)
        }
    }
}

/// Runs the specs in order on a pool of `threads` workers (rayon's default
/// when `None`). Returns the series and the pool size.
pub fn run_specs(specs: &[ExperimentSpec], threads: Option<usize>) -> Result<(Vec<MetricSeries>, usize)> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.unwrap_or(0))
        .build()?;
    let series = pool.install(|| specs.iter().map(run_experiment).collect::<Result<Vec<_>, _>>())?;
    Ok((series, pool.current_num_threads()))
}

fn distinct_algorithms(specs: &[ExperimentSpec]) -> Vec<Algorithm> {
    let mut out: Vec<Algorithm> = Vec::new();
    for s in specs {
        if !out.contains(&s.algorithm) {
            out.push(s.algorithm);
        }
    }
    out
}

/// Writes `series.csv` and `manifest.json`, plus `series_<alg>.csv` and
/// `manifest_<alg>.json` for each algorithm when there is more than one.
pub fn write_outputs(
    series: &[MetricSeries],
    out_dir: &Path,
    started: OffsetDateTime,
    threads: usize,
) -> Result<Vec<Written>> {
    std::fs::create_dir_all(out_dir).map_err(|source| CliError::Io {
        path: out_dir.to_path_buf(),
        source,
    })?;
    let finished = OffsetDateTime::now_utc();
    let mut groups: Vec<(String, Vec<MetricSeries>)> = vec![(String::new(), series.to_vec())];
    let algs = distinct_algorithms(&series.iter().map(|s| s.spec.clone()).collect::<Vec<_>>());
    if algs.len() > 1 {
        for a in algs {
            let part = series.iter().filter(|s| s.spec.algorithm == a).cloned().collect();
            groups.push((format!("_{}", a.name()), part));
        }
    }
    let mut written = Vec::with_capacity(groups.len());
    for (suffix, part) in groups {
        let csv = out_dir.join(format!("series{suffix}.csv"));
        let manifest = out_dir.join(format!("manifest{suffix}.json"));
        write_atomic(&csv, render_csv(&part).as_bytes())?;
        let m = RunManifest::new(&part, started, finished, threads, csv.clone(), manifest.clone());
        write_atomic(&manifest, m.to_json()?.as_bytes())?;
        written.push(Written { csv, manifest });
    }
    Ok(written)
}

fn execute(specs: &[ExperimentSpec], out_dir: &Path, threads: Option<usize>) -> Result<Vec<Written>> {
    let started = OffsetDateTime::now_utc();
    let (series, n) = run_specs(specs, threads)?;
    write_outputs(&series, out_dir, started, n)
}

/// Runs one configured algorithm, or every experiment of a preset.
pub fn cmd_run(
    source: &Source,
    out_dir: &Path,
    overrides: &Overrides,
    threads: Option<usize>,
) -> Result<Vec<Written>> {
    let specs = load_specs(source, overrides)?;
    if let Source::Config(path) = source {
        let n = distinct_algorithms(&specs).len();
        if n > 1 {
            return Err(CliError::Config(format!(
                "{} lists {n} algorithms; use `compare` to run them side by side",
                path.display()
            )));
        }
    }
    execute(&specs, out_dir, threads)
}

/// Runs every listed algorithm on the same seeds.
pub fn cmd_compare(
    source: &Source,
    out_dir: &Path,
    overrides: &Overrides,
    threads: Option<usize>,
) -> Result<Vec<Written>> {
    let specs = load_specs(source, overrides)?;
    execute(&specs, out_dir, threads)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CheckOptions {
    /// Negates the first diagonal entry of the initial O2SLS inverse.
    pub corrupt_u0: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub measured: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl std::fmt::Display for CheckOutcome {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{:<17} measured {:.3e}  tolerance {:.1e}  {}",
            self.name,
            self.measured,
            self.tolerance,
            if self.passed { "ok" } else { "FAILED" }
        )
    }
}

pub const GRADIENT_TOL: f64 = 1e-2;
pub const INVERSE_TOL: f64 = 1e-8;

fn outcome(name: &'static str, measured: f64, tolerance: f64) -> CheckOutcome {
    CheckOutcome {
        name,
        measured,
        tolerance,
        passed: measured <= tolerance,
    }
}

/// Gradient unbiasedness, the O2SLS inverse identities and thread-count
/// determinism on the configured model, at reduced scale.
pub fn cmd_check(
    config: Option<&Path>,
    overrides: &Overrides,
    opts: CheckOptions,
) -> Result<Vec<CheckOutcome>> {
    let mut cfg = match config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    cfg.apply(overrides);
    let dgp = cfg.dgp_config()?;
    let seed = cfg.seed.unwrap_or(0);
    let mut out = Vec::new();

    let draws = cfg.check.gradient_draws.unwrap_or(1_000_000);
    let theta = &dgp.theta_star + DVector::from_element(dgp.d_x, 1.0);
    let g = gradient_check(&dgp, &theta, draws, seed)?;
    out.push(outcome("gradient", g.rel_error, GRADIENT_TOL));

    let updates = cfg.check.sm_updates.unwrap_or(1000);
    let lambda = cfg.schedule.lambda.unwrap_or(ivstream::estimators::DEFAULT_LAMBDA);
    let gain = cfg.schedule.o2sls_gain.unwrap_or_default();
    let r = sherman_morrison_check(&dgp, updates, lambda, gain, seed, opts.corrupt_u0)?;
    out.push(outcome("sherman_morrison", r.max(), INVERSE_TOL));

    let mut small = cfg.clone();
    let iters = cfg.iters.unwrap_or(u64::MAX).min(cfg.check.determinism_iters.unwrap_or(2000));
    if Some(iters) != cfg.iters {
        small.checkpoints = None;
    }
    small.iters = Some(iters);
    small.trials = Some(cfg.check.determinism_trials.unwrap_or(4));
    let id = config.map(config_stem).unwrap_or_else(|| "check".into());
    let specs = small.resolve(&id)?;
    let a = render_csv(&run_specs(&specs, Some(1))?.0);
    let b = render_csv(&run_specs(&specs, Some(4))?.0);
    let mismatched = a.lines().zip(b.lines()).filter(|(x, y)| x != y).count()
        + a.lines().count().abs_diff(b.lines().count());
    out.push(outcome("determinism", mismatched as f64, 0.0));
    Ok(out)
}

pub fn first_failure(outcomes: &[CheckOutcome]) -> Option<&CheckOutcome> {
    outcomes.iter().find(|o| !o.passed)
}
