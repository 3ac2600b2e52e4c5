//! Ready-made experiments for the three simulation studies.
//!
//! * `fig1`: two-sample SGD on the first model family, cells
//!   `dx{4,8}_dz{8,16}_c{0.1,1}_phi_{id,sq}` (dimension pairs are fixed).
//! * `fig2`: OTSG, CSO and O2SLS on the endogenous linear family, cells
//!   `dx{1,8}_dz{1,16}_rho{1,4}_sig{0.5,1}` with a 400-sample test set.
//! * `fig3`: OTSG against CSO on the scalar model with `γ* = −1`,
//!   initialized at `γ₀ = 10`.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dgp::{random_unit_vector, DgpConfig, Phi};
use crate::error::{Error, Result};
use crate::estimators::Algorithm;
use crate::harness::{log_checkpoints, ExperimentSpec, Init, Schedules, DEFAULT_CHECKPOINTS};
use crate::oracle::{mc_moments, summarize, theory_constants, PopulationSummary};
use crate::schedule::{theorem1_alpha, theorem2_schedules, StepSchedule};

pub const PRESETS: [&str; 3] = ["fig1", "fig2", "fig3"];
pub const DEFAULT_TRIALS: usize = 50;
pub const DEFAULT_ITERS: u64 = 100_000;
pub const TEST_N: usize = 400;
/// Seed of the planted unit vector `θ*`.
pub const THETA_SEED: u64 = 20_240_601;
/// Seed and size of the Monte-Carlo moments used when no closed form exists.
pub const MC_SEED: u64 = 7;
pub const MC_SAMPLES: usize = 200_000;

/// Two-timescale steps used for the second study, `α_t = β_t = 0.2·t^(−0.8)`.
/// Stable up to `d_z = 16` without dimension-dependent tuning.
pub fn fig2_schedules() -> Schedules {
    let s = StepSchedule::Polynomial {
        coeff: 0.2,
        exponent: 0.8,
    };
    Schedules {
        alpha: Some(s),
        beta: Some(s),
        ..Schedules::default()
    }
}

/// Steps for the third study; `b > 2 − 2a` with `a, b ∈ (½, 1)`.
pub fn fig3_schedules() -> Schedules {
    Schedules {
        alpha: Some(StepSchedule::Polynomial {
            coeff: 0.1,
            exponent: 0.7,
        }),
        beta: Some(StepSchedule::Polynomial {
            coeff: 0.25,
            exponent: 0.8,
        }),
        ..Schedules::default()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunOptions {
    pub seed: u64,
    pub trials: usize,
    pub iters: u64,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            seed: 0,
            trials: DEFAULT_TRIALS,
            iters: DEFAULT_ITERS,
        }
    }
}

/// Closed form when available, otherwise seeded Monte-Carlo moments.
pub fn population(cfg: &DgpConfig) -> Result<PopulationSummary> {
    match summarize(cfg) {
        Err(Error::NonlinearFamily) => {
            mc_moments(&mut ChaCha8Rng::seed_from_u64(MC_SEED), cfg, MC_SAMPLES)
        }
        other => other,
    }
}

fn fmt_num(v: f64) -> String {
    format!("{v}")
}

fn fig1_dims() -> [(usize, usize); 2] {
    [(4, 8), (8, 16)]
}

pub fn fig1_cell_name(d_x: usize, d_z: usize, c: f64, phi: Phi) -> String {
    let p = match phi {
        Phi::Identity => "id",
        Phi::Square => "sq",
    };
    format!("dx{d_x}_dz{d_z}_c{}_phi_{p}", fmt_num(c))
}

pub fn fig2_cell_name(d_x: usize, d_z: usize, rho: f64, sigma_eps: f64) -> String {
    format!("dx{d_x}_dz{d_z}_rho{}_sig{}", fmt_num(rho), fmt_num(sigma_eps))
}

fn fig1_grid() -> Vec<(String, DgpConfig)> {
    let mut out = Vec::new();
    for phi in [Phi::Identity, Phi::Square] {
        for (d_x, d_z) in fig1_dims() {
            for c in [0.1, 1.0] {
                let theta = random_unit_vector(d_x, THETA_SEED);
                out.push((
                    fig1_cell_name(d_x, d_z, c, phi),
                    DgpConfig::fig1(d_x, d_z, c, phi, theta),
                ));
            }
        }
    }
    out
}

fn fig2_grid() -> Vec<(String, DgpConfig)> {
    let mut out = Vec::new();
    for (d_x, d_z) in [(1, 1), (8, 16)] {
        for rho in [1.0, 4.0] {
            for sigma in [0.5, 1.0] {
                let theta = random_unit_vector(d_x, THETA_SEED);
                out.push((
                    fig2_cell_name(d_x, d_z, rho, sigma),
                    DgpConfig::fig2(d_x, d_z, rho, sigma, theta),
                ));
            }
        }
    }
    out
}

/// The third study's model: scalar, `θ* = 1`, `γ* = −1`, `ρ = 4`, `σ_ε = 1`.
pub fn fig3_dgp() -> DgpConfig {
    let mut cfg = DgpConfig::fig2(1, 1, 4.0, 1.0, DVector::from_element(1, 1.0));
    cfg.gamma_star = DMatrix::from_element(1, 1, -1.0);
    cfg
}

/// Every DGP of the studies, keyed by `preset/cell`.
pub fn all_dgps() -> Vec<(String, DgpConfig)> {
    let mut out: Vec<_> = fig1_grid()
        .into_iter()
        .map(|(n, c)| (format!("fig1/{n}"), c))
        .collect();
    out.extend(fig2_grid().into_iter().map(|(n, c)| (format!("fig2/{n}"), c)));
    out.push(("fig3/default".into(), fig3_dgp()));
    out
}

pub fn cell_names(preset: &str) -> Result<Vec<String>> {
    Ok(match preset {
        "fig1" => fig1_grid().into_iter().map(|(n, _)| n).collect(),
        "fig2" => fig2_grid().into_iter().map(|(n, _)| n).collect(),
        "fig3" => vec!["default".into()],
        other => return Err(unknown_preset(other)),
    })
}

fn unknown_preset(name: &str) -> Error {
    Error::InvalidConfig(format!(
        "unknown preset `{name}` (expected one of {})",
        PRESETS.join(", ")
    ))
}

fn base_spec(
    id: String,
    dgp: DgpConfig,
    algorithm: Algorithm,
    schedules: Schedules,
    opts: &RunOptions,
) -> ExperimentSpec {
    ExperimentSpec::new(id, dgp, algorithm, schedules, opts.iters, opts.trials, opts.seed)
}

/// TOSG with the horizon-dependent constant step `log T / (μT)`.
pub fn theorem1_spec(id: String, dgp: DgpConfig, opts: &RunOptions) -> Result<ExperimentSpec> {
    let summary = population(&dgp)?;
    let k = theory_constants(&dgp, &summary, None);
    let alpha = theorem1_alpha(opts.iters, &k)?.schedule;
    let schedules = Schedules {
        alpha: Some(alpha),
        ..Schedules::default()
    };
    Ok(base_spec(id, dgp, Algorithm::Tosg, schedules, opts))
}

/// OTSG with the polynomial schedules derived from the population constants.
pub fn theorem2_spec(
    id: String,
    dgp: DgpConfig,
    iota: f64,
    opts: &RunOptions,
) -> Result<ExperimentSpec> {
    let summary = population(&dgp)?;
    let mut k = theory_constants(&dgp, &summary, None);
    k.iota = iota;
    let (alpha, beta) = theorem2_schedules(&k, dgp.d_z)?;
    let schedules = Schedules {
        alpha: Some(alpha),
        beta: Some(beta),
        ..Schedules::default()
    };
    Ok(base_spec(id, dgp, Algorithm::Otsg, schedules, opts))
}

/// Specs for a preset, optionally restricted to one cell. Algorithms that
/// share a cell share the experiment id and seed, so their streams pair up.
pub fn preset_specs(preset: &str, cell: Option<&str>, opts: &RunOptions) -> Result<Vec<ExperimentSpec>> {
    let names = cell_names(preset)?;
    if let Some(c) = cell {
        if !names.iter().any(|n| n == c) {
            return Err(Error::InvalidConfig(format!(
                "preset `{preset}` has no cell `{c}`; available: {}",
                names.join(", ")
            )));
        }
    }
    let keep = |n: &str| cell.is_none_or(|c| c == n);
    let mut out = Vec::new();
    match preset {
        "fig1" => {
            for (name, dgp) in fig1_grid().into_iter().filter(|(n, _)| keep(n)) {
                out.push(theorem1_spec(format!("fig1_{name}"), dgp, opts)?);
            }
        }
        "fig2" => {
            for (name, dgp) in fig2_grid().into_iter().filter(|(n, _)| keep(n)) {
                for alg in [Algorithm::Otsg, Algorithm::Cso, Algorithm::O2sls] {
                    let mut spec =
                        base_spec(format!("fig2_{name}"), dgp.clone(), alg, fig2_schedules(), opts);
                    spec.test_n = TEST_N;
                    out.push(spec);
                }
            }
        }
        "fig3" => {
            for alg in [Algorithm::Otsg, Algorithm::Cso] {
                let mut spec = base_spec("fig3".into(), fig3_dgp(), alg, fig3_schedules(), opts);
                spec.init = Init {
                    theta0: Some(DVector::zeros(1)),
                    gamma0: Some(DMatrix::from_element(1, 1, 10.0)),
                };
                out.push(spec);
            }
        }
        other => return Err(unknown_preset(other)),
    }
    for s in &mut out {
        s.checkpoints = log_checkpoints(s.iters, DEFAULT_CHECKPOINTS);
        s.validate()?;
    }
    Ok(out)
}
