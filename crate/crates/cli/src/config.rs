//! TOML experiment configuration and its resolution into experiment specs.
//!
//! Every key is optional; an empty file describes a scalar endogenous-linear
//! model run with OTSG. See the README for the full schema.

use std::path::Path;

use ivstream::dgp::{identity_block, random_unit_vector};
use ivstream::harness::{log_checkpoints, Init, DEFAULT_CHECKPOINTS};
use ivstream::oracle::theory_constants;
use ivstream::presets::{population, DEFAULT_ITERS, DEFAULT_TRIALS, TEST_N, THETA_SEED};
use ivstream::schedule::{theorem1_alpha, theorem2_schedules, DEFAULT_IOTA};
use ivstream::{
    Algorithm, DgpConfig, ExperimentSpec, Family, O2slsGain, Phi, Schedules, StepSchedule,
    TheoryConstants,
};
use nalgebra::{DMatrix, DVector};
use serde::Deserialize;

use crate::error::{CliError, Result};

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub experiment_id: Option<String>,
    pub algorithm: Option<Algorithm>,
    pub algorithms: Option<Vec<Algorithm>>,
    #[serde(rename = "T", alias = "iters")]
    pub iters: Option<u64>,
    pub trials: Option<usize>,
    pub seed: Option<u64>,
    pub checkpoints: Option<Checkpoints>,
    pub test_n: Option<usize>,
    pub gamma_radius: Option<f64>,
    #[serde(default)]
    pub dgp: DgpSection,
    #[serde(default)]
    pub schedule: ScheduleSection,
    #[serde(default)]
    pub theory: TheorySection,
    #[serde(default)]
    pub init: InitSection,
    #[serde(default)]
    pub check: CheckSection,
}

/// Either an explicit iteration list or the number of log-spaced points.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum Checkpoints {
    Count(usize),
    List(Vec<u64>),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FamilyName {
    Fig1,
    #[default]
    Fig2,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DgpSection {
    #[serde(default)]
    pub family: FamilyName,
    pub d_x: Option<usize>,
    pub d_z: Option<usize>,
    pub rho: Option<f64>,
    pub sigma_eps: Option<f64>,
    pub c: Option<f64>,
    pub phi: Option<Phi>,
    pub confounder_mean: Option<f64>,
    pub theta_star: Option<Vec<f64>>,
    pub theta_seed: Option<u64>,
    /// Rows of the `d_z × d_x` first-stage matrix.
    pub gamma_star: Option<Vec<Vec<f64>>>,
    pub z_cov: Option<Vec<Vec<f64>>>,
}

/// A step schedule: a number (constant step), a table with `kind`, or one
/// of the rules `"theorem1"` / `"theorem2"`.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum StepSpec {
    Constant(f64),
    Rule(String),
    Explicit(StepSchedule),
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleSection {
    pub alpha: Option<StepSpec>,
    pub beta: Option<StepSpec>,
    pub lambda: Option<f64>,
    pub o2sls_gain: Option<O2slsGain>,
}

/// Overrides for the constants derived from the population model.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TheorySection {
    pub mu: Option<f64>,
    pub lambda_z: Option<f64>,
    pub mu_z: Option<f64>,
    pub varkappa: Option<f64>,
    pub c_gamma: Option<f64>,
    pub vartheta: Option<f64>,
    pub iota: Option<f64>,
    pub sigma1_sq: Option<f64>,
    pub sigma2_sq: Option<f64>,
    pub gamma_star_norm: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitSection {
    pub theta0: Option<Vec<f64>>,
    pub gamma0: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckSection {
    pub gradient_draws: Option<usize>,
    pub sm_updates: Option<usize>,
    pub determinism_trials: Option<usize>,
    pub determinism_iters: Option<u64>,
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub trials: Option<usize>,
    pub iters: Option<u64>,
}

/// Polynomial step used for OTSG/CSO when none is configured.
pub const DEFAULT_STEP: StepSchedule = StepSchedule::Polynomial {
    coeff: 0.2,
    exponent: 0.8,
};

impl Config {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn apply(&mut self, o: &Overrides) {
        if o.seed.is_some() {
            self.seed = o.seed;
        }
        if o.trials.is_some() {
            self.trials = o.trials;
        }
        if o.iters.is_some() {
            self.iters = o.iters;
        }
    }

    /// Configured algorithms in file order, defaulting to OTSG.
    pub fn algorithms(&self) -> Result<Vec<Algorithm>> {
        match (&self.algorithm, &self.algorithms) {
            (Some(_), Some(_)) => Err(CliError::Config(
                "set either `algorithm` or `algorithms`, not both".into(),
            )),
            (Some(a), None) => Ok(vec![*a]),
            (None, Some(list)) if list.is_empty() => {
                Err(CliError::Config("`algorithms` must not be empty".into()))
            }
            (None, Some(list)) => {
                let mut seen = Vec::new();
                for a in list {
                    if seen.contains(a) {
                        return Err(CliError::Config(format!("algorithm `{a}` listed twice")));
                    }
                    seen.push(*a);
                }
                Ok(seen)
            }
            (None, None) => Ok(vec![Algorithm::Otsg]),
        }
    }

    pub fn dgp_config(&self) -> Result<DgpConfig> {
        let s = &self.dgp;
        let d_x = s.d_x.unwrap_or(1);
        let d_z = s.d_z.unwrap_or(d_x);
        let theta_star = match &s.theta_star {
            Some(v) => DVector::from_column_slice(v),
            None => random_unit_vector(d_x, s.theta_seed.unwrap_or(THETA_SEED)),
        };
        let family = match s.family {
            FamilyName::Fig1 => {
                if s.rho.is_some() || s.sigma_eps.is_some() {
                    return Err(CliError::Config(
                        "`rho` and `sigma_eps` belong to family fig2".into(),
                    ));
                }
                Family::Fig1 {
                    c: s.c.unwrap_or(0.1),
                    phi: s.phi.unwrap_or(Phi::Identity),
                    confounder_mean: s.confounder_mean.unwrap_or(0.0),
                }
            }
            FamilyName::Fig2 => {
                if s.c.is_some() || s.phi.is_some() || s.confounder_mean.is_some() {
                    return Err(CliError::Config(
                        "`c`, `phi` and `confounder_mean` belong to family fig1".into(),
                    ));
                }
                Family::Fig2 {
                    rho: s.rho.unwrap_or(1.0),
                    sigma_eps: s.sigma_eps.unwrap_or(0.5),
                }
            }
        };
        let gamma_star = match &s.gamma_star {
            Some(rows) => matrix("dgp.gamma_star", rows)?,
            None => identity_block(d_z, d_x),
        };
        let z_cov = match &s.z_cov {
            Some(rows) => matrix("dgp.z_cov", rows)?,
            None => DMatrix::identity(d_z, d_z),
        };
        let cfg = DgpConfig {
            d_x,
            d_z,
            theta_star,
            gamma_star,
            family,
            z_cov,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn theory(&self, dgp: &DgpConfig, gamma0: Option<&DMatrix<f64>>) -> Result<TheoryConstants> {
        let t = &self.theory;
        let mut k = match t.mu {
            // Skip the (possibly Monte-Carlo) population pass when nothing
            // else needs it.
            Some(mu)
                if t.lambda_z.is_some() && t.c_gamma.is_some() && t.gamma_star_norm.is_some() =>
            {
                TheoryConstants::new(mu)
            }
            _ => theory_constants(dgp, &population(dgp)?, gamma0),
        };
        let set = |dst: &mut Option<f64>, src: Option<f64>| {
            if src.is_some() {
                *dst = src;
            }
        };
        if let Some(mu) = t.mu {
            k.mu = mu;
        }
        set(&mut k.lambda_z, t.lambda_z);
        set(&mut k.mu_z, t.mu_z);
        set(&mut k.c_gamma, t.c_gamma);
        set(&mut k.sigma1_sq, t.sigma1_sq);
        set(&mut k.sigma2_sq, t.sigma2_sq);
        set(&mut k.gamma_star_norm, t.gamma_star_norm);
        k.varkappa = t.varkappa.unwrap_or(k.varkappa);
        k.vartheta = t.vartheta.unwrap_or(k.vartheta);
        k.iota = t.iota.unwrap_or(DEFAULT_IOTA);
        k.validate()?;
        Ok(k)
    }

    fn init(&self) -> Result<Init> {
        Ok(Init {
            theta0: self.init.theta0.as_deref().map(DVector::from_column_slice),
            gamma0: match &self.init.gamma0 {
                Some(rows) => Some(matrix("init.gamma0", rows)?),
                None => None,
            },
        })
    }

    /// One spec per configured algorithm, all sharing id and seed so that
    /// their sample streams pair up.
    pub fn resolve(&self, default_id: &str) -> Result<Vec<ExperimentSpec>> {
        let algorithms = self.algorithms()?;
        let dgp = self.dgp_config()?;
        let iters = self.iters.unwrap_or(DEFAULT_ITERS);
        let init = self.init()?;
        let id = self.experiment_id.clone().unwrap_or_else(|| default_id.to_string());
        if id.is_empty() || id.contains([',', '\n', '\r', '"']) {
            return Err(CliError::Config(format!(
                "experiment_id {id:?} must be non-empty and free of commas, quotes and newlines"
            )));
        }
        let checkpoints = match &self.checkpoints {
            None => log_checkpoints(iters, DEFAULT_CHECKPOINTS),
            Some(Checkpoints::Count(n)) => log_checkpoints(iters, *n),
            Some(Checkpoints::List(v)) => v.clone(),
        };

        let mut theory = None;
        let mut constants = || -> Result<TheoryConstants> {
            if theory.is_none() {
                theory = Some(self.theory(&dgp, init.gamma0.as_ref())?);
            }
            Ok(theory.expect("just set"))
        };

        let mut out = Vec::with_capacity(algorithms.len());
        for alg in algorithms {
            let mut schedules = Schedules {
                lambda: self.schedule.lambda.unwrap_or(Schedules::default().lambda),
                o2sls_gain: self.schedule.o2sls_gain.unwrap_or_default(),
                ..Schedules::default()
            };
            match alg {
                Algorithm::O2sls => {}
                Algorithm::Tosg => {
                    let spec = self
                        .schedule
                        .alpha
                        .clone()
                        .unwrap_or(StepSpec::Rule("theorem1".into()));
                    schedules.alpha =
                        Some(resolve_step("alpha", &spec, alg, iters, &dgp, &mut constants)?);
                }
                Algorithm::Otsg | Algorithm::Cso => {
                    let pick = |s: &Option<StepSpec>| {
                        s.clone().unwrap_or(StepSpec::Explicit(DEFAULT_STEP))
                    };
                    schedules.alpha = Some(resolve_step(
                        "alpha",
                        &pick(&self.schedule.alpha),
                        alg,
                        iters,
                        &dgp,
                        &mut constants,
                    )?);
                    schedules.beta = Some(resolve_step(
                        "beta",
                        &pick(&self.schedule.beta),
                        alg,
                        iters,
                        &dgp,
                        &mut constants,
                    )?);
                }
            }
            let mut spec = ExperimentSpec::new(
                id.clone(),
                dgp.clone(),
                alg,
                schedules,
                iters,
                self.trials.unwrap_or(DEFAULT_TRIALS),
                self.seed.unwrap_or(0),
            );
            spec.checkpoints = checkpoints.clone();
            spec.test_n = self.test_n.unwrap_or(TEST_N);
            spec.init = init.clone();
            spec.gamma_radius = self.gamma_radius;
            spec.validate()?;
            out.push(spec);
        }
        Ok(out)
    }
}

fn resolve_step(
    which: &str,
    spec: &StepSpec,
    alg: Algorithm,
    iters: u64,
    dgp: &DgpConfig,
    constants: &mut dyn FnMut() -> Result<TheoryConstants>,
) -> Result<StepSchedule> {
    let s = match spec {
        StepSpec::Constant(a) => StepSchedule::constant(*a)?,
        StepSpec::Explicit(s) => {
            s.validate()?;
            *s
        }
        StepSpec::Rule(rule) => match (rule.as_str(), which, alg) {
            ("theorem1", "alpha", Algorithm::Tosg) => theorem1_alpha(iters, &constants()?)?.schedule,
            ("theorem1", ..) => {
                return Err(CliError::Config(
                    "`theorem1` only applies to schedule.alpha of tosg".into(),
                ))
            }
            ("theorem2", _, Algorithm::Otsg | Algorithm::Cso) => {
                let (a, b) = theorem2_schedules(&constants()?, dgp.d_z)?;
                if which == "alpha" {
                    a
                } else {
                    b
                }
            }
            ("theorem2", ..) => {
                return Err(CliError::Config(
                    "`theorem2` only applies to otsg and cso".into(),
                ))
            }
            (other, ..) => {
                return Err(CliError::Config(format!(
                    "unknown schedule rule `{other}` for schedule.{which} (expected theorem1 or theorem2)"
                )))
            }
        },
    };
    Ok(s)
}

fn matrix(name: &str, rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.is_empty() || ncols == 0 || rows.iter().any(|r| r.len() != ncols) {
        return Err(CliError::Config(format!(
            "{name} must be a non-empty list of equal-length rows"
        )));
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_defaults() {
        let specs = Config::parse("").unwrap().resolve("x").unwrap();
        assert_eq!(specs.len(), 1);
        let s = &specs[0];
        assert_eq!(s.algorithm, Algorithm::Otsg);
        assert_eq!((s.dgp.d_x, s.dgp.d_z), (1, 1));
        assert_eq!(s.dgp.family, Family::Fig2 { rho: 1.0, sigma_eps: 0.5 });
        assert_eq!((s.iters, s.trials, s.base_seed, s.test_n), (DEFAULT_ITERS, DEFAULT_TRIALS, 0, TEST_N));
        assert_eq!(s.schedules.alpha, Some(DEFAULT_STEP));
        assert_eq!(s.experiment_id, "x");
    }

    #[test]
    fn full_config() {
        let text = r#"
            experiment_id = "demo"
            algorithms = ["otsg", "cso", "o2sls", "tosg"]
            T = 500
            trials = 3
            seed = 9
            checkpoints = [1, 10, 100, 500]
            test_n = 0

            [dgp]
            family = "fig1"
            d_x = 2
            d_z = 3
            c = 1.0
            phi = "identity"
            theta_star = [1.0, -1.0]
            gamma_star = [[1.0, 0.0], [0.0, 1.0], [0.5, 0.5]]

            [schedule]
            alpha = { kind = "polynomial", coeff = 0.1, exponent = 0.9 }
            beta = 0.01
            lambda = 0.5

            [init]
            theta0 = [0.5, 0.5]
        "#;
        let specs = Config::parse(text).unwrap().resolve("x").unwrap();
        assert_eq!(specs.len(), 4);
        for s in &specs {
            assert_eq!(s.experiment_id, "demo");
            assert_eq!(s.checkpoints, vec![1, 10, 100, 500]);
            assert_eq!(s.dgp.gamma_star.shape(), (3, 2));
        }
        assert_eq!(specs[1].schedules.beta, Some(StepSchedule::Constant { alpha: 0.01 }));
        assert_eq!(specs[2].schedules.lambda, 0.5);
        assert_eq!(specs[3].schedules.beta, None);
    }

    #[test]
    fn theory_rules() {
        let c = Config::parse("algorithm = \"tosg\"\nT = 1000\n[dgp]\nfamily = \"fig1\"\nd_x = 4\nd_z = 8")
            .unwrap();
        let s = &c.resolve("x").unwrap()[0];
        let expect = (1000f64).ln() / 1000.0 / population(&s.dgp).unwrap().mu;
        match s.schedules.alpha {
            Some(StepSchedule::Constant { alpha }) => assert!((alpha - expect).abs() < 1e-15),
            other => panic!("{other:?}"),
        }

        let c = Config::parse("[schedule]\nalpha = \"theorem2\"\nbeta = \"theorem2\"\n[theory]\niota = 0.2").unwrap();
        let s = &c.resolve("x").unwrap()[0];
        assert!((s.schedules.alpha.unwrap().exponent() - 0.9).abs() < 1e-15);
        assert_eq!(s.schedules.beta.unwrap(), StepSchedule::Polynomial { coeff: 1.0 / 128.0, exponent: 0.9 });

        let c = Config::parse("algorithm = \"otsg\"\n[schedule]\nalpha = \"theorem1\"").unwrap();
        assert!(c.resolve("x").is_err());
        let c = Config::parse("[schedule]\nalpha = \"fast\"").unwrap();
        assert!(c.resolve("x").is_err());
    }

    #[test]
    fn rejects_bad_input() {
        assert!(Config::parse("bogus = 1").is_err());
        assert!(Config::parse("[dgp]\nd_x = \"two\"").is_err());
        let bad = [
            "algorithm = \"otsg\"\nalgorithms = [\"cso\"]",
            "algorithms = []",
            "algorithms = [\"cso\", \"cso\"]",
            "trials = 0",
            "T = 0",
            "checkpoints = [5, 3]",
            "experiment_id = \"a,b\"",
            "[dgp]\nd_x = 3\nd_z = 2",
            "[dgp]\nc = 1.0",
            "[dgp]\nd_x = 2\nd_z = 2\ngamma_star = [[1.0], [1.0, 2.0]]",
            "[init]\ntheta0 = [1.0, 2.0]",
        ];
        for text in bad {
            let c = Config::parse(text).unwrap();
            assert!(c.resolve("x").is_err(), "{text}");
        }
    }

    #[test]
    fn overrides_win() {
        let mut c = Config::parse("seed = 1\ntrials = 5\nT = 10").unwrap();
        c.apply(&Overrides {
            seed: Some(2),
            trials: None,
            iters: Some(20),
        });
        let s = &c.resolve("x").unwrap()[0];
        assert_eq!((s.base_seed, s.trials, s.iters), (2, 5, 20));
        assert_eq!(*s.checkpoints.last().unwrap(), 20);
    }
}
