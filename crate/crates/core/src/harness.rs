//! Seeded multi-trial experiments.
//!
//! Trial `i` of an experiment with base seed `s` draws from
//! `ChaCha8Rng::seed_from_u64(trial_seed(s, i))`: stream 0 feeds the
//! training samples and stream 1 the held-out test set. [`trial_seed`] is
//! the SplitMix64 finalizer applied to `s + (i + 1)·0x9E3779B97F4A7C15`, so
//! the derivation is reproducible anywhere the generator is available.
//! Trials run in parallel; results are reduced in trial-index order.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dgp::{Dgp, DgpConfig, OneSample, TwoSample};
use crate::error::{Error, Result};
use crate::estimators::{
    Algorithm, O2slsGain, O2slsState, OtsgState, TosgState, DEFAULT_LAMBDA,
};
use crate::metrics::{dist_to_opt, test_mse, MetricPoint};
use crate::schedule::StepSchedule;

/// Name of the generator recorded in output metadata.
pub const RNG_ALGORITHM: &str = "ChaCha8Rng (rand_chacha 0.9)";
pub const DEFAULT_CHECKPOINTS: usize = 50;
const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

pub fn splitmix64(mut x: u64) -> u64 {
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

pub fn trial_seed(base_seed: u64, trial: usize) -> u64 {
    splitmix64(base_seed.wrapping_add((trial as u64 + 1).wrapping_mul(GOLDEN_GAMMA)))
}

fn trial_rng(base_seed: u64, trial: usize, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(trial_seed(base_seed, trial));
    rng.set_stream(stream);
    rng
}

/// About `n` log-spaced iterations in `[1, horizon]`, always containing both ends.
pub fn log_checkpoints(horizon: u64, n: usize) -> Vec<u64> {
    if horizon <= 1 || n < 2 {
        return vec![horizon.max(1)];
    }
    let top = (horizon as f64).ln();
    let mut out: Vec<u64> = (0..n)
        .map(|k| (top * k as f64 / (n - 1) as f64).exp().round() as u64)
        .map(|t| t.clamp(1, horizon))
        .collect();
    out.push(horizon);
    out.dedup();
    out
}

/// FNV-1a style accumulator over 64-bit words.
#[derive(Debug, Clone, Copy)]
struct StreamHash(u64);

impl StreamHash {
    fn new() -> Self {
        StreamHash(0xCBF2_9CE4_8422_2325)
    }

    fn word(&mut self, w: u64) {
        self.0 = (self.0 ^ w).wrapping_mul(0x0000_0100_0000_01B3);
    }

    fn slice(&mut self, v: &[f64]) {
        v.iter().for_each(|x| self.word(x.to_bits()));
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Init {
    pub theta0: Option<DVector<f64>>,
    pub gamma0: Option<DMatrix<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schedules {
    /// Second-stage step (TOSG, OTSG, CSO).
    pub alpha: Option<StepSchedule>,
    /// First-stage step (OTSG, CSO).
    pub beta: Option<StepSchedule>,
    /// Regularization of the O2SLS inverses.
    pub lambda: f64,
    #[serde(default)]
    pub o2sls_gain: O2slsGain,
}

impl Default for Schedules {
    fn default() -> Self {
        Schedules {
            alpha: None,
            beta: None,
            lambda: DEFAULT_LAMBDA,
            o2sls_gain: O2slsGain::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub experiment_id: String,
    pub dgp: DgpConfig,
    pub algorithm: Algorithm,
    pub schedules: Schedules,
    /// Total iterations `T`.
    pub iters: u64,
    pub trials: usize,
    pub base_seed: u64,
    pub checkpoints: Vec<u64>,
    /// Held-out test-set size; zero disables the MSE metrics.
    pub test_n: usize,
    pub init: Init,
    /// Optional Frobenius-ball projection of the OTSG/CSO first stage.
    pub gamma_radius: Option<f64>,
}

impl ExperimentSpec {
    /// Spec with default checkpoints, zero initialization and no test set.
    pub fn new(
        experiment_id: impl Into<String>,
        dgp: DgpConfig,
        algorithm: Algorithm,
        schedules: Schedules,
        iters: u64,
        trials: usize,
        base_seed: u64,
    ) -> Self {
        ExperimentSpec {
            experiment_id: experiment_id.into(),
            dgp,
            algorithm,
            schedules,
            iters,
            trials,
            base_seed,
            checkpoints: log_checkpoints(iters, DEFAULT_CHECKPOINTS),
            test_n: 0,
            init: Init::default(),
            gamma_radius: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        self.dgp.validate()?;
        if self.iters == 0 {
            return bad("iters must be at least 1".into());
        }
        if self.trials == 0 {
            return bad("trials must be at least 1".into());
        }
        if self.checkpoints.is_empty() {
            return bad("checkpoint list is empty".into());
        }
        if self.checkpoints.windows(2).any(|w| w[0] >= w[1]) {
            return bad("checkpoints must be strictly increasing".into());
        }
        if self.checkpoints[0] < 1 || *self.checkpoints.last().unwrap() > self.iters {
            return bad(format!("checkpoints must lie in [1, {}]", self.iters));
        }
        let needs = |s: &Option<StepSchedule>, name: &str| match s {
            Some(s) => s.validate(),
            None => Err(Error::InvalidConfig(format!(
                "{} requires schedule.{name}",
                self.algorithm
            ))),
        };
        match self.algorithm {
            Algorithm::Tosg => needs(&self.schedules.alpha, "alpha")?,
            Algorithm::Otsg | Algorithm::Cso => {
                needs(&self.schedules.alpha, "alpha")?;
                needs(&self.schedules.beta, "beta")?;
            }
            Algorithm::O2sls => {
                if !(self.schedules.lambda > 0.0 && self.schedules.lambda.is_finite()) {
                    return bad(format!("lambda must be positive, got {}", self.schedules.lambda));
                }
            }
        }
        let (d_x, d_z) = (self.dgp.d_x, self.dgp.d_z);
        if let Some(t) = &self.init.theta0 {
            crate::error::ensure_len("init.theta0", d_x, t.len())?;
        }
        if let Some(g) = &self.init.gamma0 {
            if g.shape() != (d_z, d_x) {
                return bad(format!("init.gamma0 is {:?}, expected ({d_z}, {d_x})", g.shape()));
            }
        }
        if let Some(r) = self.gamma_radius {
            if !(r > 0.0 && r.is_finite()) {
                return bad(format!("gamma_radius must be positive, got {r}"));
            }
        }
        Ok(())
    }

    fn theta0(&self) -> DVector<f64> {
        self.init
            .theta0
            .clone()
            .unwrap_or_else(|| DVector::zeros(self.dgp.d_x))
    }

    fn gamma0(&self) -> DMatrix<f64> {
        self.init
            .gamma0
            .clone()
            .unwrap_or_else(|| DMatrix::zeros(self.dgp.d_z, self.dgp.d_x))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub trial: usize,
    pub points: Vec<MetricPoint>,
    /// Hash of every training sample the trial consumed.
    pub stream_hash: u64,
}

enum State {
    Tosg(TosgState, TwoSample),
    Otsg(OtsgState, OneSample),
    Cso(OtsgState, OneSample),
    O2sls(O2slsState, OneSample),
}

impl State {
    fn new(spec: &ExperimentSpec) -> Result<Self> {
        let (d_x, d_z) = (spec.dgp.d_x, spec.dgp.d_z);
        let one = || OneSample::zeros(d_x, d_z);
        let two_stage = || -> Result<OtsgState> {
            let s = OtsgState::new(spec.theta0(), spec.gamma0())?;
            match spec.gamma_radius {
                Some(r) => s.with_projection(r),
                None => Ok(s),
            }
        };
        Ok(match spec.algorithm {
            Algorithm::Tosg => State::Tosg(TosgState::new(spec.theta0()), TwoSample::zeros(d_x, d_z)),
            Algorithm::Otsg => State::Otsg(two_stage()?, one()),
            Algorithm::Cso => State::Cso(two_stage()?, one()),
            Algorithm::O2sls => State::O2sls(
                O2slsState::new(spec.theta0(), spec.gamma0(), spec.schedules.lambda)?
                    .with_gain(spec.schedules.o2sls_gain),
                one(),
            ),
        })
    }

    fn theta(&self) -> &DVector<f64> {
        match self {
            State::Tosg(s, _) => &s.theta,
            State::Otsg(s, _) | State::Cso(s, _) => &s.theta,
            State::O2sls(s, _) => &s.theta,
        }
    }

    fn is_finite(&self) -> Result<()> {
        match self {
            State::Tosg(s, _) => s.is_finite(),
            State::Otsg(s, _) | State::Cso(s, _) => s.is_finite(),
            State::O2sls(s, _) => s.is_finite(),
        }
    }
}

fn draw_one(dgp: &Dgp, rng: &mut ChaCha8Rng, buf: &mut OneSample, hash: &mut StreamHash) {
    dgp.fill_one(rng, buf);
    hash.slice(buf.z.as_slice());
    hash.slice(buf.x.as_slice());
    hash.word(buf.y.to_bits());
}

/// Runs one trial and records metrics at the spec's checkpoints.
pub fn run_trial(spec: &ExperimentSpec, trial: usize) -> Result<TrialResult> {
    spec.validate()?;
    let dgp = Dgp::new(spec.dgp.clone())?;
    let theta_star = dgp.theta_star().clone();

    let (test, oracle_mse) = if spec.test_n > 0 {
        let test = dgp.test_set(&mut trial_rng(spec.base_seed, trial, 1), spec.test_n)?;
        let floor = test_mse(&theta_star, &test)?;
        (test, Some(floor))
    } else {
        (Vec::new(), None)
    };

    let mut rng = trial_rng(spec.base_seed, trial, 0);
    let mut state = State::new(spec)?;
    let mut hash = StreamHash::new();
    let alpha = spec.schedules.alpha;
    let beta = spec.schedules.beta;
    let step = |s: &Option<StepSchedule>, t: u64| s.as_ref().map_or(0.0, |s| s.step(t));

    let mut points = Vec::with_capacity(spec.checkpoints.len());
    let mut next = spec.checkpoints.iter().copied().peekable();
    for t in 1..=spec.iters {
        match &mut state {
            State::Tosg(s, buf) => {
                dgp.fill_two(&mut rng, buf);
                hash.slice(buf.z.as_slice());
                hash.slice(buf.x.as_slice());
                hash.slice(buf.x_prime.as_slice());
                hash.word(buf.y.to_bits());
                s.update(buf, step(&alpha, t))?;
            }
            State::Otsg(s, buf) => {
                draw_one(&dgp, &mut rng, buf, &mut hash);
                s.otsg_update(buf, step(&alpha, t), step(&beta, t))?;
            }
            State::Cso(s, buf) => {
                draw_one(&dgp, &mut rng, buf, &mut hash);
                s.cso_update(buf, step(&alpha, t), step(&beta, t))?;
            }
            State::O2sls(s, buf) => {
                draw_one(&dgp, &mut rng, buf, &mut hash);
                s.update(buf)?;
            }
        }
        if next.peek() == Some(&t) {
            next.next();
            state.is_finite().map_err(|e| match e {
                Error::Numeric(m) => {
                    Error::Numeric(format!("{} diverged by iteration {t}: {m}", spec.algorithm))
                }
                other => other,
            })?;
            let theta = state.theta();
            let test_value = if test.is_empty() {
                None
            } else {
                Some(test_mse(theta, &test)?)
            };
            points.push(MetricPoint {
                iteration: t,
                dist_sq: dist_to_opt(theta, &theta_star)?,
                test_mse: test_value,
                oracle_mse,
            });
        }
    }
    Ok(TrialResult {
        trial,
        points,
        stream_hash: hash.0,
    })
}

/// Mean and population standard deviation over trials.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
}

impl Stat {
    fn of(values: impl Iterator<Item = f64> + Clone) -> Self {
        let n = values.clone().count() as f64;
        let mean = values.clone().sum::<f64>() / n;
        let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        Stat {
            mean,
            std: var.sqrt(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregatePoint {
    pub iteration: u64,
    pub dist_sq: Stat,
    pub test_mse: Option<Stat>,
    pub oracle_mse: Option<Stat>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSeries {
    pub spec: ExperimentSpec,
    pub trials: Vec<TrialResult>,
    pub aggregate: Vec<AggregatePoint>,
}

impl MetricSeries {
    fn aggregate(spec: ExperimentSpec, trials: Vec<TrialResult>) -> Self {
        let n = spec.checkpoints.len();
        let aggregate = (0..n)
            .map(|k| {
                let col = |f: fn(&MetricPoint) -> Option<f64>| {
                    let vals = trials.iter().map(move |tr| f(&tr.points[k]));
                    if vals.clone().all(|v| v.is_some()) {
                        Some(Stat::of(vals.map(|v| v.unwrap())))
                    } else {
                        None
                    }
                };
                AggregatePoint {
                    iteration: trials[0].points[k].iteration,
                    dist_sq: col(|p| Some(p.dist_sq)).expect("always present"),
                    test_mse: col(|p| p.test_mse),
                    oracle_mse: col(|p| p.oracle_mse),
                }
            })
            .collect();
        MetricSeries {
            spec,
            trials,
            aggregate,
        }
    }

    pub fn iterations(&self) -> Vec<u64> {
        self.aggregate.iter().map(|p| p.iteration).collect()
    }

    pub fn mean_dist_sq(&self) -> Vec<f64> {
        self.aggregate.iter().map(|p| p.dist_sq.mean).collect()
    }

    pub fn mean_test_mse(&self) -> Option<Vec<f64>> {
        self.aggregate.iter().map(|p| p.test_mse.map(|s| s.mean)).collect()
    }

    pub fn final_point(&self) -> &AggregatePoint {
        self.aggregate.last().expect("at least one checkpoint")
    }

    pub fn stream_hashes(&self) -> Vec<u64> {
        self.trials.iter().map(|t| t.stream_hash).collect()
    }
}

/// Runs every trial (in parallel on the current rayon pool) and aggregates
/// in trial order, so the result does not depend on the thread count.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<MetricSeries> {
    spec.validate()?;
    let trials = (0..spec.trials)
        .into_par_iter()
        .map(|i| run_trial(spec, i))
        .collect::<Result<Vec<_>>>()?;
    Ok(MetricSeries::aggregate(spec.clone(), trials))
}

/// Least-squares slope of `log10(y)` against `log10(t)` over the last
/// `tail_fraction` of the points.
pub fn fit_slope(iterations: &[u64], values: &[f64], tail_fraction: f64) -> Result<f64> {
    if iterations.len() != values.len() {
        return Err(Error::ShapeMismatch {
            what: "values",
            expected: iterations.len(),
            got: values.len(),
        });
    }
    if !(tail_fraction > 0.0 && tail_fraction <= 1.0) {
        return Err(Error::InvalidConfig(format!(
            "tail fraction must lie in (0, 1], got {tail_fraction}"
        )));
    }
    let n = iterations.len();
    let take = ((n as f64) * tail_fraction).ceil() as usize;
    fit_loglog(&iterations[n - take..], &values[n - take..])
}

/// Slope over the points with `lo ≤ t ≤ hi`.
pub fn fit_slope_window(iterations: &[u64], values: &[f64], lo: u64, hi: u64) -> Result<f64> {
    let (t, v): (Vec<u64>, Vec<f64>) = iterations
        .iter()
        .zip(values)
        .filter(|(t, _)| (lo..=hi).contains(*t))
        .map(|(t, v)| (*t, *v))
        .unzip();
    fit_loglog(&t, &v)
}

fn fit_loglog(iterations: &[u64], values: &[f64]) -> Result<f64> {
    if iterations.len() < 5 {
        return Err(Error::InvalidConfig(format!(
            "slope fit needs at least 5 points, got {}",
            iterations.len()
        )));
    }
    if let Some(v) = values.iter().find(|v| !(**v > 0.0 && v.is_finite())) {
        return Err(Error::Numeric(format!(
            "slope fit needs positive finite values, got {v}"
        )));
    }
    let xs: Vec<f64> = iterations.iter().map(|t| (*t as f64).log10()).collect();
    let ys: Vec<f64> = values.iter().map(|v| v.log10()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidConfig("slope fit needs distinct iterations".into()));
    }
    Ok(sxy / sxx)
}
