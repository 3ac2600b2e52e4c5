//! Streaming update rules.
//!
//! * [`TosgState`]: two-sample one-stage SGD, `θ ← θ − α (g(θ;X) − Y) ∇g(θ;X′)`.
//! * [`OtsgState::otsg_update`]: one-sample two-stage SGD, where the outcome
//!   prediction uses the first-stage fit `Zᵀγθ`.
//! * [`OtsgState::cso_update`]: the plug-in variant predicting with `Xᵀθ`.
//!   It can diverge while `γᵀΣ_Zγ*` has negative eigenvalues.
//! * [`O2slsState`]: online two-stage least squares with Sherman–Morrison
//!   maintained inverses.
//!
//! All states are updated in place; each update reads only time-`t` values
//! on its right-hand side, so the result equals the pure recursion.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dgp::{OneSample, TwoSample};
use crate::error::{ensure_len, Error, Result};
use crate::kernels::{axpy, dot, mul_vec, rank1_update, tr_mul_vec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Tosg,
    Otsg,
    Cso,
    O2sls,
}

impl Algorithm {
    pub const ALL: [Algorithm; 4] = [
        Algorithm::Tosg,
        Algorithm::Otsg,
        Algorithm::Cso,
        Algorithm::O2sls,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Tosg => "tosg",
            Algorithm::Otsg => "otsg",
            Algorithm::Cso => "cso",
            Algorithm::O2sls => "o2sls",
        }
    }

    /// Whether the algorithm consumes the two-sample oracle.
    pub fn needs_two_samples(self) -> bool {
        matches!(self, Algorithm::Tosg)
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "tosg" | "tosg-ivar" => Ok(Algorithm::Tosg),
            "otsg" | "otsg-ivar" => Ok(Algorithm::Otsg),
            "cso" => Ok(Algorithm::Cso),
            "o2sls" => Ok(Algorithm::O2sls),
            other => Err(Error::InvalidConfig(format!("unknown algorithm `{other}`"))),
        }
    }
}

/// Outcome model `g(θ; x)`. Only the linear model ships; the trait is the
/// hook for nonlinear parametrizations of the two-sample update.
pub trait OutcomeModel {
    fn predict(&self, theta: &DVector<f64>, x: &DVector<f64>) -> f64;

    /// Writes `∇_θ g(θ; x)` into `out`.
    fn gradient(&self, theta: &DVector<f64>, x: &DVector<f64>, out: &mut DVector<f64>);
}

/// `g(θ; x) = xᵀθ`
#[derive(Debug, Clone, Copy, Default)]
pub struct Linear;

impl OutcomeModel for Linear {
    #[inline]
    fn predict(&self, theta: &DVector<f64>, x: &DVector<f64>) -> f64 {
        dot(x.as_slice(), theta.as_slice())
    }

    #[inline]
    fn gradient(&self, _theta: &DVector<f64>, x: &DVector<f64>, out: &mut DVector<f64>) {
        out.copy_from(x);
    }
}

fn check_finite(what: &str, v: &[f64]) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::Numeric(format!("{what} has non-finite entries")))
    }
}

#[derive(Debug, Clone)]
pub struct TosgState {
    pub theta: DVector<f64>,
    grad: DVector<f64>,
}

impl TosgState {
    pub fn new(theta: DVector<f64>) -> Self {
        let d_x = theta.len();
        TosgState {
            theta,
            grad: DVector::zeros(d_x),
        }
    }

    pub fn zeros(d_x: usize) -> Self {
        Self::new(DVector::zeros(d_x))
    }

    pub fn update(&mut self, sample: &TwoSample, alpha: f64) -> Result<()> {
        self.update_with(&Linear, sample, alpha)
    }

    pub fn update_with<G: OutcomeModel>(
        &mut self,
        model: &G,
        sample: &TwoSample,
        alpha: f64,
    ) -> Result<()> {
        let d_x = self.theta.len();
        ensure_len("x", d_x, sample.x.len())?;
        ensure_len("x_prime", d_x, sample.x_prime.len())?;
        let residual = model.predict(&self.theta, &sample.x) - sample.y;
        model.gradient(&self.theta, &sample.x_prime, &mut self.grad);
        axpy(-alpha * residual, self.grad.as_slice(), self.theta.as_mut_slice());
        Ok(())
    }

    /// Floats held across iterations.
    pub fn state_len(&self) -> usize {
        self.theta.len()
    }

    pub fn scratch_len(&self) -> usize {
        self.grad.len()
    }

    pub fn is_finite(&self) -> Result<()> {
        check_finite("theta", self.theta.as_slice())
    }
}

/// State `(θ, γ)` shared by the two-stage update and its plug-in variant.
#[derive(Debug, Clone)]
pub struct OtsgState {
    pub theta: DVector<f64>,
    /// `d_z × d_x`
    pub gamma: DMatrix<f64>,
    /// Optional Frobenius-ball radius the first stage is projected onto.
    pub gamma_radius: Option<f64>,
    gz: DVector<f64>,
}

impl OtsgState {
    pub fn new(theta: DVector<f64>, gamma: DMatrix<f64>) -> Result<Self> {
        ensure_len("gamma columns", theta.len(), gamma.ncols())?;
        let d_x = theta.len();
        Ok(OtsgState {
            theta,
            gamma,
            gamma_radius: None,
            gz: DVector::zeros(d_x),
        })
    }

    pub fn zeros(d_x: usize, d_z: usize) -> Self {
        Self::new(DVector::zeros(d_x), DMatrix::zeros(d_z, d_x)).expect("consistent shapes")
    }

    pub fn with_projection(mut self, radius: f64) -> Result<Self> {
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "projection radius must be positive, got {radius}"
            )));
        }
        self.gamma_radius = Some(radius);
        Ok(self)
    }

    fn check(&self, sample: &OneSample) -> Result<()> {
        ensure_len("z", self.gamma.nrows(), sample.z.len())?;
        ensure_len("x", self.gamma.ncols(), sample.x.len())
    }

    /// `θ ← θ − α γᵀZ (Zᵀγθ − Y)`, `γ ← γ − β Z (Zᵀγ − Xᵀ)`.
    pub fn otsg_update(&mut self, sample: &OneSample, alpha: f64, beta: f64) -> Result<()> {
        self.check(sample)?;
        tr_mul_vec(&self.gamma, sample.z.as_slice(), self.gz.as_mut_slice());
        let residual = dot(self.gz.as_slice(), self.theta.as_slice()) - sample.y;
        self.step(sample, alpha * residual, beta);
        Ok(())
    }

    /// `θ ← θ − α γᵀZ (Xᵀθ − Y)`, `γ` as in [`Self::otsg_update`].
    pub fn cso_update(&mut self, sample: &OneSample, alpha: f64, beta: f64) -> Result<()> {
        self.check(sample)?;
        tr_mul_vec(&self.gamma, sample.z.as_slice(), self.gz.as_mut_slice());
        let residual = dot(sample.x.as_slice(), self.theta.as_slice()) - sample.y;
        self.step(sample, alpha * residual, beta);
        Ok(())
    }

    /// Shared tail: `gz` holds `γᵀZ` from the pre-update `γ`.
    fn step(&mut self, sample: &OneSample, theta_scale: f64, beta: f64) {
        axpy(-theta_scale, self.gz.as_slice(), self.theta.as_mut_slice());
        // gz ← γᵀZ − X, then γ ← γ − β Z gzᵀ
        axpy(-1.0, sample.x.as_slice(), self.gz.as_mut_slice());
        rank1_update(&mut self.gamma, -beta, sample.z.as_slice(), self.gz.as_slice());
        if let Some(r) = self.gamma_radius {
            let n = self.gamma.norm();
            if n > r {
                self.gamma *= r / n;
            }
        }
    }

    pub fn state_len(&self) -> usize {
        self.theta.len() + self.gamma.len()
    }

    pub fn scratch_len(&self) -> usize {
        self.gz.len()
    }

    pub fn is_finite(&self) -> Result<()> {
        check_finite("theta", self.theta.as_slice())?;
        check_finite("gamma", self.gamma.as_slice())
    }
}

/// Regularization used for the O2SLS inverses unless configured otherwise.
pub const DEFAULT_LAMBDA: f64 = 0.1;

/// Which inverse multiplies the O2SLS innovations.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum O2slsGain {
    /// `U_{t+1}`, `V_{t+1}`: the inverses that already include the current
    /// sample, i.e. recursive least squares. Stable from the first step.
    #[default]
    Posterior,
    /// `U_t`, `V_t` as in the recursion written with time-`t` quantities on
    /// every right-hand side. With `V₀ = λ⁻¹I` the first-stage multiplier
    /// `I − V_tZZᵀ` has eigenvalues near `1 − ‖Z‖²/λ`, so early iterates
    /// can grow by orders of magnitude before the inverses shrink.
    Prior,
}

/// O2SLS state. `U` tracks `(λI + Σ γ_iᵀZ_iZ_iᵀγ_i)⁻¹` and `V` tracks
/// `(λI + Σ Z_iZ_iᵀ)⁻¹`, both started at `λ⁻¹I`.
#[derive(Debug, Clone)]
pub struct O2slsState {
    pub theta: DVector<f64>,
    pub gamma: DMatrix<f64>,
    pub u: DMatrix<f64>,
    pub v: DMatrix<f64>,
    pub lambda: f64,
    pub gain: O2slsGain,
    gz: DVector<f64>,
    ugz: DVector<f64>,
    vz: DVector<f64>,
}

impl O2slsState {
    pub fn new(theta: DVector<f64>, gamma: DMatrix<f64>, lambda: f64) -> Result<Self> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::InvalidConfig(format!("lambda must be positive, got {lambda}")));
        }
        let (d_z, d_x) = (gamma.nrows(), gamma.ncols());
        let u = DMatrix::identity(d_x, d_x) / lambda;
        let v = DMatrix::identity(d_z, d_z) / lambda;
        Self::with_inverses(theta, gamma, u, v, lambda)
    }

    pub fn zeros(d_x: usize, d_z: usize, lambda: f64) -> Result<Self> {
        Self::new(DVector::zeros(d_x), DMatrix::zeros(d_z, d_x), lambda)
    }

    /// Starts from arbitrary `U₀`, `V₀`. Used to inject corrupted inverses.
    pub fn with_inverses(
        theta: DVector<f64>,
        gamma: DMatrix<f64>,
        u: DMatrix<f64>,
        v: DMatrix<f64>,
        lambda: f64,
    ) -> Result<Self> {
        let (d_z, d_x) = (gamma.nrows(), gamma.ncols());
        ensure_len("theta", d_x, theta.len())?;
        ensure_len("U rows", d_x, u.nrows())?;
        ensure_len("U cols", d_x, u.ncols())?;
        ensure_len("V rows", d_z, v.nrows())?;
        ensure_len("V cols", d_z, v.ncols())?;
        Ok(O2slsState {
            theta,
            gamma,
            u,
            v,
            lambda,
            gain: O2slsGain::default(),
            gz: DVector::zeros(d_x),
            ugz: DVector::zeros(d_x),
            vz: DVector::zeros(d_z),
        })
    }

    pub fn with_gain(mut self, gain: O2slsGain) -> Self {
        self.gain = gain;
        self
    }

    pub fn update(&mut self, sample: &OneSample) -> Result<()> {
        ensure_len("z", self.gamma.nrows(), sample.z.len())?;
        ensure_len("x", self.gamma.ncols(), sample.x.len())?;
        let z = sample.z.as_slice();

        tr_mul_vec(&self.gamma, z, self.gz.as_mut_slice());
        mul_vec(&self.u, self.gz.as_slice(), self.ugz.as_mut_slice());
        mul_vec(&self.v, z, self.vz.as_mut_slice());
        let du = 1.0 + dot(self.gz.as_slice(), self.ugz.as_slice());
        let dv = 1.0 + dot(z, self.vz.as_slice());
        if !(du > 0.0) || !(dv > 0.0) {
            return Err(Error::Corrupted(format!(
                "Sherman–Morrison denominators must be positive (U: {du:e}, V: {dv:e})"
            )));
        }

        // U_{t+1}γᵀz = U_tγᵀz / du and V_{t+1}z = V_tz / dv
        let (su, sv) = match self.gain {
            O2slsGain::Posterior => (1.0 / du, 1.0 / dv),
            O2slsGain::Prior => (1.0, 1.0),
        };

        // θ ← θ + Uγᵀz (y − zᵀγθ)
        let resid_y = sample.y - dot(self.gz.as_slice(), self.theta.as_slice());
        axpy(su * resid_y, self.ugz.as_slice(), self.theta.as_mut_slice());

        // U ← U − (Uγᵀz)(Uγᵀz)ᵀ / du, V ← V − (Vz)(Vz)ᵀ / dv
        rank1_update(&mut self.u, -1.0 / du, self.ugz.as_slice(), self.ugz.as_slice());
        rank1_update(&mut self.v, -1.0 / dv, self.vz.as_slice(), self.vz.as_slice());

        // γ ← γ + Vz (x − γᵀz)ᵀ, reusing gz for the residual
        axpy(-1.0, sample.x.as_slice(), self.gz.as_mut_slice());
        rank1_update(&mut self.gamma, -sv, self.vz.as_slice(), self.gz.as_slice());
        Ok(())
    }

    pub fn state_len(&self) -> usize {
        self.theta.len() + self.gamma.len() + self.u.len() + self.v.len()
    }

    pub fn scratch_len(&self) -> usize {
        self.gz.len() + self.ugz.len() + self.vz.len()
    }

    pub fn is_finite(&self) -> Result<()> {
        check_finite("theta", self.theta.as_slice())?;
        check_finite("gamma", self.gamma.as_slice())?;
        check_finite("U", self.u.as_slice())?;
        check_finite("V", self.v.as_slice())
    }
}

// Equality ignores scratch buffers.
impl PartialEq for TosgState {
    fn eq(&self, other: &Self) -> bool {
        self.theta == other.theta
    }
}

impl PartialEq for OtsgState {
    fn eq(&self, other: &Self) -> bool {
        self.theta == other.theta
            && self.gamma == other.gamma
            && self.gamma_radius == other.gamma_radius
    }
}

impl PartialEq for O2slsState {
    fn eq(&self, other: &Self) -> bool {
        self.theta == other.theta
            && self.gamma == other.gamma
            && self.u == other.u
            && self.v == other.v
            && self.lambda == other.lambda
            && self.gain == other.gain
    }
}
