//! Step-size schedules and the constants that parameterize the theoretically
//! prescribed choices.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default `ι` for the two-timescale schedules.
pub const DEFAULT_IOTA: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StepSchedule {
    Constant { alpha: f64 },
    /// `coeff · t^(−exponent)`
    Polynomial { coeff: f64, exponent: f64 },
}

impl StepSchedule {
    pub fn constant(alpha: f64) -> Result<Self> {
        let s = StepSchedule::Constant { alpha };
        s.validate()?;
        Ok(s)
    }

    pub fn polynomial(coeff: f64, exponent: f64) -> Result<Self> {
        let s = StepSchedule::Polynomial { coeff, exponent };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            StepSchedule::Constant { alpha } if alpha > 0.0 && alpha.is_finite() => Ok(()),
            StepSchedule::Constant { alpha } => Err(Error::InvalidConfig(format!(
                "constant step must be positive, got {alpha}"
            ))),
            StepSchedule::Polynomial { coeff, exponent } => {
                if !(coeff > 0.0 && coeff.is_finite()) {
                    return Err(Error::InvalidConfig(format!(
                        "polynomial coefficient must be positive, got {coeff}"
                    )));
                }
                if !(exponent > 0.0 && exponent <= 1.0) {
                    return Err(Error::InvalidConfig(format!(
                        "polynomial exponent must lie in (0, 1], got {exponent}"
                    )));
                }
                Ok(())
            }
        }
    }

    /// Step size at iteration `t ≥ 1`.
    #[inline]
    pub fn step(&self, t: u64) -> f64 {
        debug_assert!(t >= 1);
        match *self {
            StepSchedule::Constant { alpha } => alpha,
            StepSchedule::Polynomial { coeff, exponent } => coeff * (t as f64).powf(-exponent),
        }
    }

    /// Decay exponent; zero for a constant schedule.
    pub fn exponent(&self) -> f64 {
        match *self {
            StepSchedule::Constant { .. } => 0.0,
            StepSchedule::Polynomial { exponent, .. } => exponent,
        }
    }
}

/// Fourth-moment style bounds `C_x, C_y, C_xx, C_yx` with their dimension
/// exponents, from which `σ₁²` and `σ₂²` are assembled.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentBounds {
    pub c_x: f64,
    pub c_y: f64,
    pub c_xx: f64,
    pub c_yx: f64,
    pub vartheta1: f64,
    pub vartheta2: f64,
    pub vartheta3: f64,
    pub vartheta4: f64,
}

impl MomentBounds {
    /// `σ₁² = 2 C_x d_x^ϑ₁ + 2 C_xx d_z^ϑ₃`
    pub fn sigma1_sq(&self, d_x: usize, d_z: usize) -> f64 {
        2.0 * self.c_x * (d_x as f64).powf(self.vartheta1)
            + 2.0 * self.c_xx * (d_z as f64).powf(self.vartheta3)
    }

    /// `σ₂² = C_y d_x^ϑ₂ + C_yx d_z^ϑ₄`
    pub fn sigma2_sq(&self, d_x: usize, d_z: usize) -> f64 {
        self.c_y * (d_x as f64).powf(self.vartheta2) + self.c_yx * (d_z as f64).powf(self.vartheta4)
    }
}

/// Constants appearing in the step-size prescriptions. In simulation they
/// come from the population oracle; every field can be overridden.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TheoryConstants {
    /// Smallest eigenvalue of `E[E[X|Z] E[X|Z]ᵀ]`.
    pub mu: f64,
    pub lambda_z: Option<f64>,
    pub mu_z: Option<f64>,
    pub varkappa: f64,
    pub c_gamma: Option<f64>,
    pub vartheta: f64,
    pub iota: f64,
    pub sigma1_sq: Option<f64>,
    pub sigma2_sq: Option<f64>,
    pub moments: Option<MomentBounds>,
    pub gamma_star_norm: Option<f64>,
}

impl TheoryConstants {
    pub fn new(mu: f64) -> Self {
        TheoryConstants {
            mu,
            lambda_z: None,
            mu_z: None,
            varkappa: 0.0,
            c_gamma: None,
            vartheta: 0.0,
            iota: DEFAULT_IOTA,
            sigma1_sq: None,
            sigma2_sq: None,
            moments: None,
            gamma_star_norm: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::InvalidConfig(format!("{name} must be positive, got {v}")))
            }
        };
        let nonneg = |name: &str, v: f64| {
            if v >= 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::InvalidConfig(format!("{name} must be non-negative, got {v}")))
            }
        };
        positive("mu", self.mu)?;
        positive("iota", self.iota)?;
        nonneg("varkappa", self.varkappa)?;
        nonneg("vartheta", self.vartheta)?;
        if let Some(v) = self.lambda_z {
            positive("lambda_Z", v)?;
        }
        if let Some(v) = self.mu_z {
            positive("mu_Z", v)?;
        }
        if let (Some(lo), Some(hi)) = (self.mu_z, self.lambda_z) {
            if lo > hi {
                return Err(Error::InvalidConfig(format!("mu_Z ({lo}) exceeds lambda_Z ({hi})")));
            }
        }
        if let Some(v) = self.c_gamma {
            positive("C_gamma", v)?;
        }
        if let Some(v) = self.sigma1_sq {
            nonneg("sigma1_sq", v)?;
        }
        if let Some(v) = self.sigma2_sq {
            nonneg("sigma2_sq", v)?;
        }
        if let Some(v) = self.gamma_star_norm {
            nonneg("gamma_star_norm", v)?;
        }
        if let (Some(lz), Some(g)) = (self.lambda_z, self.gamma_star_norm) {
            // μ ≤ λ_min(γᵀΣγ) ≤ λ_max(Σ)·‖γ‖²
            if self.mu > lz * g * g * (1.0 + 1e-9) {
                return Err(Error::InvalidConfig(format!(
                    "mu ({}) exceeds lambda_Z·‖gamma*‖² ({})",
                    self.mu,
                    lz * g * g
                )));
            }
        }
        Ok(())
    }
}

/// Constant step chosen for a known horizon, with the side-condition outcome.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HorizonStep {
    pub schedule: StepSchedule,
    /// `log(T) / (μ T)` before clamping.
    pub unclamped: f64,
    /// `μ / (μ² + 3σ₁²)` when `σ₁²` is known.
    pub bound: Option<f64>,
    pub clamped: bool,
}

/// `α = log(T)/(μT)`, clamped to `μ/(μ² + 3σ₁²)` when `σ₁²` is available.
pub fn theorem1_alpha(horizon: u64, k: &TheoryConstants) -> Result<HorizonStep> {
    if horizon < 2 {
        return Err(Error::InvalidConfig(format!(
            "the horizon must be at least 2, got {horizon}"
        )));
    }
    if !(k.mu > 0.0 && k.mu.is_finite()) {
        return Err(Error::InvalidConfig(format!("mu must be positive, got {}", k.mu)));
    }
    let t = horizon as f64;
    let unclamped = t.ln() / (k.mu * t);
    let bound = k.sigma1_sq.map(|s1| k.mu / (k.mu * k.mu + 3.0 * s1));
    let (alpha, clamped) = match bound {
        Some(b) if unclamped > b => (b, true),
        _ => (unclamped, false),
    };
    Ok(HorizonStep {
        schedule: StepSchedule::constant(alpha)?,
        unclamped,
        bound,
        clamped,
    })
}

/// `Σ_t (α_t² + α_t √β_t) < ∞` for polynomial schedules.
pub fn two_timescale_summable(alpha: &StepSchedule, beta: &StepSchedule) -> bool {
    let (a, b) = (alpha.exponent(), beta.exponent());
    2.0 * a > 1.0 && a + 0.5 * b > 1.0
}

/// `α_t = C_α t^(−1+ι/2)` and `β_t = C_β t^(−1+ι/2)` with
/// `C_α = min{½ d_z^(−4κ−ϑ/2) λ_Z⁻¹ C_γ⁻², ½ (‖γ*‖ λ_Z)⁻²}` and
/// `C_β = μ² d_z^(−1−2κ) / 128`.
pub fn theorem2_schedules(k: &TheoryConstants, d_z: usize) -> Result<(StepSchedule, StepSchedule)> {
    k.validate()?;
    if d_z == 0 {
        return Err(Error::InvalidConfig("d_z must be positive".into()));
    }
    let lambda_z = k.lambda_z.ok_or(Error::MissingConstant("lambda_Z"))?;
    let c_gamma = k.c_gamma.ok_or(Error::MissingConstant("C_gamma"))?;
    let g_norm = k.gamma_star_norm.ok_or(Error::MissingConstant("gamma_star_norm"))?;
    if !(g_norm > 0.0) {
        return Err(Error::InvalidConfig("gamma_star_norm must be positive".into()));
    }
    let dz = d_z as f64;
    let first = 0.5 * dz.powf(-4.0 * k.varkappa - 0.5 * k.vartheta) / (lambda_z * c_gamma * c_gamma);
    let second = 0.5 / (g_norm * lambda_z).powi(2);
    let c_alpha = first.min(second);
    let c_beta = k.mu * k.mu * dz.powf(-1.0 - 2.0 * k.varkappa) / 128.0;
    let exponent = 1.0 - 0.5 * k.iota;
    let alpha = StepSchedule::polynomial(c_alpha, exponent)?;
    let beta = StepSchedule::polynomial(c_beta, exponent)?;
    if !two_timescale_summable(&alpha, &beta) {
        return Err(Error::InvalidConfig(format!(
            "iota = {} breaks summability of α_t² + α_t√β_t (need iota < 2/3)",
            k.iota
        )));
    }
    Ok((alpha, beta))
}
