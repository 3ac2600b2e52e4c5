//! Population quantities of a DGP: closed forms for the linear families and
//! Monte-Carlo estimates for everything else.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dgp::{Dgp, DgpConfig, Family, OneSample};
use crate::error::{ensure_len, Error, Result};
use crate::linalg::{max_eigenvalue, min_eigenvalue, operator_norm, spd_solve, spd_solve_vec};
use crate::schedule::TheoryConstants;

/// Standard errors of the Monte-Carlo moment estimates, entrywise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentErrors {
    pub n: usize,
    pub sigma_z: DMatrix<f64>,
    pub sigma_zx: DMatrix<f64>,
    pub sigma_zy: DVector<f64>,
    pub m: DMatrix<f64>,
    pub b: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationSummary {
    pub sigma_z: DMatrix<f64>,
    pub sigma_zx: DMatrix<f64>,
    pub sigma_zy: DVector<f64>,
    /// `Σ_Z⁻¹ Σ_ZX`
    pub gamma_closed: DMatrix<f64>,
    /// Closed-form summaries use the two-stage formula
    /// `(γᵀΣ_Zγ)⁻¹ γᵀΣ_ZY`; Monte-Carlo summaries use `M⁻¹b`, which is
    /// defined for nonlinear first stages too. Both agree on
    /// well-specified linear models.
    pub theta_closed: DVector<f64>,
    /// `M = E[E[X|Z] E[X|Z]ᵀ]`
    pub m: DMatrix<f64>,
    /// `b = E[E[X|Z] E[Y|Z]]`, so that `∇F(θ) = Mθ − b`.
    pub b: DVector<f64>,
    /// `λ_min(M)`
    pub mu: f64,
    pub std_err: Option<MomentErrors>,
}

impl PopulationSummary {
    pub fn d_x(&self) -> usize {
        self.m.nrows()
    }

    /// Minimizer of `F`, `M⁻¹b`.
    pub fn theta_min(&self) -> Result<DVector<f64>> {
        spd_solve_vec(&self.m, &self.b, "M")
    }
}

/// `(γᵀΣγ)⁻¹ γᵀ Σ_ZY`
pub fn two_stage_theta(
    sigma_z: &DMatrix<f64>,
    gamma: &DMatrix<f64>,
    sigma_zy: &DVector<f64>,
) -> Result<DVector<f64>> {
    let gtsg = gamma.transpose() * sigma_z * gamma;
    spd_solve_vec(&gtsg, &(gamma.transpose() * sigma_zy), "gammaᵀ Σ_Z gamma")
}

/// Closed-form summary. Only linear first stages have one.
pub fn summarize(cfg: &DgpConfig) -> Result<PopulationSummary> {
    cfg.validate()?;
    if !cfg.family.is_linear() {
        return Err(Error::NonlinearFamily);
    }
    let sigma_z = cfg.z_cov.clone();
    let gamma = &cfg.gamma_star;
    let theta = &cfg.theta_star;
    let sigma_zx = &sigma_z * gamma;
    let sigma_zy = &sigma_zx * theta;
    let gamma_closed = spd_solve(&sigma_z, &sigma_zx, "Σ_Z")?;
    let theta_closed = two_stage_theta(&sigma_z, &gamma_closed, &sigma_zy)?;

    let mut m = gamma.transpose() * &sigma_z * gamma;
    let mut b = &m * theta;
    if let Family::Fig1 {
        c, confounder_mean, ..
    } = cfg.family
    {
        // E[X|Z] = γᵀZ + s𝟙 and E[Y|Z] = θᵀE[X|Z] + s with s = c·E[h]
        let s = c * confounder_mean;
        let ones = DVector::from_element(cfg.d_x, 1.0);
        m += &ones * ones.transpose() * (s * s);
        b += &ones * (s * s * (theta.sum() + 1.0));
    }
    let mu = min_eigenvalue(&m);
    if !(mu > 0.0) {
        return Err(Error::Singular(format!("M has smallest eigenvalue {mu:e}")));
    }
    Ok(PopulationSummary {
        sigma_z,
        sigma_zx,
        sigma_zy,
        gamma_closed,
        theta_closed,
        m,
        b,
        mu,
        std_err: None,
    })
}

/// `∇F(θ) = Mθ − b`
pub fn grad_f(theta: &DVector<f64>, summary: &PopulationSummary) -> Result<DVector<f64>> {
    ensure_len("theta", summary.d_x(), theta.len())?;
    Ok(&summary.m * theta - &summary.b)
}

/// Minimum Monte-Carlo sample size accepted by [`mc_moments`].
pub const MIN_MC_SAMPLES: usize = 1000;

/// Running first and second moments of a flat block of products.
struct Acc {
    sum: Vec<f64>,
    sq: Vec<f64>,
}

impl Acc {
    fn new(len: usize) -> Self {
        Acc {
            sum: vec![0.0; len],
            sq: vec![0.0; len],
        }
    }

    fn push(&mut self, i: usize, v: f64) {
        self.sum[i] += v;
        self.sq[i] += v * v;
    }

    /// Means and standard errors of the means.
    fn finish(&self, n: usize) -> (Vec<f64>, Vec<f64>) {
        let nf = n as f64;
        self.sum
            .iter()
            .zip(&self.sq)
            .map(|(s, q)| {
                let mean = s / nf;
                let var = (q / nf - mean * mean).max(0.0) * nf / (nf - 1.0);
                (mean, (var / nf).sqrt())
            })
            .unzip()
    }
}

/// Monte-Carlo estimates of the summary from `n` draws. `M` and `b` average
/// the exact conditional means over sampled instruments; the cross moments
/// average raw products.
pub fn mc_moments<R: Rng + ?Sized>(rng: &mut R, cfg: &DgpConfig, n: usize) -> Result<PopulationSummary> {
    if n < MIN_MC_SAMPLES {
        return Err(Error::InvalidConfig(format!(
            "Monte-Carlo moments need at least {MIN_MC_SAMPLES} samples, got {n}"
        )));
    }
    let dgp = Dgp::new(cfg.clone())?;
    let (d_x, d_z) = (cfg.d_x, cfg.d_z);
    let mut zz = Acc::new(d_z * d_z);
    let mut zx = Acc::new(d_z * d_x);
    let mut zy = Acc::new(d_z);
    let mut mm = Acc::new(d_x * d_x);
    let mut bb = Acc::new(d_x);
    let mut s = OneSample::zeros(d_x, d_z);
    for _ in 0..n {
        dgp.fill_one(rng, &mut s);
        let mx = dgp.conditional_mean_x(&s.z);
        let my = dgp.conditional_mean_y(&s.z);
        for j in 0..d_z {
            for i in 0..d_z {
                zz.push(i + j * d_z, s.z[i] * s.z[j]);
            }
            zy.push(j, s.z[j] * s.y);
        }
        for j in 0..d_x {
            for i in 0..d_z {
                zx.push(i + j * d_z, s.z[i] * s.x[j]);
            }
            for i in 0..d_x {
                mm.push(i + j * d_x, mx[i] * mx[j]);
            }
            bb.push(j, mx[j] * my);
        }
    }
    let (zz_m, zz_e) = zz.finish(n);
    let (zx_m, zx_e) = zx.finish(n);
    let (zy_m, zy_e) = zy.finish(n);
    let (mm_m, mm_e) = mm.finish(n);
    let (bb_m, bb_e) = bb.finish(n);
    let mat = |r, c, v: Vec<f64>| DMatrix::from_vec(r, c, v);

    let sigma_z = mat(d_z, d_z, zz_m);
    let sigma_zx = mat(d_z, d_x, zx_m);
    let sigma_zy = DVector::from_vec(zy_m);
    let m = mat(d_x, d_x, mm_m);
    let b = DVector::from_vec(bb_m);
    let gamma_closed = spd_solve(&sigma_z, &sigma_zx, "estimated Σ_Z")?;
    let theta_closed = spd_solve_vec(&m, &b, "estimated M")?;
    let mu = min_eigenvalue(&m);
    Ok(PopulationSummary {
        sigma_z,
        sigma_zx,
        sigma_zy,
        gamma_closed,
        theta_closed,
        m,
        b,
        mu,
        std_err: Some(MomentErrors {
            n,
            sigma_z: mat(d_z, d_z, zz_e),
            sigma_zx: mat(d_z, d_x, zx_e),
            sigma_zy: DVector::from_vec(zy_e),
            m: mat(d_x, d_x, mm_e),
            b: DVector::from_vec(bb_e),
        }),
    })
}

/// Step-size constants derived from the population: `μ` from the summary,
/// `λ_Z`/`μ_Z` from `Σ_Z`, `‖γ*‖` as an operator norm and
/// `C_γ = 2·max(‖γ*‖, ‖γ₀‖)`. The moment constants `σ₁²`, `σ₂²` are left
/// unset; callers supply them when known.
pub fn theory_constants(
    cfg: &DgpConfig,
    summary: &PopulationSummary,
    gamma0: Option<&DMatrix<f64>>,
) -> TheoryConstants {
    let g_norm = operator_norm(&cfg.gamma_star);
    let g0_norm = gamma0.map(operator_norm).unwrap_or(0.0);
    let mut k = TheoryConstants::new(summary.mu);
    k.lambda_z = Some(max_eigenvalue(&summary.sigma_z));
    k.mu_z = Some(min_eigenvalue(&summary.sigma_z));
    k.gamma_star_norm = Some(g_norm);
    k.c_gamma = Some(2.0 * g_norm.max(g0_norm));
    k
}
