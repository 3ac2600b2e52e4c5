//! Synthetic data-generating processes and the streaming samplers built on
//! them.
//!
//! Two model families are provided:
//!
//! * [`Family::Fig1`]: `Z ~ N(0, Σ_Z)`, `X = φ(γ*ᵀZ) + c (h + ε_x)`,
//!   `Y = θ*ᵀX + c (h₁ + ε_y)` with a confounder `h ~ N(m·𝟙, I)` shared by
//!   `X` and `Y`.
//! * [`Family::Fig2`]: `Z ~ N(0, Σ_Z)`, `X = γ*ᵀZ + ε` with
//!   `ε ~ N(0, σ_ε² I)`, `Y = θ*ᵀX + ν` where `ν = ρ ε₁ + N(0, 0.25)`.
//!
//! The two-sample oracle draws one instrument and two conditionally
//! independent regressors `X`, `X′` from `P(X | Z)`. `X′` gets its own
//! confounder and noise; `Y` is always generated from `X`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

/// Elementwise first-stage nonlinearity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phi {
    Identity,
    /// `s ↦ s²`, applied coordinatewise.
    Square,
}

impl Phi {
    #[inline]
    pub fn apply(self, s: f64) -> f64 {
        match self {
            Phi::Identity => s,
            Phi::Square => s * s,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum Family {
    Fig1 {
        c: f64,
        phi: Phi,
        /// Mean of every coordinate of the confounder `h`. Zero keeps the
        /// structural error centred; `1.0` gives `h ~ N(𝟙, I)`.
        #[serde(default)]
        confounder_mean: f64,
    },
    Fig2 {
        rho: f64,
        sigma_eps: f64,
    },
}

impl Family {
    /// Whether `E[X | Z]` is affine in `Z`.
    pub fn is_linear(&self) -> bool {
        !matches!(
            self,
            Family::Fig1 {
                phi: Phi::Square,
                ..
            }
        )
    }
}

/// Full description of a synthetic model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DgpConfig {
    pub d_x: usize,
    pub d_z: usize,
    pub theta_star: DVector<f64>,
    /// `d_z × d_x` first-stage coefficients.
    pub gamma_star: DMatrix<f64>,
    pub family: Family,
    pub z_cov: DMatrix<f64>,
}

impl DgpConfig {
    /// Fig. 2 model with the identity-block `γ*` and `Σ_Z = I`.
    pub fn fig2(d_x: usize, d_z: usize, rho: f64, sigma_eps: f64, theta_star: DVector<f64>) -> Self {
        DgpConfig {
            d_x,
            d_z,
            theta_star,
            gamma_star: identity_block(d_z, d_x),
            family: Family::Fig2 { rho, sigma_eps },
            z_cov: DMatrix::identity(d_z, d_z),
        }
    }

    /// Fig. 1 model with the identity-block `γ*`, `Σ_Z = I` and a centred
    /// confounder.
    pub fn fig1(d_x: usize, d_z: usize, c: f64, phi: Phi, theta_star: DVector<f64>) -> Self {
        DgpConfig {
            d_x,
            d_z,
            theta_star,
            gamma_star: identity_block(d_z, d_x),
            family: Family::Fig1 {
                c,
                phi,
                confounder_mean: 0.0,
            },
            z_cov: DMatrix::identity(d_z, d_z),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.d_x == 0 || self.d_z == 0 {
            return bad("d_x and d_z must be positive".into());
        }
        if self.d_z < self.d_x {
            return bad(format!("d_z ({}) must be at least d_x ({})", self.d_z, self.d_x));
        }
        if self.theta_star.len() != self.d_x {
            return bad(format!(
                "theta_star has length {}, expected {}",
                self.theta_star.len(),
                self.d_x
            ));
        }
        if self.gamma_star.shape() != (self.d_z, self.d_x) {
            return bad(format!(
                "gamma_star is {:?}, expected ({}, {})",
                self.gamma_star.shape(),
                self.d_z,
                self.d_x
            ));
        }
        if self.z_cov.shape() != (self.d_z, self.d_z) {
            return bad(format!("z_cov is {:?}, expected square d_z", self.z_cov.shape()));
        }
        let finite = |s: &[f64]| s.iter().all(|v| v.is_finite());
        if !finite(self.theta_star.as_slice())
            || !finite(self.gamma_star.as_slice())
            || !finite(self.z_cov.as_slice())
        {
            return bad("non-finite entry in theta_star, gamma_star or z_cov".into());
        }
        match self.family {
            Family::Fig1 {
                c, confounder_mean, ..
            } => {
                if !(c >= 0.0 && c.is_finite()) {
                    return bad(format!("c must be finite and non-negative, got {c}"));
                }
                if !confounder_mean.is_finite() {
                    return bad("confounder_mean must be finite".into());
                }
            }
            Family::Fig2 { rho, sigma_eps } => {
                if !rho.is_finite() {
                    return bad("rho must be finite".into());
                }
                if !(sigma_eps > 0.0 && sigma_eps.is_finite()) {
                    return bad(format!("sigma_eps must be positive, got {sigma_eps}"));
                }
            }
        }
        if !linalg::is_symmetric(&self.z_cov, 1e-12) {
            return bad("z_cov must be symmetric".into());
        }
        if self.z_cov.clone().cholesky().is_none() {
            return bad("z_cov must be positive definite".into());
        }
        let info = self.gamma_star.transpose() * &self.z_cov * &self.gamma_star;
        let lmin = linalg::min_eigenvalue(&info);
        if !(lmin > 0.0) {
            return bad(format!(
                "gamma_starᵀ z_cov gamma_star is not positive definite (λ_min = {lmin:e})"
            ));
        }
        Ok(())
    }
}

/// `d_z × d_x` matrix with ones on the leading diagonal.
pub fn identity_block(d_z: usize, d_x: usize) -> DMatrix<f64> {
    DMatrix::from_fn(d_z, d_x, |i, j| if i == j { 1.0 } else { 0.0 })
}

/// Uniformly random unit vector of length `d`, reproducible from `seed`.
pub fn random_unit_vector(d: usize, seed: u64) -> DVector<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let v = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
        let n = v.norm();
        if n > 1e-12 {
            return v / n;
        }
    }
}

/// One streamed observation `(Z, X, Y)`.
#[derive(Debug, Clone, PartialEq)]
pub struct OneSample {
    pub z: DVector<f64>,
    pub x: DVector<f64>,
    pub y: f64,
}

impl OneSample {
    pub fn zeros(d_x: usize, d_z: usize) -> Self {
        OneSample {
            z: DVector::zeros(d_z),
            x: DVector::zeros(d_x),
            y: 0.0,
        }
    }
}

/// `(Z, X, X′, Y)` with `X`, `X′` independent given `Z`; `Y` comes from `X`.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoSample {
    pub z: DVector<f64>,
    pub x: DVector<f64>,
    pub x_prime: DVector<f64>,
    pub y: f64,
}

impl TwoSample {
    pub fn zeros(d_x: usize, d_z: usize) -> Self {
        TwoSample {
            z: DVector::zeros(d_z),
            x: DVector::zeros(d_x),
            x_prime: DVector::zeros(d_x),
            y: 0.0,
        }
    }
}

/// A validated model ready for sampling.
#[derive(Debug, Clone)]
pub struct Dgp {
    cfg: DgpConfig,
    /// Lower Cholesky factor of `Σ_Z`; `None` when `Σ_Z = I`.
    z_chol: Option<DMatrix<f64>>,
}

#[inline]
fn normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

impl Dgp {
    pub fn new(cfg: DgpConfig) -> Result<Self> {
        cfg.validate()?;
        let identity = cfg.z_cov == DMatrix::identity(cfg.d_z, cfg.d_z);
        let z_chol = if identity {
            None
        } else {
            Some(cfg.z_cov.clone().cholesky().expect("validated").l())
        };
        Ok(Dgp { cfg, z_chol })
    }

    pub fn config(&self) -> &DgpConfig {
        &self.cfg
    }

    pub fn d_x(&self) -> usize {
        self.cfg.d_x
    }

    pub fn d_z(&self) -> usize {
        self.cfg.d_z
    }

    pub fn theta_star(&self) -> &DVector<f64> {
        &self.cfg.theta_star
    }

    fn draw_z<R: Rng + ?Sized>(&self, rng: &mut R, z: &mut DVector<f64>) {
        match &self.z_chol {
            None => z.iter_mut().for_each(|v| *v = normal(rng)),
            Some(l) => {
                let xi = DVector::from_fn(self.cfg.d_z, |_, _| normal(rng));
                z.copy_from(&(l * xi));
            }
        }
    }

    /// `φ(γ*ᵀz)` written into `out`.
    fn first_stage(&self, z: &DVector<f64>, out: &mut DVector<f64>) {
        let phi = match self.cfg.family {
            Family::Fig1 { phi, .. } => phi,
            Family::Fig2 { .. } => Phi::Identity,
        };
        let g = &self.cfg.gamma_star;
        for j in 0..self.cfg.d_x {
            out[j] = phi.apply(g.column(j).dot(z));
        }
    }

    /// `E[X | Z = z]`.
    pub fn conditional_mean_x(&self, z: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.cfg.d_x);
        self.first_stage(z, &mut out);
        if let Family::Fig1 {
            c, confounder_mean, ..
        } = self.cfg.family
        {
            out.add_scalar_mut(c * confounder_mean);
        }
        out
    }

    /// `E[Y | Z = z]`.
    pub fn conditional_mean_y(&self, z: &DVector<f64>) -> f64 {
        let mx = self.conditional_mean_x(z);
        let shift = match self.cfg.family {
            Family::Fig1 {
                c, confounder_mean, ..
            } => c * confounder_mean,
            Family::Fig2 { .. } => 0.0,
        };
        self.cfg.theta_star.dot(&mx) + shift
    }

    /// Adds the first-stage noise to `x` (which holds `φ(γ*ᵀz)` on entry) and
    /// returns the outcome noise that `Y` must carry when generated from it.
    fn add_x_noise<R: Rng + ?Sized>(&self, rng: &mut R, x: &mut DVector<f64>) -> f64 {
        match self.cfg.family {
            Family::Fig1 {
                c, confounder_mean, ..
            } => {
                let mut h1 = 0.0;
                for j in 0..self.cfg.d_x {
                    let h = confounder_mean + normal(rng);
                    let eps = normal(rng);
                    if j == 0 {
                        h1 = h;
                    }
                    x[j] += c * (h + eps);
                }
                let eps_y = normal(rng);
                c * (h1 + eps_y)
            }
            Family::Fig2 { rho, sigma_eps } => {
                let mut e1 = 0.0;
                for j in 0..self.cfg.d_x {
                    let e = sigma_eps * normal(rng);
                    if j == 0 {
                        e1 = e;
                    }
                    x[j] += e;
                }
                rho * e1 + 0.5 * normal(rng)
            }
        }
    }

    /// Overwrites `out` with a fresh one-sample draw.
    pub fn fill_one<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut OneSample) {
        self.draw_z(rng, &mut out.z);
        self.first_stage(&out.z, &mut out.x);
        let noise = self.add_x_noise(rng, &mut out.x);
        out.y = self.cfg.theta_star.dot(&out.x) + noise;
    }

    pub fn sample_one<R: Rng + ?Sized>(&self, rng: &mut R) -> OneSample {
        let mut s = OneSample::zeros(self.cfg.d_x, self.cfg.d_z);
        self.fill_one(rng, &mut s);
        s
    }

    /// Two-sample draw at a caller-supplied instrument value.
    pub fn fill_two_at<R: Rng + ?Sized>(&self, rng: &mut R, z: &DVector<f64>, out: &mut TwoSample) {
        out.z.copy_from(z);
        self.complete_two(rng, out);
    }

    pub fn fill_two<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut TwoSample) {
        self.draw_z(rng, &mut out.z);
        self.complete_two(rng, out);
    }

    fn complete_two<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut TwoSample) {
        self.first_stage(&out.z, &mut out.x);
        out.x_prime.copy_from(&out.x);
        let noise = self.add_x_noise(rng, &mut out.x);
        out.y = self.cfg.theta_star.dot(&out.x) + noise;
        let _ = self.add_x_noise(rng, &mut out.x_prime);
    }

    pub fn sample_two<R: Rng + ?Sized>(&self, rng: &mut R) -> TwoSample {
        let mut s = TwoSample::zeros(self.cfg.d_x, self.cfg.d_z);
        self.fill_two(rng, &mut s);
        s
    }

    /// `n` i.i.d. one-samples.
    pub fn test_set<R: Rng + ?Sized>(&self, rng: &mut R, n: usize) -> Result<Vec<OneSample>> {
        if n == 0 {
            return Err(Error::InvalidConfig("test set size must be positive".into()));
        }
        Ok((0..n).map(|_| self.sample_one(rng)).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn noise_free_fig1_is_exact() {
        let theta = DVector::from_vec(vec![0.5, -1.0, 2.0, 0.25]);
        let cfg = DgpConfig::fig1(4, 8, 0.0, Phi::Identity, theta.clone());
        let dgp = Dgp::new(cfg.clone()).unwrap();
        let mut r = rng(3);
        for _ in 0..50 {
            let s = dgp.sample_one(&mut r);
            let mean = cfg.gamma_star.transpose() * &s.z;
            assert_eq!(s.x, mean);
            assert_eq!(s.y, theta.dot(&s.x));
            let t = dgp.sample_two(&mut r);
            assert_eq!(t.x, t.x_prime);
            assert_eq!(t.x, cfg.gamma_star.transpose() * &t.z);
        }
    }

    #[test]
    fn fig2_grid_is_accepted() {
        for (dx, dz) in [(1, 1), (8, 16)] {
            for rho in [1.0, 4.0] {
                for sig in [0.5, 1.0] {
                    let cfg = DgpConfig::fig2(dx, dz, rho, sig, random_unit_vector(dx, 1));
                    assert!(Dgp::new(cfg).is_ok());
                }
            }
        }
    }

    #[test]
    fn fig1_grid_is_accepted() {
        for (dx, dz) in [(4, 8), (8, 16)] {
            for c in [0.1, 1.0] {
                for phi in [Phi::Identity, Phi::Square] {
                    let cfg = DgpConfig::fig1(dx, dz, c, phi, random_unit_vector(dx, 2));
                    assert!(Dgp::new(cfg).is_ok());
                }
            }
        }
    }

    #[test]
    fn rejects_invalid_configs() {
        let ok = DgpConfig::fig2(2, 3, 1.0, 0.5, DVector::from_element(2, 1.0));
        let mut c = ok.clone();
        c.d_z = 1;
        c.gamma_star = DMatrix::zeros(1, 2);
        c.z_cov = DMatrix::identity(1, 1);
        assert!(matches!(Dgp::new(c), Err(Error::InvalidConfig(_))));

        let mut c = ok.clone();
        c.gamma_star = DMatrix::zeros(3, 2);
        assert!(Dgp::new(c).is_err(), "rank-deficient first stage");

        let mut c = ok.clone();
        c.family = Family::Fig2 {
            rho: 1.0,
            sigma_eps: 0.0,
        };
        assert!(Dgp::new(c).is_err());

        let mut c = ok.clone();
        c.theta_star = DVector::from_element(2, f64::NAN);
        assert!(Dgp::new(c).is_err());

        let mut c = ok.clone();
        c.family = Family::Fig1 {
            c: -1.0,
            phi: Phi::Identity,
            confounder_mean: 0.0,
        };
        assert!(Dgp::new(c).is_err());

        let mut c = ok;
        c.z_cov[(0, 1)] = 0.3;
        assert!(Dgp::new(c).is_err(), "asymmetric covariance");
    }

    #[test]
    fn test_set_sizes_and_determinism() {
        let dgp = Dgp::new(DgpConfig::fig2(8, 16, 1.0, 0.5, random_unit_vector(8, 4))).unwrap();
        assert_eq!(dgp.test_set(&mut rng(1), 400).unwrap().len(), 400);
        assert_eq!(dgp.test_set(&mut rng(1), 1).unwrap().len(), 1);
        assert!(dgp.test_set(&mut rng(1), 0).is_err());
        let a = dgp.test_set(&mut rng(9), 64).unwrap();
        let b = dgp.test_set(&mut rng(9), 64).unwrap();
        for (p, q) in a.iter().zip(&b) {
            assert_eq!(p.y.to_bits(), q.y.to_bits());
            assert!(p.x.iter().zip(q.x.iter()).all(|(u, v)| u.to_bits() == v.to_bits()));
            assert!(p.z.iter().zip(q.z.iter()).all(|(u, v)| u.to_bits() == v.to_bits()));
        }
    }

    #[test]
    fn correlated_instruments_follow_covariance() {
        let mut cfg = DgpConfig::fig2(1, 2, 0.0, 0.5, DVector::from_element(1, 1.0));
        cfg.z_cov = DMatrix::from_row_slice(2, 2, &[2.0, 0.6, 0.6, 1.0]);
        let dgp = Dgp::new(cfg.clone()).unwrap();
        let mut r = rng(11);
        let n = 200_000;
        let mut acc = DMatrix::<f64>::zeros(2, 2);
        for _ in 0..n {
            let s = dgp.sample_one(&mut r);
            acc += &s.z * s.z.transpose();
        }
        acc /= n as f64;
        assert!((acc - cfg.z_cov).abs().max() < 0.03);
    }
}
