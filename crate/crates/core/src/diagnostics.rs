//! Reduced-scale self checks: gradient unbiasedness and the O2SLS inverse
//! identities. Each returns the measured quantity; callers compare it with
//! their tolerance.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dgp::{Dgp, DgpConfig, OneSample, TwoSample};
use crate::error::{ensure_len, Error, Result};
use crate::estimators::{O2slsGain, O2slsState};
use crate::oracle::grad_f;
use crate::presets::population;

#[derive(Debug, Clone, PartialEq)]
pub struct GradientReport {
    pub mc_mean: DVector<f64>,
    pub exact: DVector<f64>,
    /// `‖mc − exact‖ / ‖exact‖`
    pub rel_error: f64,
}

/// Monte-Carlo mean of the two-sample estimate `(Xᵀθ − Y)X′` over `n` draws
/// against the population gradient.
pub fn gradient_check(cfg: &DgpConfig, theta: &DVector<f64>, n: usize, seed: u64) -> Result<GradientReport> {
    if n == 0 {
        return Err(Error::InvalidConfig("gradient check needs at least one draw".into()));
    }
    ensure_len("theta", cfg.d_x, theta.len())?;
    let dgp = Dgp::new(cfg.clone())?;
    let exact = grad_f(theta, &population(cfg)?)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = TwoSample::zeros(cfg.d_x, cfg.d_z);
    let mut sum = DVector::zeros(cfg.d_x);
    for _ in 0..n {
        dgp.fill_two(&mut rng, &mut s);
        let r = s.x.dot(theta) - s.y;
        sum.axpy(r, &s.x_prime, 1.0);
    }
    let mc_mean = sum / n as f64;
    let norm = exact.norm();
    if norm == 0.0 {
        return Err(Error::InvalidConfig(
            "gradient vanishes at theta; pick theta away from the optimum".into(),
        ));
    }
    let rel_error = (&mc_mean - &exact).norm() / norm;
    Ok(GradientReport {
        mc_mean,
        exact,
        rel_error,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InverseReport {
    /// Max-norm of `V_n(λI + Σ Z_iZ_iᵀ) − I`.
    pub v_err: f64,
    /// Max-norm of `U_n(λI + Σ γ_iᵀZ_iZ_iᵀγ_i) − I`.
    pub u_err: f64,
}

impl InverseReport {
    pub fn max(&self) -> f64 {
        self.v_err.max(self.u_err)
    }
}

/// Runs `n` O2SLS updates from zero and compares the maintained inverses
/// with the explicitly accumulated matrices. `corrupt_u0` flips the sign of
/// the first diagonal entry of `U₀`, which must make the check fail (either
/// through a large residual or a rejected update, reported as `∞`).
pub fn sherman_morrison_check(
    cfg: &DgpConfig,
    n: usize,
    lambda: f64,
    gain: O2slsGain,
    seed: u64,
    corrupt_u0: bool,
) -> Result<InverseReport> {
    let dgp = Dgp::new(cfg.clone())?;
    let (d_x, d_z) = (cfg.d_x, cfg.d_z);
    let mut st = O2slsState::zeros(d_x, d_z, lambda)?.with_gain(gain);
    if corrupt_u0 {
        st.u[(0, 0)] = -st.u[(0, 0)];
    }
    let mut a_v = DMatrix::identity(d_z, d_z) * lambda;
    let mut a_u = DMatrix::identity(d_x, d_x) * lambda;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = OneSample::zeros(d_x, d_z);
    for _ in 0..n {
        dgp.fill_one(&mut rng, &mut s);
        let gz = st.gamma.transpose() * &s.z;
        a_v += &s.z * s.z.transpose();
        a_u += &gz * gz.transpose();
        match st.update(&s) {
            Ok(()) => {}
            Err(Error::Corrupted(_)) => {
                return Ok(InverseReport {
                    v_err: f64::INFINITY,
                    u_err: f64::INFINITY,
                })
            }
            Err(e) => return Err(e),
        }
    }
    let err = |m: DMatrix<f64>| {
        let r = m.nrows();
        let e = (m - DMatrix::identity(r, r)).amax();
        if e.is_nan() {
            f64::INFINITY
        } else {
            e
        }
    };
    Ok(InverseReport {
        v_err: err(&st.v * a_v),
        u_err: err(&st.u * a_u),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dgp::random_unit_vector;

    #[test]
    fn inverses_track_accumulated_matrices() {
        let cfg = DgpConfig::fig2(3, 5, 1.0, 0.5, random_unit_vector(3, 1));
        let r = sherman_morrison_check(&cfg, 200, 0.1, O2slsGain::Posterior, 4, false).unwrap();
        assert!(r.max() <= 1e-8, "{r:?}");
        // V never reads γ; U inherits the early blow-up of the lagged first stage.
        let r = sherman_morrison_check(&cfg, 200, 0.1, O2slsGain::Prior, 4, false).unwrap();
        assert!(r.v_err <= 1e-8, "{r:?}");
        let bad = sherman_morrison_check(&cfg, 200, 0.1, O2slsGain::Posterior, 4, true).unwrap();
        assert!(bad.max() > 1e-3);
    }

    #[test]
    fn gradient_check_small() {
        let cfg = DgpConfig::fig2(2, 3, 1.0, 0.5, random_unit_vector(2, 1));
        let r = gradient_check(&cfg, &DVector::zeros(2), 50_000, 1).unwrap();
        assert!(r.rel_error < 0.05, "{r:?}");
        assert!(gradient_check(&cfg, &cfg.theta_star, 10, 1).is_err());
        assert!(gradient_check(&cfg, &DVector::zeros(2), 0, 1).is_err());
    }
}
