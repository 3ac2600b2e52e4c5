//! Evaluation of iterates.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::dgp::OneSample;
use crate::error::{ensure_len, Error, Result};
use crate::kernels::sq_dist;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricPoint {
    pub iteration: u64,
    /// `‖θ_t − θ*‖²`
    pub dist_sq: f64,
    pub test_mse: Option<f64>,
    /// Test MSE of `θ*` on the same test set.
    pub oracle_mse: Option<f64>,
}

/// Metric names in the order they are reported.
pub const METRIC_NAMES: [&str; 3] = ["dist_sq", "oracle_mse", "test_mse"];

impl MetricPoint {
    /// `(name, value)` pairs for the metrics present, sorted by name.
    pub fn values(&self) -> impl Iterator<Item = (&'static str, f64)> {
        [
            ("dist_sq", Some(self.dist_sq)),
            ("oracle_mse", self.oracle_mse),
            ("test_mse", self.test_mse),
        ]
        .into_iter()
        .filter_map(|(k, v)| v.map(|v| (k, v)))
    }
}

pub fn dist_to_opt(theta: &DVector<f64>, theta_star: &DVector<f64>) -> Result<f64> {
    ensure_len("theta", theta_star.len(), theta.len())?;
    Ok(sq_dist(theta, theta_star))
}

/// Mean of `(Y − Xᵀθ)²` over the test set.
pub fn test_mse(theta: &DVector<f64>, test: &[OneSample]) -> Result<f64> {
    let first = test
        .first()
        .ok_or_else(|| Error::InvalidConfig("empty test set".into()))?;
    ensure_len("theta", first.x.len(), theta.len())?;
    let total: f64 = test
        .iter()
        .map(|s| {
            let r = s.y - s.x.dot(theta);
            r * r
        })
        .sum();
    Ok(total / test.len() as f64)
}
