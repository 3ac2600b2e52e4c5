//! Streaming instrumental-variable regression.
//!
//! The crate provides synthetic data-generating processes with known
//! structural parameters, the streaming estimators (TOSG, OTSG, the CSO
//! plug-in variant and online 2SLS), step-size schedules, closed-form and
//! Monte-Carlo population oracles, metrics, and a multi-trial harness.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dgp;
pub mod diagnostics;
pub mod error;
pub mod estimators;
pub mod harness;
pub mod kernels;
pub mod linalg;
pub mod metrics;
pub mod oracle;
pub mod presets;
pub mod schedule;

pub use dgp::{Dgp, DgpConfig, Family, OneSample, Phi, TwoSample};
pub use error::{Error, Result};
pub use estimators::{Algorithm, O2slsGain, O2slsState, OtsgState, TosgState};
pub use harness::{run_experiment, run_trial, ExperimentSpec, MetricSeries, Schedules};
pub use metrics::MetricPoint;
pub use oracle::{grad_f, mc_moments, summarize, PopulationSummary};
pub use schedule::{StepSchedule, TheoryConstants};
