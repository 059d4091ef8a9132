//! Z-estimation, leave-one-out jackknife corrections and baseline estimators.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod error;
pub mod jackknife;
pub mod linalg;
pub mod models;
pub mod oracle;
pub mod rng;
pub mod zcore;

pub use error::{Error, Result};
pub use jackknife::{
    compute_loo_set, compute_loo_set_sequential, confidence_interval, jackknife_estimate,
    jackknife_report, jackknife_variance, plugin_estimate, plugin_report, sandwich_variance,
    Diagnostics, EstimateReport, JackknifeEstimate, LooSet, Method, Z_CRITICAL,
};
pub use zcore::{
    empirical_jacobian, empirical_moment, finite_difference_jacobian, jacobian_discrepancy,
    loo_solve, solve_z, Dataset, Functional, QuadraticConvention, SmoothFunctional, SolveResult,
    SolverConfig, ZModel, RIDGE_ESCALATION,
};
