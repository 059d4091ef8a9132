//! Plug-in and jackknife-corrected functional estimates with variance estimates.

use std::fmt;

use nalgebra::DVector;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg;
use crate::zcore::{
    empirical_jacobian, jacobian_sum, loo_solve_seeded, Dataset, SolveResult, SolverConfig, ZModel,
};

/// Two-sided 95% normal critical value.
pub const Z_CRITICAL: f64 = 1.96;

/// Leave-one-out solutions around a full-sample estimate.
#[derive(Clone, Debug, PartialEq)]
pub struct LooSet {
    pub full: SolveResult,
    /// One entry per record. Entries listed in `failures` did not converge; a
    /// solve that errored out is stored as the warm start with an infinite residual.
    pub estimates: Vec<SolveResult>,
    pub failures: Vec<usize>,
}

impl LooSet {
    pub fn len(&self) -> usize {
        self.estimates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.estimates.is_empty()
    }

    pub fn is_complete(&self) -> bool {
        self.failures.is_empty()
    }

    pub fn diagnostics(&self) -> Diagnostics {
        Diagnostics {
            loo_converged: self.len() - self.failures.len(),
            loo_failed: self.failures.len(),
            loo_regularized: self.estimates.iter().filter(|s| s.regularized).count(),
            degenerate_variance: false,
        }
    }

    fn require_complete(&self) -> Result<()> {
        if self.failures.is_empty() {
            Ok(())
        } else {
            Err(Error::JackknifeUndefined {
                failed: self.failures.clone(),
            })
        }
    }

    fn functionals<M: ZModel>(&self, model: &M) -> Vec<f64> {
        let f = model.functional();
        self.estimates.iter().map(|s| f.value(&s.theta)).collect()
    }
}

fn require_converged(full: &SolveResult) -> Result<()> {
    if full.converged {
        Ok(())
    } else {
        Err(Error::NotConverged {
            iterations: full.iterations,
            residual_norm: full.residual_norm,
        })
    }
}

fn assemble(full: &SolveResult, outcomes: Vec<Result<SolveResult>>) -> LooSet {
    let mut failures = Vec::new();
    let estimates = outcomes
        .into_iter()
        .enumerate()
        .map(|(i, outcome)| match outcome {
            Ok(s) if s.converged => s,
            Ok(s) => {
                failures.push(i);
                s
            }
            Err(_) => {
                failures.push(i);
                SolveResult {
                    theta: full.theta.clone(),
                    residual_norm: f64::INFINITY,
                    iterations: 0,
                    converged: false,
                    regularized: false,
                }
            }
        })
        .collect();
    LooSet {
        full: full.clone(),
        estimates,
        failures,
    }
}

/// All `n` leave-one-out solves, each warm-started at `full.theta`, evaluated in parallel.
///
/// Results are merged in record order, so the output does not depend on scheduling.
pub fn compute_loo_set<M: ZModel>(
    model: &M,
    data: &Dataset<M::Record>,
    full: &SolveResult,
    config: &SolverConfig,
) -> Result<LooSet> {
    require_converged(full)?;
    config.validate()?;
    let sum = jacobian_sum(model, data, &full.theta)?;
    let outcomes = (0..data.n())
        .into_par_iter()
        .map(|i| loo_solve_seeded(model, data, i, &full.theta, &sum, config))
        .collect();
    Ok(assemble(full, outcomes))
}

/// Single-threaded [`compute_loo_set`].
pub fn compute_loo_set_sequential<M: ZModel>(
    model: &M,
    data: &Dataset<M::Record>,
    full: &SolveResult,
    config: &SolverConfig,
) -> Result<LooSet> {
    require_converged(full)?;
    config.validate()?;
    let sum = jacobian_sum(model, data, &full.theta)?;
    let outcomes = (0..data.n())
        .map(|i| loo_solve_seeded(model, data, i, &full.theta, &sum, config))
        .collect();
    Ok(assemble(full, outcomes))
}

/// `τ(θ̂)`.
pub fn plugin_estimate<M: ZModel>(model: &M, full: &SolveResult) -> Result<f64> {
    require_converged(full)?;
    finite(model.functional().value(&full.theta), "functional value")
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct JackknifeEstimate {
    pub point: f64,
    /// The subtracted correction `((n-1)/n) Σ (τ(θ̂⁽⁻ⁱ⁾) - τ(θ̂))`.
    pub bias_estimate: f64,
}

pub fn jackknife_estimate<M: ZModel>(
    model: &M,
    full: &SolveResult,
    loo: &LooSet,
) -> Result<JackknifeEstimate> {
    loo.require_complete()?;
    let plug = plugin_estimate(model, full)?;
    let n = loo.len() as f64;
    let sum: f64 = loo.functionals(model).iter().map(|t| t - plug).sum();
    let bias_estimate = finite((n - 1.0) / n * sum, "jackknife correction")?;
    Ok(JackknifeEstimate {
        point: plug - bias_estimate,
        bias_estimate,
    })
}

/// Jackknife variance of the point estimate, `((n-1)/n) Σ (τ_i - τ̄)²`.
///
/// Exactly zero when every leave-one-out functional is identical.
pub fn jackknife_variance<M: ZModel>(model: &M, loo: &LooSet) -> Result<f64> {
    loo.require_complete()?;
    let taus = loo.functionals(model);
    if taus.iter().all(|t| *t == taus[0]) {
        return finite(0.0 * taus[0], "leave-one-out functional");
    }
    let n = taus.len() as f64;
    let mean = taus.iter().sum::<f64>() / n;
    let ss: f64 = taus.iter().map(|t| (t - mean).powi(2)).sum();
    finite((n - 1.0) / n * ss, "jackknife variance")
}

/// Sandwich variance of the plug-in estimate, `∇τᵀ Ĵ⁻ᵀ Ĉov(h) Ĵ⁻¹ ∇τ / n`, with the
/// uncentered moment covariance at `θ̂`.
pub fn sandwich_variance<M: ZModel>(
    model: &M,
    data: &Dataset<M::Record>,
    full: &SolveResult,
) -> Result<f64> {
    require_converged(full)?;
    let theta = &full.theta;
    let jac = empirical_jacobian(model, data, theta)?;
    let grad = model.functional().gradient(theta);
    let v = linalg::solve_checked(&jac.transpose(), &grad).ok_or_else(|| Error::RankDeficient {
        what: "empirical jacobian",
        condition_number: linalg::condition_number(&jac),
    })?;
    let mut h = DVector::zeros(model.dim());
    let mut acc = 0.0;
    for r in data.records() {
        h.fill(0.0);
        model.add_moment(r, theta, 1.0, &mut h);
        acc += v.dot(&h).powi(2);
    }
    let n = data.n() as f64;
    finite(acc / (n * n), "sandwich variance")
}

/// `point ± 1.96 √variance`.
pub fn confidence_interval(point: f64, variance: f64) -> Result<(f64, f64)> {
    if !(variance >= 0.0) || !variance.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "variance must be finite and nonnegative, got {variance}"
        )));
    }
    let half = Z_CRITICAL * variance.sqrt();
    Ok((point - half, point + half))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    Plugin,
    Jackknife,
    Kline,
    Jeffreys,
    Jive1,
    Jive2,
    Tsls,
}

impl Method {
    pub const ALL: [Method; 7] = [
        Method::Plugin,
        Method::Jackknife,
        Method::Kline,
        Method::Jeffreys,
        Method::Jive1,
        Method::Jive2,
        Method::Tsls,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Plugin => "plugin",
            Method::Jackknife => "jackknife",
            Method::Kline => "kline",
            Method::Jeffreys => "jeffreys",
            Method::Jive1 => "jive1",
            Method::Jive2 => "jive2",
            Method::Tsls => "tsls",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown estimator '{s}'")))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Diagnostics {
    pub loo_converged: usize,
    pub loo_failed: usize,
    /// Leave-one-out solves that needed the ridge escalation.
    pub loo_regularized: usize,
    /// Set when the jackknife variance collapsed to exactly zero.
    pub degenerate_variance: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EstimateReport {
    pub point: f64,
    /// Variance of `point` on the raw scale.
    pub variance: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub method: Method,
    pub bias_estimate: f64,
    pub diagnostics: Diagnostics,
}

impl EstimateReport {
    pub fn new(
        method: Method,
        point: f64,
        variance: f64,
        bias_estimate: f64,
        diagnostics: Diagnostics,
    ) -> Result<Self> {
        let point = finite(point, "point estimate")?;
        let (ci_low, ci_high) = confidence_interval(point, variance)?;
        Ok(Self {
            point,
            variance,
            ci_low,
            ci_high,
            method,
            bias_estimate,
            diagnostics,
        })
    }

    pub fn std_error(&self) -> f64 {
        self.variance.sqrt()
    }

    pub fn covers(&self, target: f64) -> bool {
        self.ci_low <= target && target <= self.ci_high
    }
}

/// Plug-in point with the sandwich variance.
pub fn plugin_report<M: ZModel>(
    model: &M,
    data: &Dataset<M::Record>,
    full: &SolveResult,
) -> Result<EstimateReport> {
    let point = plugin_estimate(model, full)?;
    let variance = sandwich_variance(model, data, full)?;
    EstimateReport::new(Method::Plugin, point, variance, 0.0, Diagnostics::default())
}

/// Jackknife-corrected point with the jackknife variance.
pub fn jackknife_report<M: ZModel>(
    model: &M,
    full: &SolveResult,
    loo: &LooSet,
) -> Result<EstimateReport> {
    let est = jackknife_estimate(model, full, loo)?;
    let variance = jackknife_variance(model, loo)?;
    let mut diagnostics = loo.diagnostics();
    diagnostics.degenerate_variance = variance == 0.0;
    EstimateReport::new(
        Method::Jackknife,
        est.point,
        variance,
        est.bias_estimate,
        diagnostics,
    )
}

fn finite(v: f64, what: &'static str) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite { what })
    }
}
