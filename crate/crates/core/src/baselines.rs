//! Comparison estimators that exploit model structure: Kline's unbiased quadratic
//! estimator, Firth/Jeffreys logistic regression, JIVE1/JIVE2 and a record-level
//! bootstrap variance.

use nalgebra::{DMatrix, DVector, Matrix2, Vector2};
use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::jackknife::{Diagnostics, EstimateReport, LooSet, Method};
use crate::linalg::{self, add_outer_sparse};
use crate::models::{logistic, IvRecord, LinearRecord, LogisticModel, TslsModel};
use crate::rng::stream_rng;
use crate::zcore::{Dataset, SolveResult, SolverConfig, ZModel};

fn second_moment(data: &Dataset<LinearRecord>) -> Result<DMatrix<f64>> {
    let d = data.records()[0].x.len();
    let mut s = DMatrix::zeros(d, d);
    for (i, r) in data.records().iter().enumerate() {
        if r.x.len() != d {
            return Err(Error::InvalidRecord {
                record: i,
                reason: format!("expected {d} covariates, got {}", r.x.len()),
            });
        }
        add_outer_sparse(&mut s, &r.x, 1.0);
    }
    Ok(s / data.n() as f64)
}

/// Kline's leave-one-out unbiased estimate of `θᵀQθ` under OLS.
///
/// `loo` must come from the OLS model on the same data. Negative noise estimates
/// `σ̂ᵢ² = yᵢ(yᵢ - xᵢᵀθ̂⁽⁻ⁱ⁾)` are kept in the point; only the variance is floored at 0.
pub fn kline_estimate(
    data: &Dataset<LinearRecord>,
    q: &DMatrix<f64>,
    loo: &LooSet,
) -> Result<EstimateReport> {
    if !loo.is_complete() {
        return Err(Error::JackknifeUndefined {
            failed: loo.failures.clone(),
        });
    }
    if loo.len() != data.n() {
        return Err(Error::DimensionMismatch {
            what: "leave-one-out set",
            expected: data.n(),
            got: loo.len(),
        });
    }
    let theta = &loo.full.theta;
    let d = theta.len();
    if q.shape() != (d, d) {
        return Err(Error::DimensionMismatch {
            what: "quadratic form",
            expected: d,
            got: q.nrows(),
        });
    }
    let s = second_moment(data)?;
    let s_inv = linalg::spd_inverse(&s).ok_or_else(|| Error::RankDeficient {
        what: "covariate second-moment matrix",
        condition_number: linalg::condition_number(&s),
    })?;
    let sqs = &s_inv * q * &s_inv;
    let g = (q + q.transpose()) * theta;
    let gs = s_inv.tr_mul(&g);

    let n = data.n() as f64;
    let (mut correction, mut var) = (0.0, 0.0);
    for (r, l) in data.records().iter().zip(&loo.estimates) {
        let sigma_sq = r.y * (r.y - r.x.dot(&l.theta));
        correction += (&sqs * &r.x).dot(&r.x) * sigma_sq;
        var += gs.dot(&r.x).powi(2) * sigma_sq;
    }
    let point = theta.dot(&(q * theta)) - correction / (n * n);
    let variance = (var / n).max(0.0) / n;
    EstimateReport::new(
        Method::Kline,
        point,
        variance,
        correction / (n * n),
        loo.diagnostics(),
    )
}

#[derive(Clone, Debug, PartialEq)]
pub struct FirthFit {
    pub theta: DVector<f64>,
    /// Inverse Fisher information at `theta`.
    pub covariance: DMatrix<f64>,
    pub iterations: usize,
}

/// Firth's bias-reduced logistic regression (equivalently, Jeffreys-prior penalized
/// likelihood): solves `Σ xᵢ (yᵢ - pᵢ + hᵢᵢ(½ - pᵢ)) = 0` by modified scoring with
/// step halving. Convergence is `‖U*‖ / n ≤ residual_tolerance`.
pub fn firth_fit(
    model: &LogisticModel,
    data: &Dataset<LinearRecord>,
    config: &SolverConfig,
) -> Result<FirthFit> {
    config.validate()?;
    model.validate_dataset(data)?;
    let d = model.dim();
    let n = data.n() as f64;

    let eval = |theta: &DVector<f64>| -> Result<(DVector<f64>, DMatrix<f64>)> {
        let mut info = DMatrix::zeros(d, d);
        for r in data.records() {
            let p = logistic(r.x.dot(theta));
            add_outer_sparse(&mut info, &r.x, p * (1.0 - p));
        }
        let inv = linalg::spd_inverse(&info).ok_or_else(|| Error::RankDeficient {
            what: "Fisher information",
            condition_number: linalg::condition_number(&info),
        })?;
        let mut score = DVector::zeros(d);
        for r in data.records() {
            let p = logistic(r.x.dot(theta));
            let lev = p * (1.0 - p) * (&inv * &r.x).dot(&r.x);
            score.axpy(r.y - p + lev * (0.5 - p), &r.x, 1.0);
        }
        Ok((score, inv))
    };

    let mut theta = DVector::zeros(d);
    let (mut score, mut inv) = eval(&theta)?;
    let mut norm = score.norm();
    for iteration in 0..=config.max_iterations {
        if norm / n <= config.residual_tolerance {
            return Ok(FirthFit {
                theta,
                covariance: inv,
                iterations: iteration,
            });
        }
        if iteration == config.max_iterations {
            break;
        }
        let step = &inv * &score;
        let mut t = 1.0;
        loop {
            let candidate = &theta + &step * t;
            if let Ok((s, i)) = eval(&candidate) {
                if s.norm() < norm {
                    theta = candidate;
                    norm = s.norm();
                    score = s;
                    inv = i;
                    break;
                }
            }
            t *= 0.5;
            if t < config.min_step {
                return Err(Error::NotConverged {
                    iterations: iteration,
                    residual_norm: norm / n,
                });
            }
        }
    }
    Err(Error::NotConverged {
        iterations: config.max_iterations,
        residual_norm: norm / n,
    })
}

/// Firth/Jeffreys estimate of the model's functional (the intercept by default),
/// with the delta-method variance from the inverse Fisher information.
pub fn jeffreys_logistic(
    model: &LogisticModel,
    data: &Dataset<LinearRecord>,
    config: &SolverConfig,
) -> Result<EstimateReport> {
    let fit = firth_fit(model, data, config)?;
    let f = model.functional();
    let g = f.gradient(&fit.theta);
    let variance = (&fit.covariance * &g).dot(&g).max(0.0);
    EstimateReport::new(
        Method::Jeffreys,
        f.value(&fit.theta),
        variance,
        0.0,
        Diagnostics::default(),
    )
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum JiveVariant {
    Jive1,
    Jive2,
}

impl JiveVariant {
    pub fn method(self) -> Method {
        match self {
            JiveVariant::Jive1 => Method::Jive1,
            JiveVariant::Jive2 => Method::Jive2,
        }
    }
}

/// Leverages at or above `1 - LEVERAGE_GUARD` leave JIVE1 undefined.
pub const LEVERAGE_GUARD: f64 = 1e-10;

fn iv_dims(data: &Dataset<IvRecord>) -> Result<usize> {
    let k = data.records()[0].w.len();
    TslsModel::new(k)?.validate_dataset(data)?;
    Ok(k)
}

fn gram_pinv(data: &Dataset<IvRecord>, k: usize) -> (DMatrix<f64>, DVector<f64>) {
    let mut gram = DMatrix::zeros(k, k);
    let mut cross = DVector::zeros(k);
    for r in data.records() {
        add_outer_sparse(&mut gram, &r.w, 1.0);
        cross.axpy(r.x, &r.w, 1.0);
    }
    let (pinv, _) = linalg::psd_pinv(&gram, crate::models::GRAM_RCOND_FLOOR);
    (pinv, cross)
}

/// Slope of the IV regression of `y` on `(1, x)` instrumented by `(1, x̂)`.
fn iv_slope(data: &Dataset<IvRecord>, xhat: &[f64]) -> Result<f64> {
    let n = data.n() as f64;
    let (mut sz, mut sx, mut szx, mut sy, mut szy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (r, &z) in data.records().iter().zip(xhat) {
        sz += z;
        sx += r.x;
        szx += z * r.x;
        sy += r.y;
        szy += z * r.y;
    }
    let a = Matrix2::new(n, sx, sz, szx);
    a.lu()
        .solve(&Vector2::new(sy, szy))
        .map(|v| v[1])
        .filter(|b| b.is_finite())
        .ok_or(Error::RankDeficient {
            what: "instrumented second stage",
            condition_number: f64::INFINITY,
        })
}

/// Leave-one-out first-stage fitted values via the leverage identity.
pub fn jive_fitted(data: &Dataset<IvRecord>, variant: JiveVariant) -> Result<Vec<f64>> {
    let k = iv_dims(data)?;
    let (pinv, cross) = gram_pinv(data, k);
    let pi = &pinv * cross;
    let n = data.n() as f64;
    data.records()
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let lev = (&pinv * &r.w).dot(&r.w);
            let num = pi.dot(&r.w) - lev * r.x;
            match variant {
                JiveVariant::Jive1 if lev >= 1.0 - LEVERAGE_GUARD => {
                    Err(Error::DegenerateLeverage {
                        record: i,
                        leverage: lev,
                    })
                }
                JiveVariant::Jive1 => Ok(num / (1.0 - lev)),
                JiveVariant::Jive2 => Ok(num / (1.0 - 1.0 / n)),
            }
        })
        .collect()
}

/// Leave-one-out first-stage fitted values by refitting the first stage `n` times.
/// Slow; kept as a cross-check of [`jive_fitted`].
pub fn jive_fitted_brute_force(data: &Dataset<IvRecord>, variant: JiveVariant) -> Result<Vec<f64>> {
    let k = iv_dims(data)?;
    let (pinv, cross) = gram_pinv(data, k);
    let n = data.n() as f64;
    data.records()
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let cross_i = &cross - &r.w * r.x;
            match variant {
                JiveVariant::Jive1 => {
                    let mut gram = DMatrix::zeros(k, k);
                    for (j, o) in data.records().iter().enumerate() {
                        if j != i {
                            add_outer_sparse(&mut gram, &o.w, 1.0);
                        }
                    }
                    let inv = linalg::spd_inverse(&gram).ok_or(Error::DegenerateLeverage {
                        record: i,
                        leverage: 1.0,
                    })?;
                    Ok((inv * cross_i).dot(&r.w))
                }
                JiveVariant::Jive2 => Ok((&pinv * cross_i).dot(&r.w) / (1.0 - 1.0 / n)),
            }
        })
        .collect()
}

/// JIVE point estimate of the structural slope.
pub fn jive_estimate(data: &Dataset<IvRecord>, variant: JiveVariant) -> Result<f64> {
    iv_slope(data, &jive_fitted(data, variant)?)
}

/// JIVE point with a bootstrap variance and a symmetric normal interval.
pub fn jive_report(
    data: &Dataset<IvRecord>,
    variant: JiveVariant,
    bootstrap: &BootstrapConfig,
) -> Result<EstimateReport> {
    let point = jive_estimate(data, variant)?;
    let variance = bootstrap_variance(|d| jive_estimate(d, variant), data, bootstrap)?;
    EstimateReport::new(
        variant.method(),
        point,
        variance,
        0.0,
        Diagnostics::default(),
    )
}

/// Two-stage least squares slope with a pseudo-inverse first stage.
pub fn tsls_estimate(data: &Dataset<IvRecord>) -> Result<f64> {
    let k = iv_dims(data)?;
    Ok(TslsModel::new(k)?.projection_fit(data)?[1])
}

/// TSLS point from a converged Z-solve with a bootstrap variance.
pub fn tsls_report(
    model: &TslsModel,
    data: &Dataset<IvRecord>,
    full: &SolveResult,
    bootstrap: &BootstrapConfig,
) -> Result<EstimateReport> {
    let point = crate::jackknife::plugin_estimate(model, full)?;
    let variance = bootstrap_variance(tsls_estimate, data, bootstrap)?;
    EstimateReport::new(Method::Tsls, point, variance, 0.0, Diagnostics::default())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BootstrapConfig {
    pub replicates: usize,
    pub seed: u64,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        Self {
            replicates: 500,
            seed: 0,
        }
    }
}

impl BootstrapConfig {
    pub fn new(replicates: usize, seed: u64) -> Result<Self> {
        let c = Self { replicates, seed };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if self.replicates < 2 {
            return Err(Error::InvalidArgument(
                "bootstrap needs at least 2 replicates".into(),
            ));
        }
        Ok(())
    }
}

/// Replicate estimates from record-level resampling with replacement.
///
/// Replicate `b` draws from a stream keyed by `(seed, b)`; entries are `None`
/// where the estimator failed.
pub fn bootstrap_replicates<R, F>(
    estimator: F,
    data: &Dataset<R>,
    config: &BootstrapConfig,
) -> Result<Vec<Option<f64>>>
where
    R: Clone + Send + Sync,
    F: Fn(&Dataset<R>) -> Result<f64> + Sync,
{
    config.validate()?;
    let n = data.n();
    let records = data.records();
    Ok((0..config.replicates)
        .into_par_iter()
        .map(|b| {
            let mut rng = stream_rng(config.seed, &[b as u64]);
            let sample: Vec<R> = (0..n)
                .map(|_| records[rng.random_range(0..n)].clone())
                .collect();
            Dataset::new(sample)
                .and_then(|d| estimator(&d))
                .ok()
                .filter(|v| v.is_finite())
        })
        .collect())
}

/// Bootstrap variance (denominator `m - 1` over the `m` successful replicates).
///
/// Fails with [`Error::UnreliableVariance`] when more than 10% of replicates fail.
pub fn bootstrap_variance<R, F>(
    estimator: F,
    data: &Dataset<R>,
    config: &BootstrapConfig,
) -> Result<f64>
where
    R: Clone + Send + Sync,
    F: Fn(&Dataset<R>) -> Result<f64> + Sync,
{
    let reps = bootstrap_replicates(estimator, data, config)?;
    let ok: Vec<f64> = reps.iter().flatten().copied().collect();
    let failures = reps.len() - ok.len();
    if failures * 10 > reps.len() || ok.len() < 2 {
        return Err(Error::UnreliableVariance {
            failures,
            replicates: reps.len(),
        });
    }
    let m = ok.len() as f64;
    let mean = ok.iter().sum::<f64>() / m;
    Ok(ok.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1.0))
}
