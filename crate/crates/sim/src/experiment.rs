//! Experiment configuration, the per-trial runner and metric aggregation.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use zjack_core::baselines::{
    jeffreys_logistic, jive_report, kline_estimate, tsls_report, BootstrapConfig, JiveVariant,
};
use zjack_core::models::{IvRecord, LinearModel, LinearRecord, LogisticModel, TslsModel};
use zjack_core::rng::{derive_seed, stream_rng};
use zjack_core::{
    compute_loo_set, jackknife_report, plugin_report, solve_z, Dataset, EstimateReport, Method,
    SolverConfig, Z_CRITICAL,
};

use crate::error::{SimError, SimResult};
use crate::generators::{
    generate_iv, generate_logistic, generate_quad, generate_quad_misspec, Truth,
};

/// Share of excluded trials above which an estimator's row is unreliable.
pub const EXCLUSION_THRESHOLD: f64 = 0.2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Family {
    Quad,
    QuadMisspec,
    Logistic,
    Iv,
}

impl Family {
    pub const ALL: [Family; 4] = [
        Family::Quad,
        Family::QuadMisspec,
        Family::Logistic,
        Family::Iv,
    ];

    /// Name used in CSV output.
    pub fn name(self) -> &'static str {
        match self {
            Family::Quad => "quad",
            Family::QuadMisspec => "quad_misspec",
            Family::Logistic => "logistic",
            Family::Iv => "iv",
        }
    }

    pub fn supports(self, method: Method) -> bool {
        match method {
            Method::Plugin | Method::Jackknife => true,
            Method::Kline => matches!(self, Family::Quad | Family::QuadMisspec),
            Method::Jeffreys => self == Family::Logistic,
            Method::Tsls | Method::Jive1 | Method::Jive2 => self == Family::Iv,
        }
    }

    /// Smallest admissible parameter dimension. For `iv`, `d = k + 2` and `k ≥ 2`.
    pub fn min_dim(self) -> usize {
        match self {
            Family::Iv => 4,
            _ => 1,
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Family {
    type Err = SimError;

    fn from_str(s: &str) -> SimResult<Self> {
        match s {
            "quad" => Ok(Family::Quad),
            "quad-misspec" | "quad_misspec" => Ok(Family::QuadMisspec),
            "logistic" => Ok(Family::Logistic),
            "iv" => Ok(Family::Iv),
            other => Err(SimError::Config(format!("unknown family '{other}'"))),
        }
    }
}

/// How the parameter dimension follows from `n`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum DimRule {
    Fixed(usize),
    /// `d = ⌊n^r⌋`.
    Exponent(f64),
}

impl DimRule {
    pub fn dimension(&self, n: usize) -> usize {
        match *self {
            DimRule::Fixed(d) => d,
            // the offset keeps exact powers such as 400^0.5 from flooring to 19
            DimRule::Exponent(r) => ((n as f64).powf(r) + 1e-9).floor() as usize,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub family: Family,
    pub n: usize,
    pub dim_rule: DimRule,
    pub trials: usize,
    pub seed: u64,
    pub estimators: Vec<Method>,
    /// When `max_norm` is unset, each trial uses `10‖θ*‖`.
    pub solver: SolverConfig,
    /// The per-trial bootstrap stream is keyed by `(seed, trial, 1, bootstrap.seed)`.
    pub bootstrap: BootstrapConfig,
}

impl ExperimentConfig {
    /// Plug-in and jackknife with default solver and bootstrap settings.
    pub fn new(family: Family, n: usize, dim_rule: DimRule, trials: usize, seed: u64) -> Self {
        Self {
            family,
            n,
            dim_rule,
            trials,
            seed,
            estimators: vec![Method::Plugin, Method::Jackknife],
            solver: SolverConfig::default(),
            bootstrap: BootstrapConfig::default(),
        }
    }

    pub fn with_estimators(mut self, estimators: Vec<Method>) -> Self {
        self.estimators = estimators;
        self
    }

    pub fn dimension(&self) -> usize {
        self.dim_rule.dimension(self.n)
    }

    pub fn validate(&self) -> SimResult<()> {
        let bad = |msg: String| Err(SimError::Config(msg));
        if self.trials == 0 {
            return bad("trials must be at least 1".into());
        }
        if let DimRule::Exponent(r) = self.dim_rule {
            if !(r.is_finite() && r > 0.0) {
                return bad(format!("dimension exponent must be positive, got {r}"));
            }
        }
        let d = self.dimension();
        if d < self.family.min_dim() {
            return bad(format!(
                "{} needs d >= {}, got d = {d}",
                self.family,
                self.family.min_dim()
            ));
        }
        if d >= self.n {
            return bad(format!("need d < n, got d = {d}, n = {}", self.n));
        }
        if self.estimators.is_empty() {
            return bad("no estimators requested".into());
        }
        for (i, m) in self.estimators.iter().enumerate() {
            if !self.family.supports(*m) {
                return bad(format!(
                    "estimator {m} is not available for {}",
                    self.family
                ));
            }
            if self.estimators[..i].contains(m) {
                return bad(format!("estimator {m} listed twice"));
            }
        }
        self.solver
            .validate()
            .map_err(|e| SimError::Config(e.to_string()))?;
        self.bootstrap
            .validate()
            .map_err(|e| SimError::Config(e.to_string()))?;
        Ok(())
    }
}

/// Point estimate and standard error of one estimator in one trial.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrialEstimate {
    pub point: f64,
    pub sigma_hat: f64,
}

impl From<&EstimateReport> for TrialEstimate {
    fn from(r: &EstimateReport) -> Self {
        Self {
            point: r.point,
            sigma_hat: r.std_error(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrialRecord {
    pub trial: usize,
    /// Hash of the generated dataset; equal across estimators by construction.
    pub fingerprint: u64,
    /// One entry per configured estimator, in configuration order.
    pub outcomes: Vec<zjack_core::Result<TrialEstimate>>,
}

fn fnv(hash: &mut u64, v: f64) {
    for b in v.to_bits().to_le_bytes() {
        *hash ^= b as u64;
        *hash = hash.wrapping_mul(0x0000_0100_0000_01B3);
    }
}

const FNV_OFFSET: u64 = 0xCBF2_9CE4_8422_2325;

fn fingerprint_linear(data: &Dataset<LinearRecord>) -> u64 {
    let mut h = FNV_OFFSET;
    for r in data.records() {
        r.x.iter().for_each(|&v| fnv(&mut h, v));
        fnv(&mut h, r.y);
    }
    h
}

fn fingerprint_iv(data: &Dataset<IvRecord>) -> u64 {
    let mut h = FNV_OFFSET;
    for r in data.records() {
        r.w.iter().for_each(|&v| fnv(&mut h, v));
        fnv(&mut h, r.x);
        fnv(&mut h, r.y);
    }
    h
}

fn trial_solver(config: &ExperimentConfig, truth: &Truth) -> SolverConfig {
    let mut s = config.solver.clone();
    if s.max_norm.is_none() {
        s.max_norm = Some(10.0 * truth.theta_star.norm());
    }
    s
}

/// Evaluate every configured estimator on trial `t`'s dataset.
pub fn run_trial(config: &ExperimentConfig, trial: usize) -> SimResult<TrialRecord> {
    let d = config.dimension();
    let mut rng = stream_rng(config.seed, &[trial as u64, 0]);
    let (fingerprint, outcomes) = match config.family {
        Family::Quad | Family::QuadMisspec => {
            let (data, truth) = if config.family == Family::Quad {
                generate_quad(config.n, d, &mut rng)?
            } else {
                generate_quad_misspec(config.n, d, &mut rng)?
            };
            (
                fingerprint_linear(&data),
                quad_trial(config, &data, &truth)?,
            )
        }
        Family::Logistic => {
            let (data, truth) = generate_logistic(config.n, d, &mut rng)?;
            (
                fingerprint_linear(&data),
                logistic_trial(config, &data, &truth)?,
            )
        }
        Family::Iv => {
            let (data, truth) = generate_iv(config.n, d - 2, &mut rng)?;
            let bootstrap = BootstrapConfig {
                replicates: config.bootstrap.replicates,
                seed: derive_seed(config.seed, &[trial as u64, 1, config.bootstrap.seed]),
            };
            (
                fingerprint_iv(&data),
                iv_trial(config, &data, &truth, &bootstrap)?,
            )
        }
    };
    Ok(TrialRecord {
        trial,
        fingerprint,
        outcomes,
    })
}

type Outcomes = Vec<zjack_core::Result<TrialEstimate>>;

fn needs_loo(config: &ExperimentConfig) -> bool {
    config
        .estimators
        .iter()
        .any(|m| matches!(m, Method::Jackknife | Method::Kline))
}

fn quad_trial(
    config: &ExperimentConfig,
    data: &Dataset<LinearRecord>,
    truth: &Truth,
) -> SimResult<Outcomes> {
    let d = truth.theta_star.len();
    let q = DMatrix::identity(d, d);
    let model = LinearModel::ols_quadratic(q.clone())?;
    let solver = trial_solver(config, truth);
    let full = solve_z(&model, data, &DVector::zeros(d), &solver);
    let loo = match (&full, needs_loo(config)) {
        (Ok(f), true) => Some(compute_loo_set(&model, data, f, &solver)),
        _ => None,
    };
    Ok(config
        .estimators
        .iter()
        .map(|m| {
            let full = full.as_ref().map_err(Clone::clone)?;
            let report = match m {
                Method::Plugin => plugin_report(&model, data, full)?,
                Method::Jackknife => jackknife_report(&model, full, loo_of(&loo)?)?,
                Method::Kline => kline_estimate(data, &q, loo_of(&loo)?)?,
                _ => unreachable!("validated"),
            };
            Ok(TrialEstimate::from(&report))
        })
        .collect())
}

fn loo_of<T>(loo: &Option<zjack_core::Result<T>>) -> zjack_core::Result<&T> {
    match loo {
        Some(Ok(l)) => Ok(l),
        Some(Err(e)) => Err(e.clone()),
        None => unreachable!("leave-one-out set requested but not computed"),
    }
}

fn logistic_trial(
    config: &ExperimentConfig,
    data: &Dataset<LinearRecord>,
    truth: &Truth,
) -> SimResult<Outcomes> {
    let d = truth.theta_star.len();
    let model = LogisticModel::new(d, true)?;
    let solver = trial_solver(config, truth);
    let needs_mle = config.estimators.iter().any(|m| *m != Method::Jeffreys);
    let full = needs_mle.then(|| solve_z(&model, data, &DVector::zeros(d), &solver));
    let loo = match (&full, needs_loo(config)) {
        (Some(Ok(f)), true) => Some(compute_loo_set(&model, data, f, &solver)),
        _ => None,
    };
    Ok(config
        .estimators
        .iter()
        .map(|m| {
            let report = match m {
                Method::Jeffreys => jeffreys_logistic(&model, data, &solver)?,
                _ => {
                    let full = loo_of(&full)?;
                    match m {
                        Method::Plugin => plugin_report(&model, data, full)?,
                        Method::Jackknife => jackknife_report(&model, full, loo_of(&loo)?)?,
                        _ => unreachable!("validated"),
                    }
                }
            };
            Ok(TrialEstimate::from(&report))
        })
        .collect())
}

fn iv_trial(
    config: &ExperimentConfig,
    data: &Dataset<IvRecord>,
    truth: &Truth,
    bootstrap: &BootstrapConfig,
) -> SimResult<Outcomes> {
    let k = truth.theta_star.len() - 2;
    let model = TslsModel::new(k)?;
    let solver = trial_solver(config, truth);
    let needs_z = config
        .estimators
        .iter()
        .any(|m| matches!(m, Method::Plugin | Method::Jackknife | Method::Tsls));
    let full = needs_z.then(|| {
        model
            .projection_fit(data)
            .and_then(|init| solve_z(&model, data, &init, &solver))
    });
    let loo = match (&full, needs_loo(config)) {
        (Some(Ok(f)), true) => Some(compute_loo_set(&model, data, f, &solver)),
        _ => None,
    };
    Ok(config
        .estimators
        .iter()
        .map(|m| {
            let report = match m {
                Method::Jive1 => jive_report(data, JiveVariant::Jive1, bootstrap)?,
                Method::Jive2 => jive_report(data, JiveVariant::Jive2, bootstrap)?,
                Method::Plugin => plugin_report(&model, data, loo_of(&full)?)?,
                Method::Tsls => tsls_report(&model, data, loo_of(&full)?, bootstrap)?,
                Method::Jackknife => jackknife_report(&model, loo_of(&full)?, loo_of(&loo)?)?,
                _ => unreachable!("validated"),
            };
            Ok(TrialEstimate::from(&report))
        })
        .collect())
}

/// Which scale a report row is expressed in.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scale {
    Raw,
    /// Bias, interval length and their SEs times `√n`; MSE and its SE times `n`.
    SqrtN,
}

impl Scale {
    pub fn name(self) -> &'static str {
        match self {
            Scale::Raw => "raw",
            Scale::SqrtN => "sqrt_n",
        }
    }
}

/// Aggregated metrics of one estimator. The `_sd` fields are Monte Carlo
/// standard errors of the corresponding means.
#[derive(Clone, Debug, PartialEq)]
pub struct ReportRow {
    pub family: Family,
    pub n: usize,
    pub d: usize,
    pub estimator: Method,
    pub scale: Scale,
    pub bias: f64,
    pub bias_sd: f64,
    pub mse: f64,
    pub mse_sd: f64,
    pub coverage: f64,
    pub coverage_sd: f64,
    pub ci_length: f64,
    pub ci_length_sd: f64,
    pub excluded_trials: usize,
}

/// Mean and standard error of the mean (0 for a single value).
fn mean_and_se(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let m = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / m;
    if m < 2.0 {
        return (mean, 0.0);
    }
    let ss: f64 = values.map(|v| (v - mean) * (v - mean)).sum();
    (mean, (ss / (m - 1.0) / m).sqrt())
}

/// Metrics over the included trials of one estimator, in raw and `√n` scale.
///
/// MSE is assembled as `bias² + mean((e - ē)²)`, which keeps `mse ≥ bias²` exact
/// in floating point.
pub fn summarize(
    family: Family,
    n: usize,
    d: usize,
    estimator: Method,
    tau_star: f64,
    estimates: &[TrialEstimate],
    excluded_trials: usize,
) -> [ReportRow; 2] {
    let m = estimates.len() as f64;
    let errors = estimates.iter().map(|e| e.point - tau_star);
    let (mean_err, bias_sd) = mean_and_se(errors.clone());
    let spread = errors.clone().map(|e| (e - mean_err).powi(2)).sum::<f64>() / m;
    let mse = mean_err * mean_err + spread;
    let (_, mse_sd) = mean_and_se(errors.clone().map(|e| e * e));
    let hits = estimates.iter().map(|e| {
        f64::from(u8::from(
            (e.point - tau_star).abs() <= Z_CRITICAL * e.sigma_hat,
        ))
    });
    let (coverage, coverage_sd) = mean_and_se(hits);
    let (ci_length, ci_length_sd) =
        mean_and_se(estimates.iter().map(|e| 2.0 * Z_CRITICAL * e.sigma_hat));
    let raw = ReportRow {
        family,
        n,
        d,
        estimator,
        scale: Scale::Raw,
        bias: mean_err.abs(),
        bias_sd,
        mse,
        mse_sd,
        coverage,
        coverage_sd,
        ci_length,
        ci_length_sd,
        excluded_trials,
    };
    let rn = (n as f64).sqrt();
    let scaled = ReportRow {
        scale: Scale::SqrtN,
        bias: raw.bias * rn,
        bias_sd: raw.bias_sd * rn,
        mse: raw.mse * n as f64,
        mse_sd: raw.mse_sd * n as f64,
        ci_length: raw.ci_length * rn,
        ci_length_sd: raw.ci_length_sd * rn,
        ..raw.clone()
    };
    [raw, scaled]
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub d: usize,
    pub tau_star: f64,
    pub trials: Vec<TrialRecord>,
    /// Two rows (raw, `√n`) per estimator, in configuration order.
    pub rows: Vec<ReportRow>,
}

impl ExperimentReport {
    /// Included trials of `method`, in trial order.
    pub fn estimates(&self, method: Method) -> Vec<(usize, TrialEstimate)> {
        let Some(idx) = self.config.estimators.iter().position(|m| *m == method) else {
            return Vec::new();
        };
        self.trials
            .iter()
            .filter_map(|t| t.outcomes[idx].as_ref().ok().map(|e| (t.trial, *e)))
            .collect()
    }

    pub fn row(&self, method: Method, scale: Scale) -> Option<&ReportRow> {
        self.rows
            .iter()
            .find(|r| r.estimator == method && r.scale == scale)
    }

    /// Estimators whose exclusion share exceeds [`EXCLUSION_THRESHOLD`].
    pub fn unreliable(&self) -> Vec<Method> {
        let t = self.config.trials as f64;
        self.rows
            .iter()
            .filter(|r| r.scale == Scale::Raw && r.excluded_trials as f64 > EXCLUSION_THRESHOLD * t)
            .map(|r| r.estimator)
            .collect()
    }
}

/// Run all trials (in parallel, merged in trial order) and aggregate.
pub fn run_experiment(config: &ExperimentConfig) -> SimResult<ExperimentReport> {
    config.validate()?;
    let d = config.dimension();
    let trials = (0..config.trials)
        .into_par_iter()
        .map(|t| run_trial(config, t))
        .collect::<SimResult<Vec<_>>>()?;
    let tau_star = 1.0;
    let mut report = ExperimentReport {
        config: config.clone(),
        d,
        tau_star,
        trials,
        rows: Vec::new(),
    };
    for &m in &config.estimators {
        let est: Vec<_> = report.estimates(m).into_iter().map(|(_, e)| e).collect();
        let excluded = config.trials - est.len();
        report.rows.extend(summarize(
            config.family,
            config.n,
            d,
            m,
            tau_star,
            &est,
            excluded,
        ));
    }
    Ok(report)
}
