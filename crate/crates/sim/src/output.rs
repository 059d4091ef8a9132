//! CSV writers and per-trial histogram dumps.

use std::io::Write;

use zjack_core::Method;

use crate::error::SimResult;
use crate::experiment::{run_experiment, ExperimentConfig, ExperimentReport, ReportRow};
use crate::theory::asymptotic_variance;

pub const REPORT_HEADER: [&str; 14] = [
    "family",
    "n",
    "d",
    "estimator",
    "scale",
    "bias",
    "bias_sd",
    "mse",
    "mse_sd",
    "coverage",
    "coverage_sd",
    "ci_length",
    "ci_length_sd",
    "excluded_trials",
];

pub const HISTOGRAM_HEADER: [&str; 5] = [
    "trial",
    "rescaled_error",
    "standardized_error",
    "point",
    "sigma_hat",
];

/// Write report rows under a single header. Floats use the shortest
/// representation that parses back to the same value.
pub fn write_report_csv<'a, W: Write>(
    rows: impl IntoIterator<Item = &'a ReportRow>,
    out: W,
) -> SimResult<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(REPORT_HEADER)?;
    for r in rows {
        w.write_record([
            r.family.name().to_string(),
            r.n.to_string(),
            r.d.to_string(),
            r.estimator.name().to_string(),
            r.scale.name().to_string(),
            r.bias.to_string(),
            r.bias_sd.to_string(),
            r.mse.to_string(),
            r.mse_sd.to_string(),
            r.coverage.to_string(),
            r.coverage_sd.to_string(),
            r.ci_length.to_string(),
            r.ci_length_sd.to_string(),
            r.excluded_trials.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HistogramRow {
    pub trial: usize,
    /// `√n (τ̂ - τ*)`.
    pub rescaled_error: f64,
    /// `√n (τ̂ - τ*) / ν`.
    pub standardized_error: f64,
    pub point: f64,
    pub sigma_hat: f64,
}

/// One row per included trial of `method`.
pub fn histogram(report: &ExperimentReport, method: Method) -> Vec<HistogramRow> {
    let rn = (report.config.n as f64).sqrt();
    let nu = asymptotic_variance(report.config.family, report.d).sqrt();
    report
        .estimates(method)
        .into_iter()
        .map(|(trial, e)| {
            let rescaled = rn * (e.point - report.tau_star);
            HistogramRow {
                trial,
                rescaled_error: rescaled,
                standardized_error: rescaled / nu,
                point: e.point,
                sigma_hat: e.sigma_hat,
            }
        })
        .collect()
}

/// Run `config` with `estimator` as its only estimator and return the histogram
/// rows together with the report.
pub fn dump_histogram(
    config: &ExperimentConfig,
    estimator: Method,
) -> SimResult<(Vec<HistogramRow>, ExperimentReport)> {
    let config = config.clone().with_estimators(vec![estimator]);
    let report = run_experiment(&config)?;
    Ok((histogram(&report, estimator), report))
}

pub fn write_histogram_csv<W: Write>(rows: &[HistogramRow], out: W) -> SimResult<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(HISTOGRAM_HEADER)?;
    for r in rows {
        w.write_record([
            r.trial.to_string(),
            r.rescaled_error.to_string(),
            r.standardized_error.to_string(),
            r.point.to_string(),
            r.sigma_hat.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
