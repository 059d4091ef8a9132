//! Monte Carlo harness: data generators, the experiment runner, CSV output and
//! scenario presets.

pub mod error;
pub mod experiment;
pub mod generators;
pub mod output;
pub mod sweep;
pub mod theory;

pub use error::{SimError, SimResult};
pub use experiment::{
    run_experiment, run_trial, summarize, DimRule, ExperimentConfig, ExperimentReport, Family,
    ReportRow, Scale, TrialEstimate, TrialRecord, EXCLUSION_THRESHOLD,
};
pub use output::{
    dump_histogram, histogram, write_histogram_csv, write_report_csv, HistogramRow,
    HISTOGRAM_HEADER, REPORT_HEADER,
};
pub use sweep::{grid, sweep_configs, Preset};
