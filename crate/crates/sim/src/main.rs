use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use zjack_core::Method;
use zjack_sim::{
    dump_histogram, run_experiment, sweep_configs, write_histogram_csv, write_report_csv, DimRule,
    ExperimentConfig, ExperimentReport, Family, Preset, SimError, SimResult,
};

#[derive(Parser)]
#[command(
    name = "zjack",
    version,
    about = "Monte Carlo experiments for jackknife-corrected Z-estimators"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write its summary table.
    Simulate {
        #[command(flatten)]
        setup: Setup,
        /// Comma-separated estimators.
        #[arg(long, value_delimiter = ',', default_value = "plugin,jackknife")]
        estimators: Vec<Method>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write per-trial rescaled errors of one estimator.
    Hist {
        #[command(flatten)]
        setup: Setup,
        #[arg(long)]
        estimator: Method,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a scenario grid and write all rows to one table.
    Sweep {
        /// fixed-n or vary-n.
        #[arg(long)]
        preset: Preset,
        #[arg(long)]
        family: Family,
        #[arg(long, default_value_t = 1000)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_delimiter = ',', default_value = "plugin,jackknife")]
        estimators: Vec<Method>,
        #[arg(long, default_value_t = 500)]
        bootstrap_replicates: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct Setup {
    /// quad, quad-misspec, logistic or iv.
    #[arg(long)]
    family: Family,
    #[arg(long)]
    n: usize,
    /// Fixed parameter dimension (for iv, k + 2).
    #[arg(
        long,
        conflicts_with = "dim_exponent",
        required_unless_present = "dim_exponent"
    )]
    dim: Option<usize>,
    /// Dimension exponent r with d = floor(n^r).
    #[arg(long)]
    dim_exponent: Option<f64>,
    #[arg(long, default_value_t = 1000)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 500)]
    bootstrap_replicates: usize,
}

impl Setup {
    fn config(&self, estimators: Vec<Method>) -> ExperimentConfig {
        let rule = match (self.dim, self.dim_exponent) {
            (Some(d), _) => DimRule::Fixed(d),
            (None, Some(r)) => DimRule::Exponent(r),
            (None, None) => unreachable!("clap requires one of --dim, --dim-exponent"),
        };
        let mut c = ExperimentConfig::new(self.family, self.n, rule, self.trials, self.seed)
            .with_estimators(estimators);
        c.bootstrap.replicates = self.bootstrap_replicates;
        c
    }
}

fn open(path: &Path) -> SimResult<Box<dyn Write>> {
    if path == Path::new("-") {
        Ok(Box::new(io::stdout().lock()))
    } else {
        Ok(Box::new(BufWriter::new(File::create(path)?)))
    }
}

fn warn_unreliable(report: &ExperimentReport) -> bool {
    let bad = report.unreliable();
    for m in &bad {
        eprintln!(
            "warning: {} (n = {}, d = {}): more than 20% of trials excluded for {m}",
            report.config.family, report.config.n, report.d
        );
    }
    !bad.is_empty()
}

fn init_workers() -> SimResult<()> {
    let Ok(v) = std::env::var("ZJACK_WORKERS") else {
        return Ok(());
    };
    let workers: usize = v.parse().ok().filter(|&w| w > 0).ok_or_else(|| {
        SimError::Config(format!(
            "ZJACK_WORKERS must be a positive integer, got '{v}'"
        ))
    })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build_global()
        .map_err(|e| SimError::Config(e.to_string()))
}

/// Returns whether any estimator was flagged unreliable.
fn run(cli: Cli) -> SimResult<bool> {
    init_workers()?;
    match cli.command {
        Command::Simulate {
            setup,
            estimators,
            out,
        } => {
            let config = setup.config(estimators);
            let report = run_experiment(&config)?;
            write_report_csv(&report.rows, open(&out)?)?;
            Ok(warn_unreliable(&report))
        }
        Command::Hist {
            setup,
            estimator,
            out,
        } => {
            let config = setup.config(vec![estimator]);
            let (rows, report) = dump_histogram(&config, estimator)?;
            write_histogram_csv(&rows, open(&out)?)?;
            Ok(warn_unreliable(&report))
        }
        Command::Sweep {
            preset,
            family,
            trials,
            seed,
            estimators,
            bootstrap_replicates,
            out,
        } => {
            let mut base = ExperimentConfig::new(family, 2, DimRule::Fixed(1), trials, seed)
                .with_estimators(estimators);
            base.bootstrap.replicates = bootstrap_replicates;
            let (configs, skipped) = sweep_configs(preset, &base);
            for (c, e) in &skipped {
                eprintln!("skipping n = {}, d = {}: {e}", c.n, c.dimension());
            }
            if configs.is_empty() {
                return Err(SimError::Config("no valid grid points".into()));
            }
            let mut rows = Vec::new();
            let mut unreliable = false;
            for c in &configs {
                let report = run_experiment(c)?;
                unreliable |= warn_unreliable(&report);
                rows.extend(report.rows);
            }
            write_report_csv(&rows, open(&out)?)?;
            Ok(unreliable)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(false) => ExitCode::SUCCESS,
        Ok(true) => ExitCode::from(3),
        Err(e @ SimError::Config(_)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
