//! Z-model abstraction and the damped Newton solver for empirical moment equations.
//!
//! A Z-estimate is a root of `(1/n) Σ h(Z_i, θ) = 0`. Models supply the moment
//! function `h`, its analytic θ-Jacobian and the target functional `τ`; the
//! solver never differentiates numerically. [`finite_difference_jacobian`]
//! exists only to validate the analytic derivatives.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;

/// Ridge used when a Newton system is numerically singular.
pub const RIDGE_ESCALATION: f64 = 1e-10;

/// A twice-differentiable scalar target `τ(θ)`.
pub trait SmoothFunctional: Send + Sync + fmt::Debug {
    fn value(&self, theta: &DVector<f64>) -> f64;
    fn gradient(&self, theta: &DVector<f64>) -> DVector<f64>;
    fn hessian(&self, _theta: &DVector<f64>) -> Option<DMatrix<f64>> {
        None
    }
}

/// Whether a quadratic functional carries the factor one half.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum QuadraticConvention {
    /// `τ(θ) = θᵀQθ`.
    #[default]
    Full,
    /// `τ(θ) = ½ θᵀQθ`.
    Half,
}

impl QuadraticConvention {
    pub fn factor(self) -> f64 {
        match self {
            QuadraticConvention::Full => 1.0,
            QuadraticConvention::Half => 0.5,
        }
    }
}

#[derive(Clone, Debug)]
pub enum Functional {
    /// `τ(θ) = θ_j`.
    Coordinate(usize),
    /// `τ(θ) = ⟨c, θ⟩`.
    Linear(DVector<f64>),
    /// `τ(θ) = c·θᵀQθ` with `Q` symmetric and `c` from the convention.
    Quadratic {
        matrix: DMatrix<f64>,
        convention: QuadraticConvention,
    },
    Custom(Arc<dyn SmoothFunctional>),
}

impl Functional {
    pub fn quadratic(matrix: DMatrix<f64>) -> Self {
        Functional::Quadratic {
            matrix,
            convention: QuadraticConvention::Full,
        }
    }

    /// Squared Euclidean norm `‖θ‖²` in dimension `d`.
    pub fn squared_norm(d: usize) -> Self {
        Self::quadratic(DMatrix::identity(d, d))
    }

    /// Check that the functional is defined on `R^d`.
    pub fn check_dim(&self, d: usize) -> Result<()> {
        match self {
            Functional::Coordinate(j) if *j >= d => Err(Error::DimensionMismatch {
                what: "coordinate functional",
                expected: d,
                got: *j + 1,
            }),
            Functional::Linear(c) if c.len() != d => Err(Error::DimensionMismatch {
                what: "linear functional",
                expected: d,
                got: c.len(),
            }),
            Functional::Quadratic { matrix, .. } => {
                if matrix.nrows() != d || matrix.ncols() != d {
                    return Err(Error::DimensionMismatch {
                        what: "quadratic functional",
                        expected: d,
                        got: matrix.nrows().max(matrix.ncols()),
                    });
                }
                let asym = (matrix - matrix.transpose()).abs().max();
                if asym > 1e-12 * matrix.abs().max().max(1.0) {
                    return Err(Error::InvalidArgument(
                        "quadratic functional matrix must be symmetric".into(),
                    ));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    pub fn value(&self, theta: &DVector<f64>) -> f64 {
        match self {
            Functional::Coordinate(j) => theta[*j],
            Functional::Linear(c) => c.dot(theta),
            Functional::Quadratic { matrix, convention } => {
                convention.factor() * theta.dot(&(matrix * theta))
            }
            Functional::Custom(f) => f.value(theta),
        }
    }

    pub fn gradient(&self, theta: &DVector<f64>) -> DVector<f64> {
        match self {
            Functional::Coordinate(j) => {
                let mut g = DVector::zeros(theta.len());
                g[*j] = 1.0;
                g
            }
            Functional::Linear(c) => c.clone(),
            Functional::Quadratic { matrix, convention } => {
                (matrix * theta) * (2.0 * convention.factor())
            }
            Functional::Custom(f) => f.gradient(theta),
        }
    }

    pub fn hessian(&self, theta: &DVector<f64>) -> Option<DMatrix<f64>> {
        let d = theta.len();
        match self {
            Functional::Coordinate(_) | Functional::Linear(_) => Some(DMatrix::zeros(d, d)),
            Functional::Quadratic { matrix, convention } => {
                Some(matrix * (2.0 * convention.factor()))
            }
            Functional::Custom(f) => f.hessian(theta),
        }
    }
}

/// An estimating-equation model: moment function, its Jacobian and a target functional.
///
/// Implementations accumulate into caller-owned buffers so that sums over large
/// datasets do not allocate per record.
pub trait ZModel: Sync {
    type Record: Sync;

    fn dim(&self) -> usize;

    fn functional(&self) -> &Functional;

    /// Structural check of a single record.
    fn validate_record(&self, _record: &Self::Record) -> std::result::Result<(), String> {
        Ok(())
    }

    /// `out += weight · h(record, θ)`.
    fn add_moment(
        &self,
        record: &Self::Record,
        theta: &DVector<f64>,
        weight: f64,
        out: &mut DVector<f64>,
    );

    /// `out += weight · ∇_θ h(record, θ)`, rows indexing moment components.
    fn add_jacobian(
        &self,
        record: &Self::Record,
        theta: &DVector<f64>,
        weight: f64,
        out: &mut DMatrix<f64>,
    );

    /// `out += weight · Σ_k v_k ∇²_θ h_k(record, θ)`.
    ///
    /// The default differentiates the analytic Jacobian numerically; models
    /// with a closed form override it.
    fn add_contracted_hessian(
        &self,
        record: &Self::Record,
        theta: &DVector<f64>,
        direction: &DVector<f64>,
        weight: f64,
        out: &mut DMatrix<f64>,
    ) {
        let d = self.dim();
        let mut probe = theta.clone();
        for i in 0..d {
            let step = 1e-5 * theta[i].abs().max(1.0);
            probe[i] = theta[i] + step;
            let plus = self.moment_jacobian(record, &probe).tr_mul(direction);
            probe[i] = theta[i] - step;
            let minus = self.moment_jacobian(record, &probe).tr_mul(direction);
            probe[i] = theta[i];
            for j in 0..d {
                out[(i, j)] += weight * (plus[j] - minus[j]) / (2.0 * step);
            }
        }
    }

    fn moment(&self, record: &Self::Record, theta: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.dim());
        self.add_moment(record, theta, 1.0, &mut out);
        out
    }

    fn moment_jacobian(&self, record: &Self::Record, theta: &DVector<f64>) -> DMatrix<f64> {
        let d = self.dim();
        let mut out = DMatrix::zeros(d, d);
        self.add_jacobian(record, theta, 1.0, &mut out);
        out
    }

    fn validate_dataset(&self, data: &Dataset<Self::Record>) -> Result<()> {
        for (i, r) in data.records().iter().enumerate() {
            self.validate_record(r)
                .map_err(|reason| Error::InvalidRecord { record: i, reason })?;
        }
        Ok(())
    }
}

/// An ordered collection of `n ≥ 2` observations.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset<R> {
    records: Vec<R>,
}

impl<R> Dataset<R> {
    pub fn new(records: Vec<R>) -> Result<Self> {
        if records.len() < 2 {
            return Err(Error::InvalidArgument(format!(
                "a dataset needs at least 2 records, got {}",
                records.len()
            )));
        }
        Ok(Self { records })
    }

    pub fn records(&self) -> &[R] {
        &self.records
    }

    pub fn n(&self) -> usize {
        self.records.len()
    }

    pub fn into_records(self) -> Vec<R> {
        self.records
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolverConfig {
    /// Target for the Euclidean norm of the averaged moment.
    pub residual_tolerance: f64,
    pub max_iterations: usize,
    /// Smallest backtracking step before the iteration is declared stalled.
    pub min_step: f64,
    /// Ridge applied to every Newton system; 0 means plain Newton with
    /// escalation to [`RIDGE_ESCALATION`] only on singularity.
    pub jacobian_regularization: f64,
    /// Optional radius of the parameter ball; iterates are projected back onto it.
    pub max_norm: Option<f64>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            residual_tolerance: 1e-10,
            max_iterations: 100,
            min_step: 2f64.powi(-30),
            jacobian_regularization: 0.0,
            max_norm: None,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.residual_tolerance > 0.0) {
            return Err(Error::InvalidArgument(
                "residual_tolerance must be positive".into(),
            ));
        }
        if self.max_iterations == 0 {
            return Err(Error::InvalidArgument("max_iterations must be >= 1".into()));
        }
        if !(self.min_step > 0.0 && self.min_step <= 1.0) {
            return Err(Error::InvalidArgument("min_step must lie in (0, 1]".into()));
        }
        if !(self.jacobian_regularization >= 0.0) {
            return Err(Error::InvalidArgument(
                "jacobian_regularization must be nonnegative".into(),
            ));
        }
        if let Some(r) = self.max_norm {
            if !(r > 0.0) {
                return Err(Error::InvalidArgument("max_norm must be positive".into()));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolveResult {
    pub theta: DVector<f64>,
    /// `‖(1/m) Σ h(Z_i, θ)‖₂` at the returned θ.
    pub residual_norm: f64,
    /// Accepted Newton steps.
    pub iterations: usize,
    pub converged: bool,
    /// Whether any step needed the ridge escalation.
    pub regularized: bool,
}

/// Records taking part in a solve: all of them, or all but one.
struct Subsample<'a, R> {
    records: &'a [R],
    skip: Option<usize>,
}

impl<R> Clone for Subsample<'_, R> {
    fn clone(&self) -> Self {
        *self
    }
}

impl<R> Copy for Subsample<'_, R> {}

impl<'a, R> Subsample<'a, R> {
    fn count(&self) -> usize {
        self.records.len() - usize::from(self.skip.is_some())
    }

    fn iter(&self) -> impl Iterator<Item = (usize, &'a R)> + '_ {
        let skip = self.skip;
        self.records
            .iter()
            .enumerate()
            .filter(move |(i, _)| Some(*i) != skip)
    }
}

fn mean_moment<M: ZModel>(
    model: &M,
    sub: Subsample<'_, M::Record>,
    theta: &DVector<f64>,
) -> Result<DVector<f64>> {
    let mut out = DVector::zeros(model.dim());
    for (_, r) in sub.iter() {
        model.add_moment(r, theta, 1.0, &mut out);
    }
    out /= sub.count() as f64;
    if out.iter().all(|v| v.is_finite()) {
        return Ok(out);
    }
    for (i, r) in sub.iter() {
        if model.moment(r, theta).iter().any(|v| !v.is_finite()) {
            return Err(Error::NumericDomain { record: i });
        }
    }
    Err(Error::NonFinite {
        what: "empirical moment",
    })
}

fn mean_jacobian<M: ZModel>(
    model: &M,
    sub: Subsample<'_, M::Record>,
    theta: &DVector<f64>,
) -> Result<DMatrix<f64>> {
    let d = model.dim();
    let mut out = DMatrix::zeros(d, d);
    for (_, r) in sub.iter() {
        model.add_jacobian(r, theta, 1.0, &mut out);
    }
    out /= sub.count() as f64;
    if out.iter().all(|v| v.is_finite()) {
        return Ok(out);
    }
    for (i, r) in sub.iter() {
        if model
            .moment_jacobian(r, theta)
            .iter()
            .any(|v| !v.is_finite())
        {
            return Err(Error::NumericDomain { record: i });
        }
    }
    Err(Error::NonFinite {
        what: "empirical jacobian",
    })
}

fn check_theta<M: ZModel>(model: &M, theta: &DVector<f64>, what: &'static str) -> Result<()> {
    if theta.len() != model.dim() {
        return Err(Error::DimensionMismatch {
            what,
            expected: model.dim(),
            got: theta.len(),
        });
    }
    if theta.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { what });
    }
    Ok(())
}

/// Averaged moment `(1/n) Σ h(Z_i, θ)`.
pub fn empirical_moment<M: ZModel>(
    model: &M,
    data: &Dataset<M::Record>,
    theta: &DVector<f64>,
) -> Result<DVector<f64>> {
    check_theta(model, theta, "theta")?;
    mean_moment(
        model,
        Subsample {
            records: data.records(),
            skip: None,
        },
        theta,
    )
}

/// Averaged Jacobian `(1/n) Σ ∇_θ h(Z_i, θ)`.
pub fn empirical_jacobian<M: ZModel>(
    model: &M,
    data: &Dataset<M::Record>,
    theta: &DVector<f64>,
) -> Result<DMatrix<f64>> {
    check_theta(model, theta, "theta")?;
    mean_jacobian(
        model,
        Subsample {
            records: data.records(),
            skip: None,
        },
        theta,
    )
}

/// Summed (not averaged) Jacobian over all records, used to seed leave-one-out solves.
pub(crate) fn jacobian_sum<M: ZModel>(
    model: &M,
    data: &Dataset<M::Record>,
    theta: &DVector<f64>,
) -> Result<DMatrix<f64>> {
    Ok(empirical_jacobian(model, data, theta)? * data.n() as f64)
}

/// Central-difference approximation of `∇_θ h(record, θ)`.
///
/// `step` is relative: coordinate `j` moves by `step · max(1, |θ_j|)`, rounded to a
/// power of two so the probes are exactly representable.
pub fn finite_difference_jacobian<M: ZModel>(
    model: &M,
    record: &M::Record,
    theta: &DVector<f64>,
    step: f64,
) -> Result<DMatrix<f64>> {
    check_theta(model, theta, "theta")?;
    if !(step > 0.0) {
        return Err(Error::InvalidArgument("step must be positive".into()));
    }
    let d = model.dim();
    let mut out = DMatrix::zeros(d, d);
    let mut probe = theta.clone();
    for j in 0..d {
        let s = (step * theta[j].abs().max(1.0)).log2().round().exp2();
        let hi = theta[j] + s;
        let lo = theta[j] - s;
        probe[j] = hi;
        let plus = model.moment(record, &probe);
        probe[j] = lo;
        let minus = model.moment(record, &probe);
        probe[j] = theta[j];
        let col = (plus - minus) / (hi - lo);
        if col.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: "finite-difference probe",
            });
        }
        out.set_column(j, &col);
    }
    Ok(out)
}

/// Largest entrywise gap between two Jacobians, relative to the reference scale.
pub fn jacobian_discrepancy(analytic: &DMatrix<f64>, reference: &DMatrix<f64>) -> f64 {
    let scale = reference.abs().max().max(analytic.abs().max()).max(1e-3);
    (analytic - reference).abs().max() / scale
}

fn project(theta: &mut DVector<f64>, max_norm: Option<f64>) {
    if let Some(r) = max_norm {
        let norm = theta.norm();
        if norm > r {
            *theta *= r / norm;
        }
    }
}

fn newton_step(
    jacobian: &DMatrix<f64>,
    residual: &DVector<f64>,
    config: &SolverConfig,
) -> Result<(DVector<f64>, bool)> {
    let rhs = -residual;
    if config.jacobian_regularization > 0.0 {
        if let Some(step) = linalg::ridge_solve(jacobian, &rhs, config.jacobian_regularization) {
            return Ok((step, true));
        }
    } else if let Some(step) = linalg::solve_checked(jacobian, &rhs) {
        return Ok((step, false));
    }
    // The ridged step must still solve the linearized system: a singular and
    // inconsistent system has no Newton direction worth taking.
    let ridge = config.jacobian_regularization.max(RIDGE_ESCALATION);
    match linalg::ridge_solve(jacobian, &rhs, ridge) {
        Some(step) if (jacobian * &step - &rhs).norm() <= 1e-6 * rhs.norm() => Ok((step, true)),
        _ => Err(Error::SingularSystem {
            condition_number: linalg::condition_number(jacobian),
            leave_out: None,
        }),
    }
}

fn newton<M: ZModel>(
    model: &M,
    sub: Subsample<'_, M::Record>,
    init: &DVector<f64>,
    config: &SolverConfig,
    mut initial_jacobian: Option<DMatrix<f64>>,
) -> Result<SolveResult> {
    config.validate()?;
    check_theta(model, init, "initial theta")?;
    let mut theta = init.clone();
    project(&mut theta, config.max_norm);
    let mut residual = mean_moment(model, sub, &theta)?;
    let mut norm = residual.norm();
    let mut regularized = false;

    for iteration in 0..config.max_iterations {
        if norm <= config.residual_tolerance {
            return Ok(SolveResult {
                theta,
                residual_norm: norm,
                iterations: iteration,
                converged: true,
                regularized,
            });
        }
        let jacobian = match initial_jacobian.take() {
            Some(j) => j,
            None => mean_jacobian(model, sub, &theta)?,
        };
        let (step, ridged) = newton_step(&jacobian, &residual, config)?;
        regularized |= ridged;

        let mut t = 1.0;
        let accepted = loop {
            let mut candidate = &theta + &step * t;
            project(&mut candidate, config.max_norm);
            if let Ok(r) = mean_moment(model, sub, &candidate) {
                let n = r.norm();
                if n <= (1.0 - 1e-4 * t) * norm {
                    break Some((candidate, r, n));
                }
            }
            t *= 0.5;
            if t < config.min_step {
                break None;
            }
        };
        match accepted {
            Some((candidate, r, n)) => {
                theta = candidate;
                residual = r;
                norm = n;
            }
            None => {
                return Ok(SolveResult {
                    theta,
                    residual_norm: norm,
                    iterations: iteration,
                    converged: false,
                    regularized,
                });
            }
        }
    }
    Ok(SolveResult {
        converged: norm <= config.residual_tolerance,
        theta,
        residual_norm: norm,
        iterations: config.max_iterations,
        regularized,
    })
}

/// Solve the empirical moment equations by damped Newton iteration from `init`.
///
/// Exhausting `max_iterations` or stalling in the line search yields a result with
/// `converged == false`; a Newton system that stays singular after the ridge
/// escalation is an error.
pub fn solve_z<M: ZModel>(
    model: &M,
    data: &Dataset<M::Record>,
    init: &DVector<f64>,
    config: &SolverConfig,
) -> Result<SolveResult> {
    model.validate_dataset(data)?;
    newton(
        model,
        Subsample {
            records: data.records(),
            skip: None,
        },
        init,
        config,
        None,
    )
}

/// Solve `(1/(n-1)) Σ_{j≠i} h(Z_j, θ) = 0`, warm-started at `warm_start`.
pub fn loo_solve<M: ZModel>(
    model: &M,
    data: &Dataset<M::Record>,
    leave_out: usize,
    warm_start: &DVector<f64>,
    config: &SolverConfig,
) -> Result<SolveResult> {
    if leave_out >= data.n() {
        return Err(Error::InvalidArgument(format!(
            "leave_out {leave_out} out of range for n = {}",
            data.n()
        )));
    }
    newton(
        model,
        Subsample {
            records: data.records(),
            skip: Some(leave_out),
        },
        warm_start,
        config,
        None,
    )
    .map_err(|e| e.with_leave_out(leave_out))
}

/// Leave-one-out solve warm-started at the full-sample estimate, reusing the full-sample
/// Jacobian sum at that point: the first Newton system is `(S - ∇h(Z_i, θ̂)) / (n-1)`.
pub(crate) fn loo_solve_seeded<M: ZModel>(
    model: &M,
    data: &Dataset<M::Record>,
    leave_out: usize,
    warm_start: &DVector<f64>,
    full_jacobian_sum: &DMatrix<f64>,
    config: &SolverConfig,
) -> Result<SolveResult> {
    let mut seed = full_jacobian_sum.clone();
    model.add_jacobian(&data.records()[leave_out], warm_start, -1.0, &mut seed);
    seed /= (data.n() - 1) as f64;
    newton(
        model,
        Subsample {
            records: data.records(),
            skip: Some(leave_out),
        },
        warm_start,
        config,
        Some(seed),
    )
    .map_err(|e| e.with_leave_out(leave_out))
}
