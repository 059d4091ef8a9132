use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::add_outer_sparse;
use crate::models::{logistic, LinearRecord, LogisticModel};
use crate::zcore::{
    empirical_moment, solve_z, Dataset, Functional, SolveResult, SolverConfig, ZModel,
};

#[derive(Clone, Debug, PartialEq)]
pub struct IpwRecord {
    /// Propensity covariates, length `d - 1`.
    pub x: DVector<f64>,
    /// Treatment indicator, 0 or 1.
    pub a: f64,
    pub y: f64,
}

impl IpwRecord {
    pub fn new(x: DVector<f64>, a: f64, y: f64) -> Self {
        Self { x, a, y }
    }
}

/// Inverse propensity weighting with a logistic propensity score.
///
/// The parameter is `θ = (β, τ)` and the moment stacks the logistic score for
/// `β` on top of the weighted-outcome equation for the treatment effect `τ`,
/// which is also the target functional (the last coordinate).
#[derive(Clone, Debug)]
pub struct IpwModel {
    dim: usize,
    functional: Functional,
}

impl IpwModel {
    /// `dim` is the covariate length plus one.
    pub fn new(dim: usize) -> Result<Self> {
        if dim < 2 {
            return Err(Error::InvalidArgument(
                "IPW needs at least one propensity covariate".into(),
            ));
        }
        Ok(Self {
            dim,
            functional: Functional::Coordinate(dim - 1),
        })
    }

    fn beta<'a>(&self, theta: &'a DVector<f64>) -> nalgebra::DVectorView<'a, f64> {
        theta.rows(0, self.dim - 1)
    }

    /// Two-stage exact solve: logistic MLE for `β`, then the sample average of the
    /// weighted outcomes for `τ`.
    pub fn solve_two_stage(
        &self,
        data: &Dataset<IpwRecord>,
        config: &SolverConfig,
    ) -> Result<SolveResult> {
        self.validate_dataset(data)?;
        let p = self.dim - 1;
        let propensity = LogisticModel::new(p, false)?;
        let treat = Dataset::new(
            data.records()
                .iter()
                .map(|r| LinearRecord::new(r.x.clone(), r.a))
                .collect(),
        )?;
        let first = solve_z(&propensity, &treat, &DVector::zeros(p), config)?;
        let mut theta = DVector::zeros(self.dim);
        theta.rows_mut(0, p).copy_from(&first.theta);
        self.check_overlap(data, &first.theta)?;
        let sum: f64 = data
            .records()
            .iter()
            .map(|r| weighted_outcome(r, logistic(r.x.dot(&first.theta))))
            .sum();
        theta[p] = sum / data.n() as f64;
        let residual_norm = empirical_moment(self, data, &theta)?.norm();
        Ok(SolveResult {
            converged: first.converged && residual_norm <= config.residual_tolerance,
            theta,
            residual_norm,
            iterations: first.iterations,
            regularized: first.regularized,
        })
    }
}

impl IpwModel {
    /// Fails when a treated record has propensity exactly 0 or a control record exactly 1.
    pub fn check_overlap(&self, data: &Dataset<IpwRecord>, beta: &DVector<f64>) -> Result<()> {
        for (i, r) in data.records().iter().enumerate() {
            let e = logistic(r.x.dot(beta));
            if (r.a == 1.0 && e == 0.0) || (r.a == 0.0 && e == 1.0) {
                return Err(Error::OverlapViolation {
                    record: i,
                    propensity: e,
                });
            }
        }
        Ok(())
    }
}

fn weighted_outcome(r: &IpwRecord, e: f64) -> f64 {
    let treated = if r.a == 1.0 { r.y / e } else { 0.0 };
    let control = if r.a == 0.0 { r.y / (1.0 - e) } else { 0.0 };
    treated - control
}

impl ZModel for IpwModel {
    type Record = IpwRecord;

    fn dim(&self) -> usize {
        self.dim
    }

    fn functional(&self) -> &Functional {
        &self.functional
    }

    fn validate_record(&self, r: &IpwRecord) -> std::result::Result<(), String> {
        if r.x.len() + 1 != self.dim {
            return Err(format!(
                "expected {} covariates, got {}",
                self.dim - 1,
                r.x.len()
            ));
        }
        if r.a != 0.0 && r.a != 1.0 {
            return Err(format!("treatment must be 0 or 1, got {}", r.a));
        }
        if !r.y.is_finite() || r.x.iter().any(|v| !v.is_finite()) {
            return Err("non-finite entry".into());
        }
        Ok(())
    }

    fn add_moment(&self, r: &IpwRecord, theta: &DVector<f64>, w: f64, out: &mut DVector<f64>) {
        let p = self.dim - 1;
        let e = logistic(r.x.dot(&self.beta(theta)));
        out.rows_mut(0, p).axpy(w * (r.a - e), &r.x, 1.0);
        out[p] += w * (weighted_outcome(r, e) - theta[p]);
    }

    fn add_jacobian(&self, r: &IpwRecord, theta: &DVector<f64>, w: f64, out: &mut DMatrix<f64>) {
        let p = self.dim - 1;
        let e = logistic(r.x.dot(&self.beta(theta)));
        {
            let mut block = out.view_mut((0, 0), (p, p)).into_owned();
            add_outer_sparse(&mut block, &r.x, -w * e * (1.0 - e));
            out.view_mut((0, 0), (p, p)).copy_from(&block);
        }
        // d/dβ of a·y/e - (1-a)·y/(1-e), using e' = e(1-e) x
        let treated = if r.a == 1.0 {
            -r.y * (1.0 - e) / e
        } else {
            0.0
        };
        let control = if r.a == 0.0 {
            -r.y * e / (1.0 - e)
        } else {
            0.0
        };
        let coef = w * (treated + control);
        for j in 0..p {
            out[(p, j)] += coef * r.x[j];
        }
        out[(p, p)] -= w;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dvector;

    #[test]
    fn single_treated_record_balances_at_six() {
        // β = 0 gives propensity 1/2, so the τ block is 3 / 0.5 - τ.
        let m = IpwModel::new(2).unwrap();
        let r = IpwRecord::new(dvector![1.0], 1.0, 3.0);
        let h = m.moment(&r, &dvector![0.0, 6.0]);
        assert_eq!(h[1], 0.0);
    }

    #[test]
    fn zero_outcomes_give_zero_effect() {
        let m = IpwModel::new(2).unwrap();
        let data = Dataset::new(vec![
            IpwRecord::new(dvector![1.0], 1.0, 0.0),
            IpwRecord::new(dvector![1.0], 0.0, 0.0),
            IpwRecord::new(dvector![1.0], 1.0, 0.0),
        ])
        .unwrap();
        let s = m.solve_two_stage(&data, &SolverConfig::default()).unwrap();
        assert!(s.converged);
        assert_eq!(s.theta[1], 0.0);
    }

    #[test]
    fn two_stage_matches_fitted_share() {
        let m = IpwModel::new(2).unwrap();
        let data = Dataset::new(vec![
            IpwRecord::new(dvector![1.0], 1.0, 1.0),
            IpwRecord::new(dvector![1.0], 0.0, 1.0),
            IpwRecord::new(dvector![1.0], 1.0, 1.0),
            IpwRecord::new(dvector![1.0], 1.0, 1.0),
        ])
        .unwrap();
        // constant covariate: fitted propensity is the treated share 3/4
        let s = m.solve_two_stage(&data, &SolverConfig::default()).unwrap();
        assert!(s.converged);
        assert!((s.theta[1] - (3.0 / 0.75 - 1.0 / 0.25) / 4.0).abs() < 1e-9);
    }

    #[test]
    fn overlap_violation_is_an_error() {
        let m = IpwModel::new(2).unwrap();
        let data = Dataset::new(vec![
            IpwRecord::new(dvector![1.0], 1.0, 1.0),
            IpwRecord::new(dvector![-1.0], 0.0, 1.0),
        ])
        .unwrap();
        assert!(m.check_overlap(&data, &dvector![0.5]).is_ok());
        assert!(matches!(
            m.check_overlap(&data, &dvector![-800.0]),
            Err(Error::OverlapViolation { record: 0, .. })
        ));
    }
}
