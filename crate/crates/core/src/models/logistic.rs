use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::add_outer_sparse;
use crate::models::LinearRecord;
use crate::zcore::{Functional, ZModel};

/// `φ(t) = eᵗ / (1 + eᵗ)`, evaluated without overflow.
pub fn logistic(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// `φ'(t) = φ(t)(1 - φ(t))`.
pub fn logistic_derivative(t: f64) -> f64 {
    let p = logistic(t);
    p * (1.0 - p)
}

/// Logistic regression score `h(z, θ) = x (y - φ(⟨θ, x⟩))`, targeting `θ_0`.
///
/// With an intercept the records carry a leading constant-1 covariate, so `θ_0`
/// is the intercept.
#[derive(Clone, Debug)]
pub struct LogisticModel {
    dim: usize,
    with_intercept: bool,
    functional: Functional,
}

impl LogisticModel {
    pub fn new(dim: usize, with_intercept: bool) -> Result<Self> {
        Self::with_functional(dim, with_intercept, Functional::Coordinate(0))
    }

    pub fn with_functional(
        dim: usize,
        with_intercept: bool,
        functional: Functional,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidArgument("dimension must be positive".into()));
        }
        functional.check_dim(dim)?;
        Ok(Self {
            dim,
            with_intercept,
            functional,
        })
    }

    pub fn with_intercept(&self) -> bool {
        self.with_intercept
    }
}

impl ZModel for LogisticModel {
    type Record = LinearRecord;

    fn dim(&self) -> usize {
        self.dim
    }

    fn functional(&self) -> &Functional {
        &self.functional
    }

    fn validate_record(&self, r: &LinearRecord) -> std::result::Result<(), String> {
        if r.x.len() != self.dim {
            return Err(format!(
                "expected {} covariates, got {}",
                self.dim,
                r.x.len()
            ));
        }
        if r.y != 0.0 && r.y != 1.0 {
            return Err(format!("response must be 0 or 1, got {}", r.y));
        }
        if self.with_intercept && r.x[0] != 1.0 {
            return Err("leading intercept covariate must equal 1".into());
        }
        if r.x.iter().any(|v| !v.is_finite()) {
            return Err("non-finite covariate".into());
        }
        Ok(())
    }

    fn add_moment(&self, r: &LinearRecord, theta: &DVector<f64>, w: f64, out: &mut DVector<f64>) {
        let p = logistic(r.x.dot(theta));
        out.axpy(w * (r.y - p), &r.x, 1.0);
    }

    fn add_jacobian(&self, r: &LinearRecord, theta: &DVector<f64>, w: f64, out: &mut DMatrix<f64>) {
        add_outer_sparse(out, &r.x, -w * logistic_derivative(r.x.dot(theta)));
    }

    fn add_contracted_hessian(
        &self,
        r: &LinearRecord,
        theta: &DVector<f64>,
        direction: &DVector<f64>,
        w: f64,
        out: &mut DMatrix<f64>,
    ) {
        let p = logistic(r.x.dot(theta));
        let second = p * (1.0 - p) * (1.0 - 2.0 * p);
        add_outer_sparse(out, &r.x, -w * direction.dot(&r.x) * second);
    }
}
