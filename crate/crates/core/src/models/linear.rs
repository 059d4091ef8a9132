use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::add_outer_sparse;
use crate::zcore::{Functional, ZModel};

#[derive(Clone, Debug, PartialEq)]
pub struct LinearRecord {
    pub x: DVector<f64>,
    pub y: f64,
}

impl LinearRecord {
    pub fn new(x: DVector<f64>, y: f64) -> Self {
        Self { x, y }
    }
}

/// Score `f` applied to the residual `y - ⟨x, θ⟩`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Score {
    /// `f(t) = t`: ordinary least squares.
    Identity,
    /// `f(t) = t / √(1 + t²/δ²)`: derivative of the pseudo-Huber loss.
    PseudoHuber { delta: f64 },
}

impl Score {
    pub fn value(self, t: f64) -> f64 {
        match self {
            Score::Identity => t,
            Score::PseudoHuber { delta } => t / (1.0 + (t / delta).powi(2)).sqrt(),
        }
    }

    pub fn derivative(self, t: f64) -> f64 {
        match self {
            Score::Identity => 1.0,
            Score::PseudoHuber { delta } => (1.0 + (t / delta).powi(2)).powf(-1.5),
        }
    }

    pub fn second_derivative(self, t: f64) -> f64 {
        match self {
            Score::Identity => 0.0,
            Score::PseudoHuber { delta } => {
                -3.0 * t / (delta * delta) * (1.0 + (t / delta).powi(2)).powf(-2.5)
            }
        }
    }
}

/// `h(z, θ) = x · f(y - ⟨x, θ⟩)`.
#[derive(Clone, Debug)]
pub struct LinearModel {
    dim: usize,
    score: Score,
    functional: Functional,
}

impl LinearModel {
    pub fn new(dim: usize, score: Score, functional: Functional) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidArgument("dimension must be positive".into()));
        }
        if let Score::PseudoHuber { delta } = score {
            if !(delta > 0.0 && delta.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "pseudo-Huber delta must be positive, got {delta}"
                )));
            }
        }
        functional.check_dim(dim)?;
        Ok(Self {
            dim,
            score,
            functional,
        })
    }

    /// Least squares with the quadratic target `θᵀQθ`.
    pub fn ols_quadratic(q: DMatrix<f64>) -> Result<Self> {
        Self::new(q.nrows(), Score::Identity, Functional::quadratic(q))
    }

    pub fn score(&self) -> Score {
        self.score
    }

    fn residual(&self, r: &LinearRecord, theta: &DVector<f64>) -> f64 {
        r.y - r.x.dot(theta)
    }
}

impl ZModel for LinearModel {
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
        if !r.y.is_finite() || r.x.iter().any(|v| !v.is_finite()) {
            return Err("non-finite entry".into());
        }
        Ok(())
    }

    fn add_moment(&self, r: &LinearRecord, theta: &DVector<f64>, w: f64, out: &mut DVector<f64>) {
        let f = self.score.value(self.residual(r, theta));
        out.axpy(w * f, &r.x, 1.0);
    }

    fn add_jacobian(&self, r: &LinearRecord, theta: &DVector<f64>, w: f64, out: &mut DMatrix<f64>) {
        let fp = self.score.derivative(self.residual(r, theta));
        add_outer_sparse(out, &r.x, -w * fp);
    }

    fn add_contracted_hessian(
        &self,
        r: &LinearRecord,
        theta: &DVector<f64>,
        direction: &DVector<f64>,
        w: f64,
        out: &mut DMatrix<f64>,
    ) {
        let fpp = self.score.second_derivative(self.residual(r, theta));
        if fpp != 0.0 {
            add_outer_sparse(out, &r.x, w * direction.dot(&r.x) * fpp);
        }
    }
}
