use nalgebra::{DMatrix, DVector};

use crate::zcore::{Functional, ZModel};

/// `h(z, θ) = z - θ`, whose root is the sample mean.
#[derive(Clone, Debug)]
pub struct MeanModel {
    dim: usize,
    functional: Functional,
}

impl MeanModel {
    pub fn new(dim: usize, functional: Functional) -> Self {
        Self { dim, functional }
    }
}

impl ZModel for MeanModel {
    type Record = DVector<f64>;

    fn dim(&self) -> usize {
        self.dim
    }

    fn functional(&self) -> &Functional {
        &self.functional
    }

    fn validate_record(&self, record: &DVector<f64>) -> Result<(), String> {
        if record.len() != self.dim {
            return Err(format!(
                "expected {} entries, got {}",
                self.dim,
                record.len()
            ));
        }
        Ok(())
    }

    fn add_moment(&self, z: &DVector<f64>, theta: &DVector<f64>, w: f64, out: &mut DVector<f64>) {
        out.axpy(w, z, 1.0);
        out.axpy(-w, theta, 1.0);
    }

    fn add_jacobian(
        &self,
        _z: &DVector<f64>,
        _theta: &DVector<f64>,
        w: f64,
        out: &mut DMatrix<f64>,
    ) {
        for i in 0..self.dim {
            out[(i, i)] -= w;
        }
    }

    fn add_contracted_hessian(
        &self,
        _z: &DVector<f64>,
        _theta: &DVector<f64>,
        _direction: &DVector<f64>,
        _w: f64,
        _out: &mut DMatrix<f64>,
    ) {
    }
}
