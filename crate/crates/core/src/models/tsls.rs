use nalgebra::{DMatrix, DVector, Matrix2, Vector2};

use crate::error::{Error, Result};
use crate::linalg::{self, add_outer_sparse};
use crate::zcore::{Dataset, Functional, ZModel};

/// Minimum eigenvalue ratio of the instrument Gram matrix accepted by [`TslsModel::closed_form`].
pub const GRAM_RCOND_FLOOR: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct IvRecord {
    /// Instruments, length `k`.
    pub w: DVector<f64>,
    /// Endogenous covariate.
    pub x: f64,
    pub y: f64,
}

impl IvRecord {
    pub fn new(w: DVector<f64>, x: f64, y: f64) -> Self {
        Self { w, x, y }
    }
}

/// Two-stage least squares as a Z-estimator on `θ = (α, β, π) ∈ R^{k+2}`.
///
/// Moment rows: the first-stage normal equations `w (x - wᵀπ)` (k rows), the
/// second-stage equation `(πᵀw)(y - α - xβ)` and the intercept equation
/// `y - α - xβ`. The target is `β`. The moment is linear in `π` and in `(α, β)`
/// separately, so Newton started from a first-stage-consistent `π` converges in
/// a single step and from anywhere else in two.
#[derive(Clone, Debug)]
pub struct TslsModel {
    k: usize,
    functional: Functional,
}

impl TslsModel {
    pub fn new(k: usize) -> Result<Self> {
        if k < 2 {
            return Err(Error::InvalidArgument(format!(
                "need at least 2 instruments, got {k}"
            )));
        }
        Ok(Self {
            k,
            functional: Functional::Coordinate(1),
        })
    }

    pub fn instruments(&self) -> usize {
        self.k
    }

    /// First-stage coefficients `π̂ = (Σ w wᵀ)⁻¹ Σ w x`, refusing ill-conditioned Gram matrices.
    pub fn first_stage(&self, data: &Dataset<IvRecord>) -> Result<DVector<f64>> {
        self.validate_dataset(data)?;
        let k = self.k;
        let mut gram = DMatrix::zeros(k, k);
        let mut cross = DVector::zeros(k);
        for r in data.records() {
            add_outer_sparse(&mut gram, &r.w, 1.0);
            cross.axpy(r.x, &r.w, 1.0);
        }
        let eig = gram.clone().symmetric_eigen().eigenvalues;
        let max = eig.max();
        let min = eig.min();
        if !(max > 0.0) || !(min > GRAM_RCOND_FLOOR * max) {
            return Err(Error::RankDeficient {
                what: "instrument Gram matrix",
                condition_number: if min > 0.0 { max / min } else { f64::INFINITY },
            });
        }
        linalg::spd_inverse(&gram)
            .map(|inv| inv * cross)
            .ok_or(Error::RankDeficient {
                what: "instrument Gram matrix",
                condition_number: max / min,
            })
    }

    /// Closed-form estimate: the first stage for `π`, then the second-stage
    /// `2 × 2` system for `(α, β)`.
    pub fn closed_form(&self, data: &Dataset<IvRecord>) -> Result<DVector<f64>> {
        let pi = self.first_stage(data)?;
        self.second_stage(data, pi)
    }

    /// Like [`closed_form`](Self::closed_form) but with a pseudo-inverse first stage,
    /// so instrument categories absent from the sample get `π_j = 0` instead of an error.
    pub fn projection_fit(&self, data: &Dataset<IvRecord>) -> Result<DVector<f64>> {
        self.validate_dataset(data)?;
        let k = self.k;
        let mut gram = DMatrix::zeros(k, k);
        let mut cross = DVector::zeros(k);
        for r in data.records() {
            add_outer_sparse(&mut gram, &r.w, 1.0);
            cross.axpy(r.x, &r.w, 1.0);
        }
        let (pinv, _) = linalg::psd_pinv(&gram, GRAM_RCOND_FLOOR);
        self.second_stage(data, pinv * cross)
    }

    fn second_stage(&self, data: &Dataset<IvRecord>, pi: DVector<f64>) -> Result<DVector<f64>> {
        let n = data.n() as f64;
        let (mut sx, mut sy, mut ss, mut ssx, mut ssy) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for r in data.records() {
            let s = pi.dot(&r.w);
            sx += r.x;
            sy += r.y;
            ss += s;
            ssx += s * r.x;
            ssy += s * r.y;
        }
        let a = Matrix2::new(n, sx, ss, ssx);
        let ab = a
            .lu()
            .solve(&Vector2::new(sy, ssy))
            .filter(|v| v.iter().all(|x| x.is_finite()))
            .ok_or(Error::RankDeficient {
                what: "second-stage system",
                condition_number: f64::INFINITY,
            })?;
        let mut theta = DVector::zeros(self.k + 2);
        theta[0] = ab[0];
        theta[1] = ab[1];
        theta.rows_mut(2, self.k).copy_from(&pi);
        Ok(theta)
    }

    fn parts(&self, r: &IvRecord, theta: &DVector<f64>) -> (f64, f64) {
        let s = theta.rows(2, self.k).dot(&r.w);
        let e = r.y - theta[0] - r.x * theta[1];
        (s, e)
    }
}

impl ZModel for TslsModel {
    type Record = IvRecord;

    fn dim(&self) -> usize {
        self.k + 2
    }

    fn functional(&self) -> &Functional {
        &self.functional
    }

    fn validate_record(&self, r: &IvRecord) -> std::result::Result<(), String> {
        if r.w.len() != self.k {
            return Err(format!(
                "expected {} instruments, got {}",
                self.k,
                r.w.len()
            ));
        }
        if !r.x.is_finite() || !r.y.is_finite() || r.w.iter().any(|v| !v.is_finite()) {
            return Err("non-finite entry".into());
        }
        Ok(())
    }

    fn add_moment(&self, r: &IvRecord, theta: &DVector<f64>, w: f64, out: &mut DVector<f64>) {
        let k = self.k;
        let (s, e) = self.parts(r, theta);
        let c = w * (r.x - s);
        for (a, &wa) in r.w.iter().enumerate() {
            if wa != 0.0 {
                out[a] += c * wa;
            }
        }
        out[k] += w * s * e;
        out[k + 1] += w * e;
    }

    fn add_jacobian(&self, r: &IvRecord, theta: &DVector<f64>, w: f64, out: &mut DMatrix<f64>) {
        let k = self.k;
        let (s, e) = self.parts(r, theta);
        for (b, &wb) in r.w.iter().enumerate() {
            if wb == 0.0 {
                continue;
            }
            for (a, &wa) in r.w.iter().enumerate() {
                if wa != 0.0 {
                    out[(a, 2 + b)] -= w * wa * wb;
                }
            }
            out[(k, 2 + b)] += w * e * wb;
        }
        out[(k, 0)] -= w * s;
        out[(k, 1)] -= w * s * r.x;
        out[(k + 1, 0)] -= w;
        out[(k + 1, 1)] -= w * r.x;
    }

    fn add_contracted_hessian(
        &self,
        r: &IvRecord,
        _theta: &DVector<f64>,
        direction: &DVector<f64>,
        w: f64,
        out: &mut DMatrix<f64>,
    ) {
        // only the bilinear second-stage row has curvature
        let c = w * direction[self.k];
        if c == 0.0 {
            return;
        }
        for (b, &wb) in r.w.iter().enumerate() {
            if wb == 0.0 {
                continue;
            }
            out[(0, 2 + b)] -= c * wb;
            out[(2 + b, 0)] -= c * wb;
            out[(1, 2 + b)] -= c * r.x * wb;
            out[(2 + b, 1)] -= c * r.x * wb;
        }
    }
}
