//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector};

/// LU pivots smaller than this fraction of the largest pivot mark the system singular.
pub const PIVOT_RATIO_FLOOR: f64 = 1e-13;

/// Spectral condition number, `inf` when the matrix is exactly singular.
pub fn condition_number(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 1.0;
    }
    let sv = m.clone().singular_values();
    let max = sv.max();
    let min = sv.min();
    if !max.is_finite() || !min.is_finite() || min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Solve `a x = b` with partial-pivot LU, refusing numerically singular systems.
pub fn solve_checked(a: &DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    let lu = a.clone().lu();
    let u = lu.u();
    let diag = u.diagonal();
    let max = diag.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let min = diag.iter().fold(f64::INFINITY, |m, v| m.min(v.abs()));
    if !(max > 0.0) || !(min / max > PIVOT_RATIO_FLOOR) {
        return None;
    }
    let x = lu.solve(b)?;
    x.iter().all(|v| v.is_finite()).then_some(x)
}

/// Least-squares step `(AᵀA + λ·s·I) x = Aᵀb`, with `s` the mean diagonal of `AᵀA`
/// so that the ridge is relative to the scale of the system.
pub fn ridge_solve(a: &DMatrix<f64>, b: &DVector<f64>, lambda: f64) -> Option<DVector<f64>> {
    let d = a.ncols();
    let mut normal = a.tr_mul(a);
    let scale = (normal.trace() / d.max(1) as f64).max(f64::MIN_POSITIVE);
    for i in 0..d {
        normal[(i, i)] += lambda * scale;
    }
    let rhs = a.tr_mul(b);
    let x = normal.cholesky()?.solve(&rhs);
    x.iter().all(|v| v.is_finite()).then_some(x)
}

/// Inverse of a symmetric positive definite matrix.
pub fn spd_inverse(m: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let inv = m.clone().cholesky()?.inverse();
    inv.iter().all(|v| v.is_finite()).then_some(inv)
}

/// Moore-Penrose inverse of a symmetric positive semidefinite matrix.
///
/// Eigenvalues below `rel_tol` times the largest are treated as zero. Returns the
/// pseudo-inverse and the numerical rank.
pub fn psd_pinv(m: &DMatrix<f64>, rel_tol: f64) -> (DMatrix<f64>, usize) {
    let eig = m.clone().symmetric_eigen();
    let max = eig.eigenvalues.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
    let cutoff = rel_tol * max;
    let n = m.nrows();
    let mut out = DMatrix::zeros(n, n);
    let mut rank = 0;
    for (k, &lam) in eig.eigenvalues.iter().enumerate() {
        if lam > cutoff && lam > 0.0 {
            rank += 1;
            let v = eig.eigenvectors.column(k);
            out.ger(1.0 / lam, &v, &v, 1.0);
        }
    }
    (out, rank)
}

/// Add `weight · v vᵀ` to `out`, skipping structural zeros of `v`.
pub fn add_outer_sparse(out: &mut DMatrix<f64>, v: &DVector<f64>, weight: f64) {
    for (j, &vj) in v.iter().enumerate() {
        if vj == 0.0 {
            continue;
        }
        let wj = weight * vj;
        for (i, &vi) in v.iter().enumerate() {
            if vi != 0.0 {
                out[(i, j)] += wj * vi;
            }
        }
    }
}
