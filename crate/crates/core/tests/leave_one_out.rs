mod common;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use zjack_core::models::{LinearModel, LinearRecord};
use zjack_core::rng::stream_rng;
use zjack_core::*;

/// `(XᵀX - xxᵀ)⁻¹ (Xᵀy - x y)` through the rank-one inverse update.
fn sherman_morrison(inv: &DMatrix<f64>, xty: &DVector<f64>, r: &LinearRecord) -> DVector<f64> {
    let ax = inv * &r.x;
    let denom = 1.0 - r.x.dot(&ax);
    let updated = inv + &ax * ax.transpose() / denom;
    updated * (xty - &r.x * r.y)
}

#[test]
fn ols_loo_matches_rank_one_update() {
    let cfg = SolverConfig::default();
    let mut worst: f64 = 0.0;
    for case in 0..100u64 {
        let mut rng = stream_rng(99, &[case]);
        let d = rng.random_range(1..=20);
        let n = rng.random_range((d + 5)..=200);
        let theta = common::normal_vec(&mut rng, d);
        let data = common::gaussian_ols(&mut rng, n, &theta, 1.0);
        let m = LinearModel::ols_quadratic(DMatrix::identity(d, d)).unwrap();
        let full = solve_z(&m, &data, &DVector::zeros(d), &cfg).unwrap();
        let (xtx, xty) = common::gram(&data);
        let inv = xtx.try_inverse().unwrap();
        let loo = compute_loo_set(&m, &data, &full, &cfg).unwrap();
        for i in [0, n / 2, n - 1] {
            let oracle = sherman_morrison(&inv, &xty, &data.records()[i]);
            worst = worst.max((&loo.estimates[i].theta - &oracle).abs().max());
            let direct = loo_solve(&m, &data, i, &full.theta, &cfg).unwrap();
            worst = worst.max((&direct.theta - &oracle).abs().max());
        }
    }
    assert!(worst < 1e-8, "worst deviation {worst:e}");
}

#[test]
fn loo_displacement_is_first_order_influence() {
    let (n, d) = (200, 5);
    let mut rng = stream_rng(5, &[]);
    let data = common::gaussian_ols(&mut rng, n, &common::unit_theta(d), 1.0);
    let m = LinearModel::ols_quadratic(DMatrix::identity(d, d)).unwrap();
    let cfg = SolverConfig::default();
    let full = solve_z(&m, &data, &DVector::zeros(d), &cfg).unwrap();
    let loo = compute_loo_set(&m, &data, &full, &cfg).unwrap();
    let j_inv = empirical_jacobian(&m, &data, &full.theta)
        .unwrap()
        .try_inverse()
        .unwrap();

    let mut gaps = Vec::new();
    let mut shifts = Vec::new();
    for (r, l) in data.records().iter().zip(&loo.estimates) {
        let shift = &full.theta - &l.theta;
        let linear = &j_inv * m.moment(r, &full.theta) / (n as f64 - 1.0);
        gaps.push((&shift + linear).norm());
        shifts.push(shift.norm());
    }
    let median = |v: &mut Vec<f64>| {
        v.sort_by(f64::total_cmp);
        v[v.len() / 2]
    };
    assert!(median(&mut gaps) <= median(&mut shifts) / 10.0);
}

#[test]
fn out_of_range_leave_out_is_rejected() {
    let mut rng = stream_rng(1, &[]);
    let data = common::gaussian_ols(&mut rng, 10, &common::unit_theta(2), 1.0);
    let m = LinearModel::ols_quadratic(DMatrix::identity(2, 2)).unwrap();
    assert!(matches!(
        loo_solve(&m, &data, 10, &DVector::zeros(2), &SolverConfig::default()),
        Err(Error::InvalidArgument(_))
    ));
}
