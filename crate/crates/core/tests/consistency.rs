mod common;

use nalgebra::{DMatrix, DVector};
use zjack_core::models::LinearModel;
use zjack_core::rng::stream_rng;
use zjack_core::*;

fn median_relative_error(n: usize, reps: u64) -> f64 {
    let d = (n as f64).sqrt().floor() as usize;
    let theta = common::unit_theta(d);
    let model = LinearModel::ols_quadratic(DMatrix::identity(d, d)).unwrap();
    let cfg = SolverConfig::default();
    let nu_sq = 4.0;
    let mut errs: Vec<f64> = (0..reps)
        .map(|rep| {
            let mut rng = stream_rng(404, &[n as u64, rep]);
            let data = common::gaussian_ols(&mut rng, n, &theta, 1.0);
            let full = solve_z(&model, &data, &DVector::zeros(d), &cfg).unwrap();
            let loo = compute_loo_set(&model, &data, &full, &cfg).unwrap();
            let v = jackknife_variance(&model, &loo).unwrap();
            (n as f64 * v - nu_sq).abs() / nu_sq
        })
        .collect();
    errs.sort_by(f64::total_cmp);
    (errs[errs.len() / 2 - 1] + errs[errs.len() / 2]) / 2.0
}

#[test]
fn jackknife_variance_error_shrinks_with_n() {
    let grid = [200, 400, 800, 1600];
    let errs: Vec<f64> = grid.iter().map(|&n| median_relative_error(n, 50)).collect();
    println!("median relative error by n {grid:?}: {errs:?}");
    for w in errs.windows(2) {
        assert!(w[1] < w[0], "{errs:?}");
    }
}
