#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use zjack_core::models::{logistic, IpwRecord, IvRecord, LinearRecord};
use zjack_core::rng::StreamRng;
use zjack_core::Dataset;

pub fn normal_vec(rng: &mut StreamRng, d: usize) -> DVector<f64> {
    DVector::from_fn(d, |_, _| StandardNormal.sample(rng))
}

pub fn unit_theta(d: usize) -> DVector<f64> {
    DVector::from_element(d, 1.0 / (d as f64).sqrt())
}

/// `y = xᵀθ + N(0, σ²)` with standard Gaussian covariates.
pub fn gaussian_ols(
    rng: &mut StreamRng,
    n: usize,
    theta: &DVector<f64>,
    sigma: f64,
) -> Dataset<LinearRecord> {
    let recs = (0..n)
        .map(|_| {
            let x = normal_vec(rng, theta.len());
            let e: f64 = StandardNormal.sample(rng);
            let y = x.dot(theta) + sigma * e;
            LinearRecord::new(x, y)
        })
        .collect();
    Dataset::new(recs).unwrap()
}

pub fn logistic_data(
    rng: &mut StreamRng,
    n: usize,
    theta: &DVector<f64>,
    intercept: bool,
) -> Dataset<LinearRecord> {
    let recs = (0..n)
        .map(|_| {
            let mut x = normal_vec(rng, theta.len());
            if intercept {
                x[0] = 1.0;
            }
            let p = logistic(x.dot(theta));
            let y = if rng.random::<f64>() < p { 1.0 } else { 0.0 };
            LinearRecord::new(x, y)
        })
        .collect();
    Dataset::new(recs).unwrap()
}

pub fn ipw_data(rng: &mut StreamRng, n: usize, p: usize) -> Dataset<IpwRecord> {
    let beta = unit_theta(p) * 0.5;
    let recs = (0..n)
        .map(|_| {
            let x = normal_vec(rng, p);
            let e = logistic(x.dot(&beta));
            let a = if rng.random::<f64>() < e { 1.0 } else { 0.0 };
            let z: f64 = StandardNormal.sample(rng);
            IpwRecord::new(x.clone(), a, 1.0 + a + x.sum() * 0.3 + z)
        })
        .collect();
    Dataset::new(recs).unwrap()
}

/// One-hot instruments over `k` categories with correlated errors.
pub fn iv_data(rng: &mut StreamRng, n: usize, k: usize, rho: f64) -> Dataset<IvRecord> {
    let recs = (0..n)
        .map(|_| {
            let j = rng.random_range(0..k);
            let mut w = DVector::zeros(k);
            w[j] = 1.0;
            let u: f64 = StandardNormal.sample(rng);
            let v: f64 = StandardNormal.sample(rng);
            let eta = 0.5 * u;
            let eps = 0.5 * (rho * u + (1.0 - rho * rho).sqrt() * v);
            let x = 2.0 * j as f64 / k as f64 + eta;
            IvRecord::new(w, x, x + eps)
        })
        .collect();
    Dataset::new(recs).unwrap()
}

pub fn gram(data: &Dataset<LinearRecord>) -> (DMatrix<f64>, DVector<f64>) {
    let d = data.records()[0].x.len();
    let mut xtx = DMatrix::zeros(d, d);
    let mut xty = DVector::zeros(d);
    for r in data.records() {
        xtx += &r.x * r.x.transpose();
        xty += &r.x * r.y;
    }
    (xtx, xty)
}
