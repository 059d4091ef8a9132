//! Synthetic data for the four experiment families.

use nalgebra::DVector;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use zjack_core::models::{logistic, IvRecord, LinearRecord};
use zjack_core::rng::StreamRng;
use zjack_core::{Dataset, Result};

/// True parameter and target value of a generated dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct Truth {
    pub theta_star: DVector<f64>,
    pub tau_star: f64,
}

/// Noise standard deviation in the IV design (variance 0.25).
pub const IV_NOISE_SD: f64 = 0.5;
/// `cov(ε, η)` in the IV design.
pub const IV_NOISE_COV: f64 = 0.2;

fn normal(rng: &mut StreamRng) -> f64 {
    StandardNormal.sample(rng)
}

fn normal_vec(rng: &mut StreamRng, d: usize) -> DVector<f64> {
    DVector::from_fn(d, |_, _| normal(rng))
}

fn unit_direction(d: usize) -> DVector<f64> {
    DVector::from_element(d, 1.0 / (d as f64).sqrt())
}

fn linear(
    n: usize,
    d: usize,
    rng: &mut StreamRng,
    noise: impl Fn(&DVector<f64>, &mut StreamRng) -> f64,
) -> Result<(Dataset<LinearRecord>, Truth)> {
    let theta = unit_direction(d);
    let recs = (0..n)
        .map(|_| {
            let x = normal_vec(rng, d);
            let eps = noise(&x, rng);
            let y = x.dot(&theta) + eps;
            LinearRecord::new(x, y)
        })
        .collect();
    Ok((
        Dataset::new(recs)?,
        Truth {
            theta_star: theta,
            tau_star: 1.0,
        },
    ))
}

/// `X ~ N(0, I_d)`, `y = Xᵀθ* + ε` with `ε ~ N(0, 1)` and `θ* = 1/√d`; `τ* = ‖θ*‖² = 1`.
pub fn generate_quad(
    n: usize,
    d: usize,
    rng: &mut StreamRng,
) -> Result<(Dataset<LinearRecord>, Truth)> {
    linear(n, d, rng, |_, rng| normal(rng))
}

/// As [`generate_quad`] but with `ε = (‖X‖² - d)/√(2d) + ζ`, `ζ ~ N(0, 1)`.
///
/// `E[εX] = 0`, so `θ*` is still the best linear predictor, while `E[ε | X]`
/// grows with `‖X‖`.
pub fn generate_quad_misspec(
    n: usize,
    d: usize,
    rng: &mut StreamRng,
) -> Result<(Dataset<LinearRecord>, Truth)> {
    let scale = (2.0 * d as f64).sqrt();
    linear(n, d, rng, |x, rng| {
        (x.norm_squared() - d as f64) / scale + normal(rng)
    })
}

/// Logistic regression with intercept `α* = 1` and slopes `β* = 1/√d ∈ R^{d-1}`.
/// Records carry a leading constant covariate; the target is `α*`.
pub fn generate_logistic(
    n: usize,
    d: usize,
    rng: &mut StreamRng,
) -> Result<(Dataset<LinearRecord>, Truth)> {
    let mut theta = DVector::from_element(d, 1.0 / (d as f64).sqrt());
    theta[0] = 1.0;
    let recs = (0..n)
        .map(|_| {
            let mut x = normal_vec(rng, d);
            x[0] = 1.0;
            let p = logistic(x.dot(&theta));
            let y = if rng.random::<f64>() < p { 1.0 } else { 0.0 };
            LinearRecord::new(x, y)
        })
        .collect();
    Ok((
        Dataset::new(recs)?,
        Truth {
            theta_star: theta,
            tau_star: 1.0,
        },
    ))
}

/// First-stage coefficients `π* = (0, 2/k, ..., 2(k-1)/k)`.
pub fn iv_pi_star(k: usize) -> DVector<f64> {
    DVector::from_fn(k, |j, _| 2.0 * j as f64 / k as f64)
}

/// One-hot instruments uniform over `k` categories, `X = ⟨W, π*⟩ + η`,
/// `Y = α* + Xβ* + ε` with `(α*, β*) = (0, 1)`, `var ε = var η = 0.25`, `cov = 0.2`.
/// `θ* = (α*, β*, π*)` and the target is `β*`.
pub fn generate_iv(n: usize, k: usize, rng: &mut StreamRng) -> Result<(Dataset<IvRecord>, Truth)> {
    let pi = iv_pi_star(k);
    let var = IV_NOISE_SD * IV_NOISE_SD;
    let rho = IV_NOISE_COV / var;
    let recs = (0..n)
        .map(|_| {
            let j = rng.random_range(0..k);
            let mut w = DVector::zeros(k);
            w[j] = 1.0;
            let u = normal(rng);
            let v = normal(rng);
            let eta = IV_NOISE_SD * u;
            let eps = IV_NOISE_SD * (rho * u + (1.0 - rho * rho).sqrt() * v);
            let x = pi[j] + eta;
            IvRecord::new(w, x, x + eps)
        })
        .collect();
    let mut theta = DVector::zeros(k + 2);
    theta[1] = 1.0;
    theta.rows_mut(2, k).copy_from(&pi);
    Ok((
        Dataset::new(recs)?,
        Truth {
            theta_star: theta,
            tau_star: 1.0,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use zjack_core::rng::stream_rng;

    #[test]
    fn quad_truth() {
        for (n, d) in [(10, 1), (50, 7), (400, 20)] {
            let (data, truth) = generate_quad(n, d, &mut stream_rng(1, &[])).unwrap();
            assert_eq!(data.n(), n);
            assert!((truth.theta_star.norm() - 1.0).abs() < 1e-12);
            assert_eq!(truth.tau_star, 1.0);
        }
    }

    #[test]
    fn same_seed_same_data() {
        let a = generate_quad_misspec(30, 4, &mut stream_rng(5, &[2])).unwrap();
        let b = generate_quad_misspec(30, 4, &mut stream_rng(5, &[2])).unwrap();
        assert_eq!(a, b);
        let c = generate_quad_misspec(30, 4, &mut stream_rng(5, &[3])).unwrap();
        assert_ne!(a.0, c.0);
        assert_eq!(
            generate_logistic(20, 3, &mut stream_rng(8, &[])).unwrap(),
            generate_logistic(20, 3, &mut stream_rng(8, &[])).unwrap()
        );
        assert_eq!(
            generate_iv(20, 3, &mut stream_rng(8, &[])).unwrap(),
            generate_iv(20, 3, &mut stream_rng(8, &[])).unwrap()
        );
    }

    #[test]
    fn iv_rows_are_one_hot() {
        let (data, truth) = generate_iv(200, 5, &mut stream_rng(3, &[])).unwrap();
        for r in data.records() {
            assert_eq!(r.w.sum(), 1.0);
            assert!(r.w.iter().all(|&v| v == 0.0 || v == 1.0));
        }
        assert_eq!(truth.theta_star.len(), 7);
        assert_eq!(truth.theta_star[1], 1.0);
        assert!((truth.theta_star[6] - 8.0 / 5.0).abs() < 1e-15);
    }

    #[test]
    fn logistic_layout() {
        let (data, truth) = generate_logistic(50, 4, &mut stream_rng(3, &[])).unwrap();
        assert!(data
            .records()
            .iter()
            .all(|r| r.x[0] == 1.0 && (r.y == 0.0 || r.y == 1.0)));
        assert_eq!(truth.theta_star[0], 1.0);
        assert!((truth.theta_star[3] - 0.5).abs() < 1e-15);
    }
}
