use nalgebra::DVector;
use rand_distr::{Distribution, StandardNormal};
use zjack_core::models::logistic;
use zjack_core::oracle::monte_carlo_average;
use zjack_core::rng::stream_rng;
use zjack_sim::generators::{
    generate_iv, generate_logistic, generate_quad, generate_quad_misspec, iv_pi_star, IV_NOISE_COV,
    IV_NOISE_SD,
};

const N: usize = 100_000;

/// Mean and standard error.
fn mean_se(v: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let m = v.clone().count() as f64;
    let mean = v.clone().sum::<f64>() / m;
    let var = v.map(|x| (x - mean).powi(2)).sum::<f64>() / (m - 1.0);
    (mean, (var / m).sqrt())
}

#[test]
fn quad_columns_are_centered() {
    let d = 6;
    let (data, _) = generate_quad(N, d, &mut stream_rng(11, &[])).unwrap();
    let bound = 3.0 / (N as f64).sqrt();
    for j in 0..d {
        let mean = data.records().iter().map(|r| r.x[j]).sum::<f64>() / N as f64;
        assert!(mean.abs() <= bound, "column {j}: {mean}");
    }
    let (noise, se) = mean_se(
        data.records()
            .iter()
            .map(|r| r.y - r.x.sum() / (d as f64).sqrt()),
    );
    assert!(noise.abs() <= 3.0 * se);
}

#[test]
fn misspecified_noise_is_orthogonal_but_not_mean_zero() {
    let d = 5;
    let (data, truth) = generate_quad_misspec(N, d, &mut stream_rng(12, &[])).unwrap();
    let eps: Vec<f64> = data
        .records()
        .iter()
        .map(|r| r.y - r.x.dot(&truth.theta_star))
        .collect();
    for j in 0..d {
        let (m, se) = mean_se(data.records().iter().zip(&eps).map(|(r, e)| r.x[j] * e));
        assert!(m.abs() <= 3.0 * se, "coordinate {j}: {m} ± {se}");
    }
    let cut = d as f64 + 2.0 * (2.0 * d as f64).sqrt();
    let (far, far_se) = mean_se(
        data.records()
            .iter()
            .zip(&eps)
            .filter(|(r, _)| r.x.norm_squared() > cut)
            .map(|(_, e)| *e),
    );
    assert!(
        far > 3.0 * far_se && far > 1.0,
        "E[ε | ‖X‖² > {cut}] = {far}"
    );
}

#[test]
fn logistic_response_rate_matches_integral() {
    for d in [2usize, 6] {
        let (data, truth) = generate_logistic(N, d, &mut stream_rng(13, &[d as u64])).unwrap();
        let (rate, se) = mean_se(data.records().iter().map(|r| r.y));
        let beta = truth.theta_star.rows(1, d - 1).into_owned();
        let oracle = monte_carlo_average(1_000_000, 99, 1, |rng| {
            let x = DVector::from_fn(d - 1, |_, _| StandardNormal.sample(&mut *rng));
            Ok(DVector::from_element(1, logistic(1.0 + x.dot(&beta))))
        })
        .unwrap()
        .component(0);
        let tol = 3.0 * (se * se + oracle.std_error * oracle.std_error).sqrt();
        assert!(
            (rate - oracle.mean).abs() <= tol,
            "d={d}: {rate} vs {}",
            oracle.mean
        );
    }
}

#[test]
fn logistic_single_slope_regression_value() {
    let (data, _) = generate_logistic(N, 2, &mut stream_rng(14, &[])).unwrap();
    let rate = data.records().iter().map(|r| r.y).sum::<f64>() / N as f64;
    // E[φ(1 + U/√2)] ≈ 0.71157 by quadrature
    assert!(
        (rate - 0.71157).abs() < 3.0 * (0.21f64 / N as f64).sqrt(),
        "{rate}"
    );
    assert_eq!(rate, 0.71143);
}

#[test]
fn iv_noise_moments() {
    let k = 5;
    let (data, truth) = generate_iv(N, k, &mut stream_rng(15, &[])).unwrap();
    let pi = iv_pi_star(k);
    assert_eq!(truth.theta_star.rows(2, k), pi.rows(0, k));
    let noise: Vec<(f64, f64)> = data
        .records()
        .iter()
        .map(|r| {
            let eta = r.x - r.w.dot(&pi);
            (r.y - r.x, eta)
        })
        .collect();
    let var = IV_NOISE_SD * IV_NOISE_SD;
    for (name, expected, draws) in [
        (
            "var eps",
            var,
            noise.iter().map(|(e, _)| e * e).collect::<Vec<_>>(),
        ),
        ("var eta", var, noise.iter().map(|(_, h)| h * h).collect()),
        (
            "cov",
            IV_NOISE_COV,
            noise.iter().map(|(e, h)| e * h).collect(),
        ),
    ] {
        let (m, se) = mean_se(draws.iter().copied());
        assert!((m - expected).abs() <= 3.0 * se, "{name}: {m} ± {se}");
    }
    let counts = data.records().iter().fold(vec![0usize; k], |mut c, r| {
        c[r.w.iamax()] += 1;
        c
    });
    for c in counts {
        let p = 1.0 / k as f64;
        let sd = (N as f64 * p * (1.0 - p)).sqrt();
        assert!((c as f64 - N as f64 * p).abs() <= 4.0 * sd);
    }
}
