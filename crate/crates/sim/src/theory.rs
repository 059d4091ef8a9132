//! Closed-form asymptotic variances `ν²` of the target estimators under each
//! generator, used to standardize histogram output.

use zjack_core::models::logistic_derivative;

use crate::experiment::Family;

/// `E[g(U)]` for `U ~ N(0, 1)` by composite Simpson's rule on `[-12, 12]`.
fn gaussian_expectation(g: impl Fn(f64) -> f64) -> f64 {
    let steps = 4800;
    let (lo, hi) = (-12.0, 12.0);
    let h = (hi - lo) / steps as f64;
    let density = |u: f64| (-0.5 * u * u).exp() / (2.0 * std::f64::consts::PI).sqrt();
    let mut acc = 0.0;
    for i in 0..=steps {
        let u = lo + i as f64 * h;
        let w = if i == 0 || i == steps {
            1.0
        } else if i % 2 == 1 {
            4.0
        } else {
            2.0
        };
        acc += w * g(u) * density(u);
    }
    acc * h / 3.0
}

/// `ν²` for the family's target at dimension `d` (for `iv`, `d = k + 2`).
pub fn asymptotic_variance(family: Family, d: usize) -> f64 {
    match family {
        // 4σ² θ*ᵀθ* with σ = 1 and ‖θ*‖ = 1
        Family::Quad => 4.0,
        // 4 E[(θ*ᵀX)² ε²] = 4 (1 + (2d + 8)/(2d))
        Family::QuadMisspec => 4.0 * (2.0 + 4.0 / d as f64),
        Family::Logistic => logistic_intercept_variance(d),
        Family::Iv => {
            let k = (d - 2) as f64;
            // σ_ε² / var(π*ᵀW) with var(π*ᵀW) = (k² - 1)/(3k²)
            0.25 * 3.0 * k * k / (k * k - 1.0)
        }
    }
}

/// `[I⁻¹]₀₀` for the Fisher information `I = E[φ'(xᵀθ*) x xᵀ]` with `x = (1, X)`.
///
/// Along `u = β*ᵀX/‖β*‖` the information reduces to a 2×2 block; the orthogonal
/// directions decouple from the intercept.
fn logistic_intercept_variance(d: usize) -> f64 {
    let b = ((d - 1) as f64 / d as f64).sqrt();
    let w = |u: f64| logistic_derivative(1.0 + b * u);
    if d == 1 {
        return 1.0 / logistic_derivative(1.0);
    }
    let e0 = gaussian_expectation(w);
    let e1 = gaussian_expectation(|u| w(u) * u);
    let e2 = gaussian_expectation(|u| w(u) * u * u);
    e2 / (e0 * e2 - e1 * e1)
}
