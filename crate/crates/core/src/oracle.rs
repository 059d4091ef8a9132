//! Population reference quantities for validating estimators: the Jacobian `J`,
//! the influence direction `η = -J⁻¹∇τ(θ*)`, the curvature matrix `M`, the
//! asymptotic variance `ν²` and the dimension-dependent bias term `B`.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg;
use crate::rng::{derive_seed, stream_rng, StreamRng};
use crate::zcore::{QuadraticConvention, ZModel};

/// Draws per independently seeded Monte Carlo chunk.
pub const MC_CHUNK: usize = 4096;

#[derive(Clone, Debug, PartialEq)]
pub struct TheoryContext {
    pub theta_star: DVector<f64>,
    pub j: DMatrix<f64>,
    pub j_inv: DMatrix<f64>,
    pub eta: DVector<f64>,
    pub m: DMatrix<f64>,
    pub nu_sq: f64,
    pub bias: f64,
    /// False when `J`, `M`, `ν²` and `B` are Monte Carlo estimates.
    pub exact: bool,
}

impl TheoryContext {
    /// `φ(z) = -(J - ∇h(z, θ*)) η`.
    pub fn phi<M: ZModel>(&self, model: &M, record: &M::Record) -> DVector<f64> {
        let grad = model.moment_jacobian(record, &self.theta_star);
        (grad - &self.j) * &self.eta
    }

    /// `ψ(z) = J⁻¹ h(z, θ*)`.
    pub fn psi<M: ZModel>(&self, model: &M, record: &M::Record) -> DVector<f64> {
        &self.j_inv * model.moment(record, &self.theta_star)
    }

    /// `⟨φ(z), ψ(z)⟩ + ½ ψ(z)ᵀ M ψ(z)`, whose expectation is `B`.
    pub fn bias_integrand<M: ZModel>(&self, model: &M, record: &M::Record) -> f64 {
        let psi = self.psi(model, record);
        self.phi(model, record).dot(&psi) + 0.5 * (&self.m * &psi).dot(&psi)
    }
}

/// Closed-form theory for least squares with `X ~ N(0, I_d)`, `ε ~ N(0, σ²)` and
/// `τ(θ) = θᵀQθ` (or `½θᵀQθ` under [`QuadraticConvention::Half`]).
///
/// Here `J = -I`, so `η = ∇τ(θ*)`, `M = ∇²τ`, `B = ½σ² tr(∇²τ)` and `ν² = σ²‖∇τ(θ*)‖²`.
pub fn gaussian_ols_theory(
    theta_star: &DVector<f64>,
    q: &DMatrix<f64>,
    noise_sd: f64,
    convention: QuadraticConvention,
) -> Result<TheoryContext> {
    let d = theta_star.len();
    if q.shape() != (d, d) {
        return Err(Error::DimensionMismatch {
            what: "quadratic form",
            expected: d,
            got: q.nrows(),
        });
    }
    if !(noise_sd >= 0.0) {
        return Err(Error::InvalidArgument(
            "noise_sd must be nonnegative".into(),
        ));
    }
    let hess = q * (2.0 * convention.factor());
    let eta = &hess * theta_star;
    let sigma_sq = noise_sd * noise_sd;
    Ok(TheoryContext {
        theta_star: theta_star.clone(),
        j: -DMatrix::identity(d, d),
        j_inv: -DMatrix::identity(d, d),
        nu_sq: sigma_sq * eta.norm_squared(),
        bias: 0.5 * sigma_sq * hess.trace(),
        eta,
        m: hess,
        exact: true,
    })
}

/// Exact finite-sample bias `E[τ(θ̂)] - τ(θ*)` of the least-squares plug-in under the
/// Gaussian design, `σ² tr(Q) / (n - d - 1)` (halved under the `½` convention).
/// The bias does not depend on `θ*`.
pub fn exact_plugin_bias_gaussian(
    n: usize,
    d: usize,
    sigma: f64,
    q: &DMatrix<f64>,
    convention: QuadraticConvention,
) -> Result<f64> {
    if q.shape() != (d, d) {
        return Err(Error::DimensionMismatch {
            what: "quadratic form",
            expected: d,
            got: q.nrows(),
        });
    }
    if d == 0 {
        return Ok(0.0);
    }
    if n <= d + 1 {
        return Err(Error::InvalidArgument(format!(
            "need n > d + 1, got n = {n}, d = {d}"
        )));
    }
    Ok(convention.factor() * sigma * sigma * q.trace() / (n - d - 1) as f64)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct McEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub draws: usize,
}

impl McEstimate {
    /// Whether `value` lies within `k` standard errors of the mean.
    pub fn brackets(&self, value: f64, k: f64) -> bool {
        (self.mean - value).abs() <= k * self.std_error
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct McVector {
    pub mean: DVector<f64>,
    pub std_error: DVector<f64>,
    pub draws: usize,
}

impl McVector {
    pub fn component(&self, i: usize) -> McEstimate {
        McEstimate {
            mean: self.mean[i],
            std_error: self.std_error[i],
            draws: self.draws,
        }
    }
}

struct Moments {
    count: f64,
    mean: DVector<f64>,
    m2: DVector<f64>,
}

impl Moments {
    fn merge(self, other: Moments) -> Moments {
        let count = self.count + other.count;
        let delta = &other.mean - &self.mean;
        let mean = &self.mean + &delta * (other.count / count);
        let m2 =
            self.m2 + other.m2 + delta.component_mul(&delta) * (self.count * other.count / count);
        Moments { count, mean, m2 }
    }
}

/// Monte Carlo mean and standard error of a vector-valued draw.
///
/// Draws are split into chunks of [`MC_CHUNK`], chunk `c` using the stream keyed by
/// `(seed, c)`, so results do not depend on the number of threads.
pub fn monte_carlo_average<F>(draws: usize, seed: u64, dim: usize, f: F) -> Result<McVector>
where
    F: Fn(&mut StreamRng) -> Result<DVector<f64>> + Sync,
{
    if draws < 2 {
        return Err(Error::InvalidArgument("need at least 2 draws".into()));
    }
    let chunks = draws.div_ceil(MC_CHUNK);
    let parts: Vec<Result<Moments>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let size = MC_CHUNK.min(draws - c * MC_CHUNK);
            let mut rng = stream_rng(seed, &[c as u64]);
            let mut acc = Moments {
                count: 0.0,
                mean: DVector::zeros(dim),
                m2: DVector::zeros(dim),
            };
            for _ in 0..size {
                let v = f(&mut rng)?;
                if v.len() != dim {
                    return Err(Error::DimensionMismatch {
                        what: "monte carlo draw",
                        expected: dim,
                        got: v.len(),
                    });
                }
                if v.iter().any(|x| !x.is_finite()) {
                    return Err(Error::NonFinite {
                        what: "monte carlo draw",
                    });
                }
                acc.count += 1.0;
                let delta = &v - &acc.mean;
                acc.mean += &delta / acc.count;
                acc.m2 += delta.component_mul(&(&v - &acc.mean));
            }
            Ok(acc)
        })
        .collect();
    let mut total: Option<Moments> = None;
    for p in parts {
        let p = p?;
        total = Some(match total {
            None => p,
            Some(t) => t.merge(p),
        });
    }
    let total = total.expect("at least one chunk");
    let n = total.count;
    let std_error = total.m2.map(|m2| (m2 / (n - 1.0) / n).sqrt());
    Ok(McVector {
        mean: total.mean,
        std_error,
        draws,
    })
}

/// Monte Carlo estimate of `B = E[⟨φ, ψ⟩ + ½ ψᵀMψ]` under `sampler`.
pub fn monte_carlo_bias_term<M, S>(
    model: &M,
    sampler: S,
    theory: &TheoryContext,
    draws: usize,
    seed: u64,
) -> Result<McEstimate>
where
    M: ZModel,
    S: Fn(&mut StreamRng) -> M::Record + Sync,
{
    let v = monte_carlo_average(draws, seed, 1, |rng| {
        let r = sampler(rng);
        Ok(DVector::from_element(1, theory.bias_integrand(model, &r)))
    })?;
    Ok(v.component(0))
}

fn functional_hessian<M: ZModel>(model: &M, theta: &DVector<f64>) -> DMatrix<f64> {
    let f = model.functional();
    if let Some(h) = f.hessian(theta) {
        return h;
    }
    let d = theta.len();
    let mut out = DMatrix::zeros(d, d);
    let mut probe = theta.clone();
    for j in 0..d {
        let s = 1e-5 * theta[j].abs().max(1.0);
        probe[j] = theta[j] + s;
        let plus = f.gradient(&probe);
        probe[j] = theta[j] - s;
        let minus = f.gradient(&probe);
        probe[j] = theta[j];
        out.set_column(j, &((plus - minus) / (2.0 * s)));
    }
    (&out + out.transpose()) * 0.5
}

/// Theory quantities for models without closed forms, estimated from `draws`
/// sampled records at `θ*`: `J` and `M` are sample averages, `ν² = E[(ηᵀh)²]`
/// and `B` comes from [`monte_carlo_bias_term`] on fresh draws.
pub fn estimate_theory<M, S>(
    model: &M,
    theta_star: &DVector<f64>,
    sampler: S,
    draws: usize,
    seed: u64,
) -> Result<TheoryContext>
where
    M: ZModel,
    S: Fn(&mut StreamRng) -> M::Record + Sync,
{
    let d = model.dim();
    if theta_star.len() != d {
        return Err(Error::DimensionMismatch {
            what: "theta_star",
            expected: d,
            got: theta_star.len(),
        });
    }
    let jac = monte_carlo_average(draws, derive_seed(seed, &[0]), d * d, |rng| {
        let r = sampler(rng);
        Ok(DVector::from_column_slice(
            model.moment_jacobian(&r, theta_star).as_slice(),
        ))
    })?;
    let j = DMatrix::from_column_slice(d, d, jac.mean.as_slice());
    let j_inv = j
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::RankDeficient {
            what: "population jacobian",
            condition_number: linalg::condition_number(&j),
        })?;
    let grad = model.functional().gradient(theta_star);
    let eta = -(&j_inv * grad);

    let second = monte_carlo_average(draws, derive_seed(seed, &[1]), d * d + 1, |rng| {
        let r = sampler(rng);
        let mut ch = DMatrix::zeros(d, d);
        model.add_contracted_hessian(&r, theta_star, &eta, 1.0, &mut ch);
        let mut v = DVector::zeros(d * d + 1);
        v.rows_mut(0, d * d).copy_from_slice(ch.as_slice());
        v[d * d] = eta.dot(&model.moment(&r, theta_star)).powi(2);
        Ok(v)
    })?;
    let avg_ch = DMatrix::from_column_slice(d, d, &second.mean.as_slice()[..d * d]);
    let m = functional_hessian(model, theta_star) - avg_ch;
    let mut theory = TheoryContext {
        theta_star: theta_star.clone(),
        j,
        j_inv,
        eta,
        m,
        nu_sq: second.mean[d * d],
        bias: 0.0,
        exact: false,
    };
    theory.bias =
        monte_carlo_bias_term(model, sampler, &theory, draws, derive_seed(seed, &[2]))?.mean;
    Ok(theory)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{LinearModel, LinearRecord, Score};
    use crate::zcore::Functional;
    use nalgebra::dvector;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn gaussian_ols_examples() {
        let d = 20;
        let theta = DVector::from_element(d, 1.0 / (d as f64).sqrt());
        let t = gaussian_ols_theory(
            &theta,
            &DMatrix::identity(d, d),
            1.0,
            QuadraticConvention::Full,
        )
        .unwrap();
        assert!((t.bias - 20.0).abs() < 1e-12);
        assert!((t.nu_sq - 4.0).abs() < 1e-12);
        let resid = -(&t.j_inv * (2.0 * &theta)) - &t.eta;
        assert!(resid.norm() < 1e-10);

        let t = gaussian_ols_theory(
            &theta,
            &DMatrix::zeros(d, d),
            1.0,
            QuadraticConvention::Full,
        )
        .unwrap();
        assert_eq!((t.bias, t.nu_sq), (0.0, 0.0));

        let t = gaussian_ols_theory(
            &DVector::zeros(4),
            &DMatrix::identity(4, 4),
            2.0,
            QuadraticConvention::Full,
        )
        .unwrap();
        assert!((t.bias - 16.0).abs() < 1e-12);
        assert_eq!(t.nu_sq, 0.0);

        let t = gaussian_ols_theory(
            &theta,
            &DMatrix::identity(d, d),
            1.0,
            QuadraticConvention::Half,
        )
        .unwrap();
        assert!((t.bias - 10.0).abs() < 1e-12 && (t.nu_sq - 1.0).abs() < 1e-12);
    }

    #[test]
    fn exact_bias_examples() {
        let b = exact_plugin_bias_gaussian(
            400,
            20,
            1.0,
            &DMatrix::identity(20, 20),
            QuadraticConvention::Full,
        )
        .unwrap();
        assert!((b - 20.0 / 379.0).abs() < 1e-15);
        assert_eq!(
            exact_plugin_bias_gaussian(
                10,
                0,
                1.0,
                &DMatrix::zeros(0, 0),
                QuadraticConvention::Full
            )
            .unwrap(),
            0.0
        );
        let b = exact_plugin_bias_gaussian(
            4,
            1,
            1.0,
            &DMatrix::identity(1, 1),
            QuadraticConvention::Full,
        )
        .unwrap();
        assert!((b - 0.5).abs() < 1e-15);
        assert!(exact_plugin_bias_gaussian(
            3,
            2,
            1.0,
            &DMatrix::identity(2, 2),
            QuadraticConvention::Full
        )
        .is_err());
    }

    #[test]
    fn point_mass_without_noise_has_no_bias() {
        let model = LinearModel::ols_quadratic(DMatrix::identity(2, 2)).unwrap();
        let theta = dvector![0.6, 0.8];
        let t = gaussian_ols_theory(
            &theta,
            &DMatrix::identity(2, 2),
            0.0,
            QuadraticConvention::Full,
        )
        .unwrap();
        let x = dvector![1.0, -2.0];
        let y = x.dot(&theta);
        let est = monte_carlo_bias_term(&model, |_| LinearRecord::new(x.clone(), y), &t, 1000, 5)
            .unwrap();
        assert_eq!(est.mean, 0.0);
    }

    #[test]
    fn monte_carlo_is_thread_count_independent() {
        let f = |rng: &mut StreamRng| -> Result<DVector<f64>> {
            let z: f64 = StandardNormal.sample(rng);
            Ok(dvector![z, z * z])
        };
        let a = monte_carlo_average(10_000, 9, 2, f).unwrap();
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(3)
            .build()
            .unwrap();
        let b = pool.install(|| monte_carlo_average(10_000, 9, 2, f).unwrap());
        assert_eq!(a, b);
        assert!(a.component(0).brackets(0.0, 4.0));
        assert!(a.component(1).brackets(1.0, 4.0));
    }

    #[test]
    fn estimated_theory_matches_closed_form_for_ols() {
        let d = 3;
        let theta = DVector::from_element(d, 1.0 / (d as f64).sqrt());
        let model = LinearModel::new(d, Score::Identity, Functional::squared_norm(d)).unwrap();
        let sampler = |rng: &mut StreamRng| {
            let x = DVector::from_fn(d, |_, _| StandardNormal.sample(rng));
            let e: f64 = StandardNormal.sample(rng);
            LinearRecord::new(x.clone(), x.dot(&theta) + e)
        };
        let t = estimate_theory(&model, &theta, sampler, 200_000, 11).unwrap();
        assert!(!t.exact);
        assert!((&t.j + DMatrix::identity(d, d)).abs().max() < 0.02);
        assert!((t.nu_sq - 4.0).abs() < 0.15, "{}", t.nu_sq);
        assert!((t.bias - 3.0).abs() < 0.15, "{}", t.bias);
    }
}
