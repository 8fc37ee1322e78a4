//! CMA-ES engine: strategy constants, population sampling and the state
//! update from ranked fitness values.
//!
//! Weights and learning rates follow Hansen's CMA-ES tutorial (positive
//! recombination weights only, no active update):
//!
//! ```text
//! w'_i   = ln((λ+1)/2) - ln i,  i = 1..μ,   w = w' / Σ w'
//! μ_eff  = 1 / Σ w_i²
//! c_c    = (4 + μ_eff/n) / (n + 4 + 2μ_eff/n)
//! c_σ    = (μ_eff + 2) / (n + μ_eff + 5)
//! c_1    = 2 / ((n + 1.3)² + μ_eff)
//! c_μ    = min(1 - c_1, 2(μ_eff - 2 + 1/μ_eff) / ((n + 2)² + μ_eff))
//! d_σ    = 1 + 2 max(0, sqrt((μ_eff - 1)/(n + 1)) - 1) + c_σ
//! ```

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{invalid, Error, Result};
use crate::linalg::{cholesky_jittered, inverse_sqrt, min_eigenvalue, symmetrize};

/// Strategy parameters that stay fixed during a run.
#[derive(Debug, Clone, PartialEq)]
pub struct CmaConstants {
    pub dim: usize,
    pub lambda: usize,
    pub mu: usize,
    pub weights: Vec<f64>,
    pub mu_eff: f64,
    pub c_c: f64,
    pub c_1: f64,
    pub c_mu: f64,
    pub c_sigma: f64,
    pub d_sigma: f64,
    /// E‖N(0, I)‖
    pub chi_n: f64,
}

/// Search distribution `N(m, σ²C)` plus evolution paths.
#[derive(Debug, Clone, PartialEq)]
pub struct CmaState {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub sigma: f64,
    pub p_sigma: DVector<f64>,
    pub p_c: DVector<f64>,
    pub generation: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ValueKind {
    TrueFitness,
    ModelPrediction,
}

/// A sampled population with one value per point.
#[derive(Debug, Clone)]
pub struct Population {
    pub points: Vec<DVector<f64>>,
    pub values: Vec<f64>,
    pub value_kind: ValueKind,
}

/// Default population size `4 + ⌊3 ln D⌋`.
pub fn default_lambda(dim: usize) -> usize {
    4 + (3.0 * (dim as f64).ln()).floor() as usize
}

impl CmaConstants {
    pub fn new(dim: usize, lambda: usize) -> Result<Self> {
        if dim == 0 {
            return invalid("dimension must be positive");
        }
        if lambda < 2 {
            return invalid(format!("population size {lambda} must be at least 2"));
        }
        let n = dim as f64;
        let mu = lambda / 2;
        let raw: Vec<f64> = (1..=mu)
            .map(|i| ((lambda as f64 + 1.0) / 2.0).ln() - (i as f64).ln())
            .collect();
        let total: f64 = raw.iter().sum();
        let weights: Vec<f64> = raw.iter().map(|w| w / total).collect();
        let mu_eff = 1.0 / weights.iter().map(|w| w * w).sum::<f64>();

        let c_c = (4.0 + mu_eff / n) / (n + 4.0 + 2.0 * mu_eff / n);
        let c_sigma = (mu_eff + 2.0) / (n + mu_eff + 5.0);
        let c_1 = 2.0 / ((n + 1.3).powi(2) + mu_eff);
        let c_mu = (1.0 - c_1)
            .min(2.0 * (mu_eff - 2.0 + 1.0 / mu_eff) / ((n + 2.0).powi(2) + mu_eff))
            .max(0.0);
        let d_sigma = 1.0 + 2.0 * (((mu_eff - 1.0) / (n + 1.0)).sqrt() - 1.0).max(0.0) + c_sigma;
        let chi_n = n.sqrt() * (1.0 - 1.0 / (4.0 * n) + 1.0 / (21.0 * n * n));

        Ok(Self {
            dim,
            lambda,
            mu,
            weights,
            mu_eff,
            c_c,
            c_1,
            c_mu,
            c_sigma,
            d_sigma,
            chi_n,
        })
    }
}

/// Builds the constants and the initial state (`C = I`, zero paths).
pub fn init_cma(
    dim: usize,
    sigma0: f64,
    m0: &[f64],
    lambda_override: Option<usize>,
) -> Result<(CmaConstants, CmaState)> {
    if dim == 0 {
        return invalid("dimension must be positive");
    }
    if !(sigma0 > 0.0) || !sigma0.is_finite() {
        return invalid(format!("initial step size {sigma0} must be positive"));
    }
    if m0.len() != dim {
        return invalid(format!(
            "initial mean has {} coordinates, expected {dim}",
            m0.len()
        ));
    }
    if m0.iter().any(|v| !v.is_finite()) {
        return invalid("initial mean must be finite");
    }
    let lambda = match lambda_override {
        Some(0) => return invalid("population size override must be positive"),
        Some(l) => l,
        None => default_lambda(dim),
    };
    let constants = CmaConstants::new(dim, lambda)?;
    let state = CmaState {
        mean: DVector::from_column_slice(m0),
        cov: DMatrix::identity(dim, dim),
        sigma: sigma0,
        p_sigma: DVector::zeros(dim),
        p_c: DVector::zeros(dim),
        generation: 0,
    };
    Ok((constants, state))
}

impl CmaState {
    /// Draws `λ` points `m + σ·A·z`, `A·Aᵀ = C`, `z ~ N(0, I)`.
    ///
    /// The standard-normal draws are consumed point by point, coordinate by
    /// coordinate, so a fixed generator state yields a fixed population.
    pub fn sample_population<R: Rng + ?Sized>(
        &self,
        constants: &CmaConstants,
        rng: &mut R,
    ) -> Result<Vec<DVector<f64>>> {
        let factor = cholesky_jittered(&self.cov)?;
        let a = factor.chol.l();
        let points = (0..constants.lambda)
            .map(|_| {
                let z = DVector::from_fn(constants.dim, |_, _| rng.sample::<f64, _>(StandardNormal));
                &self.mean + (&a * z) * self.sigma
            })
            .collect();
        Ok(points)
    }

    /// One CMA-ES iteration from an evaluated population. Only the ordering
    /// of `fitness` is used; `self` is left untouched.
    pub fn update(
        &self,
        constants: &CmaConstants,
        points: &[DVector<f64>],
        fitness: &[f64],
    ) -> Result<CmaState> {
        let c = constants;
        if points.len() != c.lambda || fitness.len() != c.lambda {
            return invalid(format!(
                "expected {} points and values, got {} and {}",
                c.lambda,
                points.len(),
                fitness.len()
            ));
        }
        if fitness.iter().any(|v| v.is_nan()) {
            return invalid("fitness values contain NaN");
        }
        let n = c.dim as f64;

        let mut order: Vec<usize> = (0..c.lambda).collect();
        order.sort_by(|&a, &b| fitness[a].total_cmp(&fitness[b]));

        let steps: Vec<DVector<f64>> = order[..c.mu]
            .iter()
            .map(|&k| (&points[k] - &self.mean) / self.sigma)
            .collect();
        let mut y_w = DVector::zeros(c.dim);
        for (w, y) in c.weights.iter().zip(&steps) {
            y_w.axpy(*w, y, 1.0);
        }

        let mean = &self.mean + &y_w * self.sigma;

        let c_inv_sqrt = inverse_sqrt(&self.cov)?;
        let p_sigma = &self.p_sigma * (1.0 - c.c_sigma)
            + (&c_inv_sqrt * &y_w) * (c.c_sigma * (2.0 - c.c_sigma) * c.mu_eff).sqrt();
        let ps_norm = p_sigma.norm();
        let sigma = self.sigma * ((c.c_sigma / c.d_sigma) * (ps_norm / c.chi_n - 1.0)).exp();

        let generation = self.generation + 1;
        let decay = 1.0 - (1.0 - c.c_sigma).powi(2 * generation as i32);
        let h_sigma = ps_norm / decay.sqrt() < (1.4 + 2.0 / (n + 1.0)) * c.chi_n;
        let h = if h_sigma { 1.0 } else { 0.0 };
        let p_c = &self.p_c * (1.0 - c.c_c)
            + &y_w * (h * (c.c_c * (2.0 - c.c_c) * c.mu_eff).sqrt());

        let delta_h = (1.0 - h) * c.c_c * (2.0 - c.c_c);
        let weight_sum: f64 = c.weights.iter().sum();
        let mut cov = &self.cov * (1.0 + c.c_1 * delta_h - c.c_1 - c.c_mu * weight_sum);
        cov.ger(c.c_1, &p_c, &p_c, 1.0);
        for (w, y) in c.weights.iter().zip(&steps) {
            cov.ger(c.c_mu * w, y, y, 1.0);
        }
        symmetrize(&mut cov);
        repair_covariance(&mut cov)?;

        if !(sigma > 0.0) || !sigma.is_finite() {
            return Err(Error::NumericalDegeneracy(format!(
                "step size became {sigma}"
            )));
        }

        Ok(CmaState {
            mean,
            cov,
            sigma,
            p_sigma,
            p_c,
            generation,
        })
    }

    /// Sampling covariance `σ²C`.
    pub fn sampling_covariance(&self) -> DMatrix<f64> {
        &self.cov * (self.sigma * self.sigma)
    }
}

/// Ensures the covariance stays positive definite using the jitter policy.
fn repair_covariance(cov: &mut DMatrix<f64>) -> Result<()> {
    if cov.iter().any(|v| !v.is_finite()) {
        return Err(Error::NumericalDegeneracy(
            "covariance matrix has non-finite entries".into(),
        ));
    }
    if min_eigenvalue(cov) > 0.0 {
        return Ok(());
    }
    let factor = cholesky_jittered(cov)?;
    for i in 0..cov.nrows() {
        cov[(i, i)] += factor.jitter;
    }
    if min_eigenvalue(cov) > 0.0 {
        Ok(())
    } else {
        Err(Error::NumericalDegeneracy(
            "covariance matrix lost positive definiteness".into(),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn default_population_sizes() {
        let (c, _) = init_cma(2, 8.0 / 3.0, &[0.0, 0.0], None).unwrap();
        assert_eq!((c.lambda, c.mu), (6, 3));
        // 4 + floor(3 ln 10) = 4 + floor(6.907..) = 10
        let (c, _) = init_cma(10, 1.0, &[0.0; 10], None).unwrap();
        assert_eq!((c.lambda, c.mu), (10, 5));
        assert_eq!(default_lambda(5), 8);
    }

    #[test]
    fn one_dimensional_initial_state() {
        let (_, s) = init_cma(1, 0.3, &[2.0], None).unwrap();
        assert_eq!(s.cov, DMatrix::from_element(1, 1, 1.0));
        assert_eq!(s.p_sigma, DVector::from_element(1, 0.0));
        assert_eq!(s.generation, 0);
    }

    #[test]
    fn constants_are_consistent() {
        for dim in 1..=40 {
            let (c, _) = init_cma(dim, 1.0, &vec![0.0; dim], None).unwrap();
            let sum: f64 = c.weights.iter().sum();
            assert!((sum - 1.0).abs() < 1e-12);
            assert!(c.weights.windows(2).all(|w| w[0] >= w[1]));
            assert!(c.c_1 + c.c_mu <= 1.0);
            for r in [c.c_c, c.c_1, c.c_mu, c.c_sigma] {
                assert!(r > 0.0 && r <= 1.0, "rate {r} in dim {dim}");
            }
            assert!(c.d_sigma >= 1.0);
        }
    }

    #[test]
    fn invalid_arguments() {
        assert!(matches!(init_cma(0, 1.0, &[], None), Err(Error::InvalidArgument(_))));
        assert!(matches!(init_cma(2, 0.0, &[0.0, 0.0], None), Err(Error::InvalidArgument(_))));
        assert!(matches!(init_cma(2, -1.0, &[0.0, 0.0], None), Err(Error::InvalidArgument(_))));
        let (c, s) = init_cma(2, 1.0, &[0.0, 0.0], None).unwrap();
        let pts = vec![DVector::zeros(2); c.lambda];
        let mut vals = vec![1.0; c.lambda];
        vals[2] = f64::NAN;
        assert!(matches!(s.update(&c, &pts, &vals), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn sampling_is_deterministic() {
        let (c, s) = init_cma(3, 1.5, &[1.0, 2.0, 3.0], None).unwrap();
        let a = s.sample_population(&c, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        let b = s.sample_population(&c, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn sample_moments() {
        let (c, mut s) = init_cma(2, 1.0, &[0.0, 0.0], Some(10_000)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let pts = s.sample_population(&c, &mut rng).unwrap();
        let n = pts.len() as f64;
        for k in 0..2 {
            let mean = pts.iter().map(|p| p[k]).sum::<f64>() / n;
            assert!(mean.abs() < 5.0 / n.sqrt(), "coordinate {k} mean {mean}");
        }

        s.cov = DMatrix::from_diagonal(&DVector::from_vec(vec![4.0, 1.0]));
        let pts = s.sample_population(&c, &mut rng).unwrap();
        let mean = pts.iter().map(|p| p[0]).sum::<f64>() / n;
        let var = pts.iter().map(|p| (p[0] - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!((var - 4.0).abs() < 0.4, "variance {var}");
    }

    #[test]
    fn identical_points_keep_mean() {
        let (c, s) = init_cma(3, 2.0, &[0.5, -1.0, 3.0], None).unwrap();
        let pts = vec![s.mean.clone(); c.lambda];
        let vals: Vec<f64> = (0..c.lambda).map(|i| i as f64).collect();
        let next = s.update(&c, &pts, &vals).unwrap();
        assert_eq!(next.mean, s.mean);
        assert_eq!(next.generation, 1);
    }

    #[test]
    fn update_keeps_covariance_valid() {
        let (c, mut s) = init_cma(4, 1.0, &[1.0; 4], None).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let pts = s.sample_population(&c, &mut rng).unwrap();
            let vals: Vec<f64> = pts.iter().map(|p| p.norm_squared()).collect();
            s = s.update(&c, &pts, &vals).unwrap();
            assert!(s.sigma > 0.0);
            assert!((&s.cov - s.cov.transpose()).amax() <= 1e-10);
            assert!(min_eigenvalue(&s.cov) > 0.0);
        }
    }
}
