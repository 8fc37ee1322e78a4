//! Library results against independent reference implementations.

#![allow(clippy::needless_range_loop)]

mod common;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use ascmaes::adaptive::{kendall_error, kl_divergence_mvn, rde_error, update_gm, AdaptiveConfig, AdaptiveState};
use ascmaes::cma::init_cma;
use ascmaes::control::{mahalanobis_distance, Whitening};
use ascmaes::gp::{log_marginal_likelihood, GpHyperparams, GpModel};

use common::Mat;

fn jacobi_eigen(a: &Mat) -> (Vec<f64>, Mat) {
    let n = a.len();
    let mut a = a.clone();
    let mut v: Mat = (0..n).map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect();
    for _ in 0..100 {
        let off: f64 = (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| a[i][j] * a[i][j]).sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[k][p], a[k][q]);
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p][k], a[q][k]);
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let (vkp, vkq) = (v[k][p], v[k][q]);
                    v[k][p] = c * vkp - s * vkq;
                    v[k][q] = s * vkp + c * vkq;
                }
            }
        }
    }
    ((0..n).map(|i| a[i][i]).collect(), v)
}

fn inv_sqrt(a: &Mat) -> Mat {
    let n = a.len();
    let (w, v) = jacobi_eigen(a);
    (0..n)
        .map(|i| (0..n).map(|j| (0..n).map(|k| v[i][k] * v[j][k] / w[k].sqrt()).sum()).collect())
        .collect()
}

fn mat_vec(a: &Mat, x: &[f64]) -> Vec<f64> {
    a.iter().map(|row| row.iter().zip(x).map(|(p, q)| p * q).sum()).collect()
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Textbook CMA-ES on plain vectors.
struct Reference {
    n: usize,
    lambda: usize,
    mu: usize,
    w: Vec<f64>,
    mu_eff: f64,
    cc: f64,
    cs: f64,
    c1: f64,
    cmu: f64,
    ds: f64,
    chi: f64,
    m: Vec<f64>,
    sigma: f64,
    c: Mat,
    ps: Vec<f64>,
    pc: Vec<f64>,
    g: usize,
}

impl Reference {
    fn new(m0: &[f64], sigma: f64) -> Self {
        let n = m0.len();
        let nf = n as f64;
        let lambda = 4 + (3.0 * nf.ln()) as usize;
        let mu = lambda / 2;
        let raw: Vec<f64> = (1..=mu).map(|i| ((lambda as f64 + 1.0) / 2.0).ln() - (i as f64).ln()).collect();
        let s: f64 = raw.iter().sum();
        let w: Vec<f64> = raw.iter().map(|v| v / s).collect();
        let mu_eff = 1.0 / w.iter().map(|v| v * v).sum::<f64>();
        let c1 = 2.0 / ((nf + 1.3).powi(2) + mu_eff);
        let cs = (mu_eff + 2.0) / (nf + mu_eff + 5.0);
        Self {
            n,
            lambda,
            mu,
            cc: (4.0 + mu_eff / nf) / (nf + 4.0 + 2.0 * mu_eff / nf),
            cs,
            c1,
            cmu: (1.0 - c1).min(2.0 * (mu_eff - 2.0 + 1.0 / mu_eff) / ((nf + 2.0).powi(2) + mu_eff)),
            ds: 1.0 + 2.0 * (((mu_eff - 1.0) / (nf + 1.0)).sqrt() - 1.0).max(0.0) + cs,
            chi: nf.sqrt() * (1.0 - 1.0 / (4.0 * nf) + 1.0 / (21.0 * nf * nf)),
            w,
            mu_eff,
            m: m0.to_vec(),
            sigma,
            c: (0..n).map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect(),
            ps: vec![0.0; n],
            pc: vec![0.0; n],
            g: 0,
        }
    }

    fn step<R: Rng>(&mut self, rng: &mut R, f: impl Fn(&[f64]) -> f64) {
        let n = self.n;
        let l = common::cholesky(&self.c);
        let xs: Vec<Vec<f64>> = (0..self.lambda)
            .map(|_| {
                let z: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
                (0..n).map(|i| self.m[i] + self.sigma * (0..=i).map(|j| l[i][j] * z[j]).sum::<f64>()).collect()
            })
            .collect();
        let fx: Vec<f64> = xs.iter().map(|x| f(x)).collect();
        let mut idx: Vec<usize> = (0..self.lambda).collect();
        idx.sort_by(|&a, &b| fx[a].partial_cmp(&fx[b]).unwrap());
        let ys: Vec<Vec<f64>> = idx[..self.mu]
            .iter()
            .map(|&k| (0..n).map(|i| (xs[k][i] - self.m[i]) / self.sigma).collect())
            .collect();
        let yw: Vec<f64> = (0..n).map(|i| (0..self.mu).map(|k| self.w[k] * ys[k][i]).sum()).collect();
        for i in 0..n {
            self.m[i] += self.sigma * yw[i];
        }
        let ci = inv_sqrt(&self.c);
        let cy = mat_vec(&ci, &yw);
        let a = (self.cs * (2.0 - self.cs) * self.mu_eff).sqrt();
        for i in 0..n {
            self.ps[i] = (1.0 - self.cs) * self.ps[i] + a * cy[i];
        }
        let psn = norm(&self.ps);
        self.sigma *= ((self.cs / self.ds) * (psn / self.chi - 1.0)).exp();
        self.g += 1;
        let hs = psn / (1.0 - (1.0 - self.cs).powi(2 * self.g as i32)).sqrt() < (1.4 + 2.0 / (n as f64 + 1.0)) * self.chi;
        let h = if hs { 1.0 } else { 0.0 };
        let b = (self.cc * (2.0 - self.cc) * self.mu_eff).sqrt();
        for i in 0..n {
            self.pc[i] = (1.0 - self.cc) * self.pc[i] + h * b * yw[i];
        }
        let dh = (1.0 - h) * self.cc * (2.0 - self.cc);
        for i in 0..n {
            for j in 0..n {
                let rank_mu: f64 = (0..self.mu).map(|k| self.w[k] * ys[k][i] * ys[k][j]).sum();
                self.c[i][j] = (1.0 - self.c1 - self.cmu) * self.c[i][j]
                    + self.c1 * (self.pc[i] * self.pc[j] + dh * self.c[i][j])
                    + self.cmu * rank_mu;
            }
        }
    }
}

#[test]
fn cma_matches_reference_for_fifty_iterations() {
    let sphere = |x: &[f64]| x.iter().map(|v| v * v).sum::<f64>();
    let m0 = [1.5, -2.0];
    let mut reference = Reference::new(&m0, 8.0 / 3.0);
    let (c, mut state) = init_cma(2, 8.0 / 3.0, &m0, None).unwrap();
    let mut r1 = ChaCha8Rng::seed_from_u64(17);
    let mut r2 = ChaCha8Rng::seed_from_u64(17);
    for it in 0..50 {
        reference.step(&mut r1, sphere);
        let pts = state.sample_population(&c, &mut r2).unwrap();
        let f: Vec<f64> = pts.iter().map(|p| sphere(p.as_slice())).collect();
        state = state.update(&c, &pts, &f).unwrap();
        for i in 0..2 {
            assert!((state.mean[i] - reference.m[i]).abs() < 1e-8, "mean at iteration {it}");
            assert!((state.p_sigma[i] - reference.ps[i]).abs() < 1e-8);
            assert!((state.p_c[i] - reference.pc[i]).abs() < 1e-8);
            for j in 0..2 {
                assert!((state.cov[(i, j)] - reference.c[i][j]).abs() < 1e-8, "cov at iteration {it}");
            }
        }
        assert!((state.sigma - reference.sigma).abs() < 1e-8 * reference.sigma.max(1.0));
    }
}

#[test]
fn first_update_from_hand_trace() {
    // λ = 6, μ = 3 in 2-D: the best three points define the new mean
    let (c, state) = init_cma(2, 1.0, &[0.0, 0.0], None).unwrap();
    let pts: Vec<DVector<f64>> = (0..6).map(|i| DVector::from_vec(vec![i as f64, -(i as f64)])).collect();
    let f: Vec<f64> = (0..6).map(|i| i as f64).collect();
    let next = state.update(&c, &pts, &f).unwrap();
    let expected: f64 = c.weights.iter().enumerate().map(|(i, w)| w * i as f64).sum();
    assert!((next.mean[0] - expected).abs() < 1e-15);
    assert!((next.mean[1] + expected).abs() < 1e-15);
}

fn random_data<R: Rng>(n: usize, dim: usize, rng: &mut R) -> (Vec<DVector<f64>>, Vec<f64>) {
    let xs: Vec<DVector<f64>> = (0..n).map(|_| DVector::from_fn(dim, |_, _| rng.random_range(-2.0..2.0))).collect();
    let ys = xs.iter().map(|x| x.iter().map(|v| v.sin()).sum::<f64>() + rng.random_range(-0.1..0.1)).collect();
    (xs, ys)
}

fn matern(a: &DVector<f64>, b: &DVector<f64>, h: &GpHyperparams) -> f64 {
    let r = 5f64.sqrt() * (a - b).norm() / h.length;
    h.signal * (1.0 + r + r * r / 3.0) * (-r).exp()
}

#[test]
fn gp_mean_matches_dense_solve() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..10 {
        let (xs, ys) = random_data(12, 3, &mut rng);
        let h = GpHyperparams { signal: 0.8, length: 1.3, noise_var: 1e-3 };
        let gp = GpModel::fit(&xs, &ys, h).unwrap();
        let n = ys.len() as f64;
        let mean = ys.iter().sum::<f64>() / n;
        let sd = (ys.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        let z: Vec<f64> = ys.iter().map(|y| (y - mean) / sd).collect();
        let k: Mat = xs
            .iter()
            .enumerate()
            .map(|(i, a)| xs.iter().enumerate().map(|(j, b)| matern(a, b, &h) + if i == j { h.noise_var } else { 0.0 }).collect())
            .collect();
        let alpha = common::dense_solve(&k, &z);
        for _ in 0..5 {
            let x = DVector::from_fn(3, |_, _| rng.random_range(-2.0..2.0));
            let ks: Vec<f64> = xs.iter().map(|a| matern(a, &x, &h)).collect();
            let want = mean + sd * ks.iter().zip(&alpha).map(|(p, q)| p * q).sum::<f64>();
            let v = common::dense_solve(&k, &ks);
            let want_var = sd * sd * (h.signal - ks.iter().zip(&v).map(|(p, q)| p * q).sum::<f64>()).max(0.0);
            let (got, got_var) = gp.predict(&x);
            assert!((got - want).abs() < 1e-9 * want.abs().max(1.0), "{got} vs {want}");
            assert!((got_var - want_var).abs() < 1e-9);
        }
    }
}

#[test]
fn log_marginal_likelihood_matches_dense_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..10 {
        let (xs, ys) = random_data(10, 2, &mut rng);
        let h = GpHyperparams { signal: 1.2, length: 0.9, noise_var: 0.05 };
        let k: Mat = xs
            .iter()
            .enumerate()
            .map(|(i, a)| xs.iter().enumerate().map(|(j, b)| matern(a, b, &h) + if i == j { h.noise_var } else { 0.0 }).collect())
            .collect();
        let alpha = common::dense_solve(&k, &ys);
        let l = common::cholesky(&k);
        let log_det: f64 = 2.0 * (0..l.len()).map(|i| l[i][i].ln()).sum::<f64>();
        let n = ys.len() as f64;
        let want = -0.5 * ys.iter().zip(&alpha).map(|(p, q)| p * q).sum::<f64>() - 0.5 * log_det
            - 0.5 * n * (2.0 * std::f64::consts::PI).ln();
        let got = log_marginal_likelihood(&xs, &ys, &h).unwrap();
        assert!((got - want).abs() < 1e-9 * want.abs().max(1.0), "{got} vs {want}");
    }
}

#[test]
fn mahalanobis_matches_dense_solve() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..50 {
        let k = rng.random_range(1..=5);
        let s = common::random_spd(k, &mut rng);
        let sigma = rng.random_range(0.1..3.0);
        let cov = DMatrix::from_fn(k, k, |i, j| s[i][j]);
        let m = DVector::from_fn(k, |_, _| rng.random_range(-1.0..1.0));
        let x = DVector::from_fn(k, |_, _| rng.random_range(-3.0..3.0));
        let diff: Vec<f64> = (&x - &m).iter().copied().collect();
        let scaled: Mat = s.iter().map(|r| r.iter().map(|v| v * sigma * sigma).collect()).collect();
        let sol = common::dense_solve(&scaled, &diff);
        let want = diff.iter().zip(&sol).map(|(p, q)| p * q).sum::<f64>().sqrt();
        let got = mahalanobis_distance(&x, &m, sigma, &cov).unwrap();
        assert!((got - want).abs() < 1e-10 * want.max(1.0));
        let w = Whitening::new(&m, sigma, &cov).unwrap();
        assert!((w.apply(&x).norm() - want).abs() < 1e-10 * want.max(1.0));
    }
}

#[test]
fn rde_and_kendall_match_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..300 {
        let lambda = rng.random_range(2..=7);
        let mu = rng.random_range(1..=lambda);
        let y: Vec<f64> = (0..lambda).map(|_| rng.random_range(0..5) as f64).collect();
        let y_hat: Vec<f64> = (0..lambda).map(|_| rng.random_range(-1.0..1.0)).collect();
        assert_eq!(rde_error(&y_hat, &y, mu).unwrap(), common::rde_brute(&y_hat, &y, mu));
        assert_eq!(kendall_error(&y, &y_hat).unwrap(), common::kendall_pairs(&y, &y_hat));
    }
}

#[test]
fn kl_matches_numeric_integration_in_one_dimension() {
    let cases = [(0.0, 1.0, 1.0, 2.0), (-1.0, 0.3, 0.5, 1.7), (2.0, 4.0, -1.0, 0.5)];
    for (m1, v1, m2, v2) in cases {
        let p = |x: f64| (-(x - m1).powi(2) / (2.0 * v1)).exp() / (2.0 * std::f64::consts::PI * v1).sqrt();
        let q = |x: f64| (-(x - m2).powi(2) / (2.0 * v2)).exp() / (2.0 * std::f64::consts::PI * v2).sqrt();
        let (lo, hi, steps) = (m1 - 12.0 * v1.sqrt(), m1 + 12.0 * v1.sqrt(), 200_000);
        let h = (hi - lo) / steps as f64;
        let integral: f64 = (0..steps)
            .map(|i| {
                let x = lo + (i as f64 + 0.5) * h;
                p(x) * (p(x) / q(x)).ln() * h
            })
            .sum();
        let got = kl_divergence_mvn(
            &DVector::from_element(1, m1),
            &DMatrix::from_element(1, 1, v1),
            &DVector::from_element(1, m2),
            &DMatrix::from_element(1, 1, v2),
        )
        .unwrap();
        assert!((got - integral).abs() < 1e-7, "{got} vs {integral}");
    }
}

#[test]
fn kl_matches_monte_carlo() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for k in 1..=3 {
        let s1 = common::random_spd(k, &mut rng);
        let s2 = common::random_spd(k, &mut rng);
        let m1 = vec![0.2; k];
        let m2 = vec![-0.4; k];
        let mc = common::kl_monte_carlo(&m1, &s1, &m2, &s2, 200_000, &mut rng);
        let got = kl_divergence_mvn(
            &DVector::from_vec(m1),
            &DMatrix::from_fn(k, k, |i, j| s1[i][j]),
            &DVector::from_vec(m2),
            &DMatrix::from_fn(k, k, |i, j| s2[i][j]),
        )
        .unwrap();
        assert!((got - mc).abs() < 0.03 * got, "{got} vs {mc}");
    }
}

#[test]
fn lifelength_update_step_by_step() {
    // ε = 0.3, ε_last = 0.6, r_u = 0.5 → ε' = 0.45; ε_T = 0.9 → ε'' = 0.5;
    // T1: 0.5 · 10 = 5
    let cfg = AdaptiveConfig {
        eps_threshold: 0.9,
        transfer: ascmaes::adaptive::Transfer::Identity,
        update_rate: 0.5,
        gm_max: 10,
        ..AdaptiveConfig::ada_rd()
    };
    let mut st = AdaptiveState { eps_last: 0.6, eps_max: 0.0 };
    assert_eq!(update_gm(0.3, &mut st, &cfg), 5);
    assert!((st.eps_last - 0.45).abs() < 1e-15);
    // T2 with k = 1 at 0.25 is 1/6; g_m^max = 6 → exactly 1
    let cfg = AdaptiveConfig { gm_max: 6, ..AdaptiveConfig::ada_kendall() };
    let mut st = AdaptiveState { eps_last: 0.375, eps_max: 0.0 };
    // ε' = 0.8·0.375 + 0.2·0.375 = 0.375, ε'' = 0.75, 1 - ε'' = 0.25
    assert_eq!(update_gm(0.375, &mut st, &cfg), 1);
}
