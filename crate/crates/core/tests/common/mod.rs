//! Independent reference implementations shared by the integration tests.
//! Nothing here calls into the library under test.

#![allow(dead_code, clippy::needless_range_loop)]

use rand::Rng;
use rand_distr::StandardNormal;

/// Stable ascending ranks starting at 1.
pub fn stable_ranks(v: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].partial_cmp(&v[b]).unwrap());
    let mut r = vec![0; v.len()];
    for (pos, &i) in idx.iter().enumerate() {
        r[i] = pos + 1;
    }
    r
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for slot in 0..=p.len() {
            let mut q = p.clone();
            q.insert(slot, n);
            out.push(q);
        }
    }
    out
}

/// Maximum of `Σ_{i: π(i) ≤ μ} |i - π(i)|` over every permutation of `1..=λ`.
pub fn rde_denominator_brute(lambda: usize, mu: usize) -> usize {
    permutations(lambda)
        .iter()
        .map(|p| {
            p.iter()
                .enumerate()
                .filter(|(_, &r)| r <= mu)
                .map(|(i, &r)| (i + 1).abs_diff(r))
                .sum::<usize>()
        })
        .max()
        .unwrap()
}

pub fn rde_brute(y_hat: &[f64], y: &[f64], mu: usize) -> f64 {
    let r1 = stable_ranks(y_hat);
    let r2 = stable_ranks(y);
    let num: usize = (0..y.len())
        .filter(|&i| r1[i] <= mu)
        .map(|i| r1[i].abs_diff(r2[i]))
        .sum();
    let den = rde_denominator_brute(y.len(), mu);
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// `(1 - τ_a)/2` by direct pair counting.
pub fn kendall_pairs(y: &[f64], y_hat: &[f64]) -> f64 {
    let n = y.len();
    let (mut conc, mut disc) = (0i64, 0i64);
    for i in 0..n {
        for j in i + 1..n {
            let s = (y[i] - y[j]) * (y_hat[i] - y_hat[j]);
            if s > 0.0 {
                conc += 1;
            } else if s < 0.0 {
                disc += 1;
            }
        }
    }
    let pairs = (n * (n - 1) / 2) as f64;
    let tau = (conc - disc) as f64 / pairs;
    (1.0 - tau) / 2.0
}

pub type Mat = Vec<Vec<f64>>;

pub fn cholesky(a: &Mat) -> Mat {
    let n = a.len();
    let mut l = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..=i {
            let s: f64 = (0..j).map(|k| l[i][k] * l[j][k]).sum();
            if i == j {
                l[i][j] = (a[i][i] - s).sqrt();
            } else {
                l[i][j] = (a[i][j] - s) / l[j][j];
            }
        }
    }
    l
}

/// Solves `L x = b` for lower-triangular `L`.
pub fn forward(l: &Mat, b: &[f64]) -> Vec<f64> {
    let mut x = vec![0.0; b.len()];
    for i in 0..b.len() {
        let s: f64 = (0..i).map(|k| l[i][k] * x[k]).sum();
        x[i] = (b[i] - s) / l[i][i];
    }
    x
}

/// Solves `A x = b` by Gaussian elimination with partial pivoting.
pub fn dense_solve(a: &Mat, b: &[f64]) -> Vec<f64> {
    let n = b.len();
    let mut m: Mat = a.iter().zip(b).map(|(r, v)| {
        let mut row = r.clone();
        row.push(*v);
        row
    }).collect();
    for c in 0..n {
        let p = (c..n).max_by(|&i, &j| m[i][c].abs().partial_cmp(&m[j][c].abs()).unwrap()).unwrap();
        m.swap(c, p);
        for r in c + 1..n {
            let f = m[r][c] / m[c][c];
            for k in c..=n {
                m[r][k] -= f * m[c][k];
            }
        }
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let s: f64 = (i + 1..n).map(|k| m[i][k] * x[k]).sum();
        x[i] = (m[i][n] - s) / m[i][i];
    }
    x
}

/// Log-density of `N(m, S)` given the Cholesky factor of `S`.
pub fn log_density(x: &[f64], m: &[f64], l: &Mat) -> f64 {
    let d: Vec<f64> = x.iter().zip(m).map(|(a, b)| a - b).collect();
    let z = forward(l, &d);
    let log_det: f64 = (0..l.len()).map(|i| l[i][i].ln()).sum::<f64>() * 2.0;
    -0.5 * (z.iter().map(|v| v * v).sum::<f64>() + log_det + l.len() as f64 * (2.0 * std::f64::consts::PI).ln())
}

/// Monte-Carlo estimate of `E_p[ln p - ln q]`.
pub fn kl_monte_carlo<R: Rng>(m1: &[f64], s1: &Mat, m2: &[f64], s2: &Mat, samples: usize, rng: &mut R) -> f64 {
    let l1 = cholesky(s1);
    let l2 = cholesky(s2);
    let k = m1.len();
    let mut acc = 0.0;
    let mut z = vec![0.0; k];
    for _ in 0..samples {
        for v in z.iter_mut() {
            *v = rng.sample(StandardNormal);
        }
        let x: Vec<f64> = (0..k)
            .map(|i| m1[i] + (0..=i).map(|j| l1[i][j] * z[j]).sum::<f64>())
            .collect();
        acc += log_density(&x, m1, &l1) - log_density(&x, m2, &l2);
    }
    acc / samples as f64
}

/// Random symmetric positive definite matrix `A Aᵀ + δI`.
pub fn random_spd<R: Rng>(k: usize, rng: &mut R) -> Mat {
    let a: Mat = (0..k).map(|_| (0..k).map(|_| rng.sample(StandardNormal)).collect()).collect();
    (0..k)
        .map(|i| {
            (0..k)
                .map(|j| (0..k).map(|t| a[i][t] * a[j][t]).sum::<f64>() + if i == j { 0.3 } else { 0.0 })
                .collect()
        })
        .collect()
}

/// Friedman statistic from rank sums `S_j`:
/// `12/(N k (k+1)) Σ S_j² - 3N(k+1)`, then the Iman-Davenport correction.
pub fn friedman_textbook(ranks: &[Vec<f64>]) -> (f64, f64) {
    let n = ranks.len() as f64;
    let k = ranks[0].len();
    let kf = k as f64;
    let sums: Vec<f64> = (0..k).map(|j| ranks.iter().map(|r| r[j]).sum()).collect();
    let chi2 = 12.0 / (n * kf * (kf + 1.0)) * sums.iter().map(|s| s * s).sum::<f64>() - 3.0 * n * (kf + 1.0);
    let ff = (n - 1.0) * chi2 / (n * (kf - 1.0) - chi2);
    (chi2, ff)
}

/// Midranks by counting: rank = #smaller + (#equal + 1)/2.
pub fn midranks_counting(v: &[f64]) -> Vec<f64> {
    v.iter()
        .map(|x| {
            let less = v.iter().filter(|y| *y < x).count() as f64;
            let eq = v.iter().filter(|y| *y == x).count() as f64;
            less + (eq + 1.0) / 2.0
        })
        .collect()
}
