//! Gaussian-process regression with a Matérn 5/2 kernel and Gaussian noise.
//!
//! Hyperparameters are fitted by maximizing the log marginal likelihood
//! over `(ln θ, ln l, ln σ_n²)` with a box-constrained BFGS. Targets are
//! standardized before fitting and predictions are mapped back.

use nalgebra::{DMatrix, DVector};

use crate::error::{invalid, Error, Result};
use crate::linalg::cholesky_jittered;

const SQRT5: f64 = 2.236_067_977_499_79;

pub const LOG_SIGNAL_BOUNDS: (f64, f64) = (-10.0, 10.0);
pub const LOG_LENGTH_BOUNDS: (f64, f64) = (-5.0, 8.0);
pub const LOG_NOISE_BOUNDS: (f64, f64) = (-20.0, 2.0);

/// Kernel output scale θ (signal variance), length-scale l and noise
/// variance σ_n².
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GpHyperparams {
    pub signal: f64,
    pub length: f64,
    pub noise_var: f64,
}

impl Default for GpHyperparams {
    /// Starting values `(θ, l) = (0.5, 2)`, `σ_n² = 0.01`.
    fn default() -> Self {
        Self {
            signal: 0.5,
            length: 2.0,
            noise_var: 0.01,
        }
    }
}

impl GpHyperparams {
    pub fn validate(&self) -> Result<()> {
        if !(self.signal > 0.0) || !(self.length > 0.0) || !(self.noise_var >= 0.0) {
            return invalid(format!("invalid GP hyperparameters {self:?}"));
        }
        if !self.signal.is_finite() || !self.length.is_finite() || !self.noise_var.is_finite() {
            return invalid(format!("non-finite GP hyperparameters {self:?}"));
        }
        Ok(())
    }

    fn to_log(self) -> [f64; 3] {
        [
            self.signal.ln().clamp(LOG_SIGNAL_BOUNDS.0, LOG_SIGNAL_BOUNDS.1),
            self.length.ln().clamp(LOG_LENGTH_BOUNDS.0, LOG_LENGTH_BOUNDS.1),
            // ln 0 = -inf clamps to the lower bound
            self.noise_var.ln().clamp(LOG_NOISE_BOUNDS.0, LOG_NOISE_BOUNDS.1),
        ]
    }

    fn from_log(p: &[f64; 3]) -> Self {
        Self {
            signal: p[0].exp(),
            length: p[1].exp(),
            noise_var: p[2].exp(),
        }
    }
}

/// `θ (1 + √5 d/l + 5d²/(3l²)) exp(-√5 d/l)` with `d = ‖x1 - x2‖₂`.
pub fn matern52(x1: &DVector<f64>, x2: &DVector<f64>, hyper: &GpHyperparams) -> f64 {
    let d = (x1 - x2).norm();
    let r = SQRT5 * d / hyper.length;
    hyper.signal * (1.0 + r + r * r / 3.0) * (-r).exp()
}

/// Noise-free kernel matrix `K_N`.
pub fn kernel_matrix(xs: &[DVector<f64>], hyper: &GpHyperparams) -> DMatrix<f64> {
    let n = xs.len();
    let mut k = DMatrix::zeros(n, n);
    for i in 0..n {
        k[(i, i)] = hyper.signal;
        for j in 0..i {
            let v = matern52(&xs[i], &xs[j], hyper);
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    k
}

fn noisy_kernel(xs: &[DVector<f64>], hyper: &GpHyperparams) -> DMatrix<f64> {
    let mut k = kernel_matrix(xs, hyper);
    for i in 0..xs.len() {
        k[(i, i)] += hyper.noise_var;
    }
    k
}

fn check_data(xs: &[DVector<f64>], ys: &[f64]) -> Result<()> {
    if xs.is_empty() {
        return invalid("at least one training point is required");
    }
    if xs.len() != ys.len() {
        return invalid(format!("{} inputs but {} targets", xs.len(), ys.len()));
    }
    let dim = xs[0].len();
    if xs.iter().any(|x| x.len() != dim) {
        return invalid("training inputs have inconsistent dimensions");
    }
    if xs.iter().any(|x| x.iter().any(|v| !v.is_finite())) || ys.iter().any(|v| !v.is_finite()) {
        return invalid("training data must be finite");
    }
    Ok(())
}

/// `ln p(y | X, θ) = -½ yᵀ(K + σ_n²I)⁻¹y - ½ ln|K + σ_n²I| - N/2 ln 2π`.
pub fn log_marginal_likelihood(
    xs: &[DVector<f64>],
    ys: &[f64],
    hyper: &GpHyperparams,
) -> Result<f64> {
    check_data(xs, ys)?;
    hyper.validate()?;
    let factor = cholesky_jittered(&noisy_kernel(xs, hyper))?;
    let y = DVector::from_column_slice(ys);
    let alpha = factor.chol.solve(&y);
    Ok(lml_from_parts(&factor.chol.l(), &y, &alpha))
}

fn lml_from_parts(l: &DMatrix<f64>, y: &DVector<f64>, alpha: &DVector<f64>) -> f64 {
    let n = y.len() as f64;
    let log_det_half: f64 = l.diagonal().iter().map(|v| v.ln()).sum();
    -0.5 * y.dot(alpha) - log_det_half - 0.5 * n * (2.0 * std::f64::consts::PI).ln()
}

/// Log marginal likelihood and its gradient with respect to
/// `(ln θ, ln l, ln σ_n²)`.
pub fn log_marginal_likelihood_with_gradient(
    xs: &[DVector<f64>],
    ys: &[f64],
    hyper: &GpHyperparams,
) -> Result<(f64, [f64; 3])> {
    check_data(xs, ys)?;
    hyper.validate()?;
    let n = xs.len();
    let kf = kernel_matrix(xs, hyper);
    let mut k = kf.clone();
    for i in 0..n {
        k[(i, i)] += hyper.noise_var;
    }
    let factor = cholesky_jittered(&k)?;
    let y = DVector::from_column_slice(ys);
    let alpha = factor.chol.solve(&y);
    let value = lml_from_parts(&factor.chol.l(), &y, &alpha);

    // ∂/∂p = ½ tr((ααᵀ - K⁻¹) ∂K/∂p)
    let k_inv = factor.chol.inverse();
    let mut g_signal = 0.0;
    let mut g_length = 0.0;
    let mut g_noise = 0.0;
    for i in 0..n {
        for j in 0..n {
            let w = alpha[i] * alpha[j] - k_inv[(i, j)];
            g_signal += w * kf[(i, j)];
            if i != j {
                let d = (&xs[i] - &xs[j]).norm();
                let r = SQRT5 * d / hyper.length;
                // ∂k/∂ln l = θ/3 · r²(1 + r) e^{-r}
                g_length += w * hyper.signal / 3.0 * r * r * (1.0 + r) * (-r).exp();
            } else {
                g_noise += w * hyper.noise_var;
            }
        }
    }
    Ok((value, [0.5 * g_signal, 0.5 * g_length, 0.5 * g_noise]))
}

#[derive(Debug, Clone, Copy)]
pub struct TrainOptions {
    /// Optimize the noise variance; when false it stays at its initial value.
    pub fit_noise: bool,
    pub max_evaluations: usize,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            fit_noise: true,
            max_evaluations: 200,
        }
    }
}

/// Trained GP; immutable once built.
#[derive(Debug, Clone)]
pub struct GpModel {
    x_train: Vec<DVector<f64>>,
    y_train: Vec<f64>,
    hyper: GpHyperparams,
    y_offset: f64,
    y_scale: f64,
    chol: DMatrix<f64>,
    alpha: DVector<f64>,
}

fn standardization(ys: &[f64]) -> (f64, f64) {
    let n = ys.len() as f64;
    let mean = ys.iter().sum::<f64>() / n;
    if ys.len() < 2 {
        return (mean, 1.0);
    }
    let var = ys.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let sd = var.sqrt();
    if sd > 0.0 && sd.is_finite() {
        (mean, sd)
    } else {
        (mean, 1.0)
    }
}

impl GpModel {
    /// Conditions the GP on the data with fixed hyperparameters.
    pub fn fit(xs: &[DVector<f64>], ys: &[f64], hyper: GpHyperparams) -> Result<Self> {
        check_data(xs, ys)?;
        hyper.validate()?;
        let (y_offset, y_scale) = standardization(ys);
        let z = DVector::from_iterator(ys.len(), ys.iter().map(|y| (y - y_offset) / y_scale));
        let factor = cholesky_jittered(&noisy_kernel(xs, &hyper))
            .map_err(|e| Error::TrainingFailure(e.to_string()))?;
        let alpha = factor.chol.solve(&z);
        Ok(Self {
            x_train: xs.to_vec(),
            y_train: ys.to_vec(),
            hyper,
            y_offset,
            y_scale,
            chol: factor.chol.l(),
            alpha,
        })
    }

    /// Posterior mean and variance of the latent function at `x`.
    pub fn predict(&self, x: &DVector<f64>) -> (f64, f64) {
        let k_star =
            DVector::from_iterator(self.x_train.len(), self.x_train.iter().map(|xi| matern52(xi, x, &self.hyper)));
        let mean = k_star.dot(&self.alpha);
        let v = self
            .chol
            .solve_lower_triangular(&k_star)
            .unwrap_or_else(|| DVector::zeros(k_star.len()));
        let var = (self.hyper.signal - v.norm_squared()).max(0.0);
        (
            self.y_offset + self.y_scale * mean,
            var * self.y_scale * self.y_scale,
        )
    }

    pub fn predict_mean(&self, x: &DVector<f64>) -> f64 {
        self.predict(x).0
    }

    pub fn hyper(&self) -> &GpHyperparams {
        &self.hyper
    }

    pub fn training_inputs(&self) -> &[DVector<f64>] {
        &self.x_train
    }

    pub fn training_targets(&self) -> &[f64] {
        &self.y_train
    }

    /// Lower-triangular factor `L` with `L Lᵀ = K_N + σ_n²I` (plus any jitter).
    pub fn cholesky_factor(&self) -> &DMatrix<f64> {
        &self.chol
    }

    /// Target standardization `(offset, scale)`.
    pub fn standardization(&self) -> (f64, f64) {
        (self.y_offset, self.y_scale)
    }
}

/// Maximum-likelihood training starting from `init`.
pub fn train_gp(
    xs: &[DVector<f64>],
    ys: &[f64],
    init: GpHyperparams,
    options: TrainOptions,
) -> Result<GpModel> {
    check_data(xs, ys).map_err(|e| Error::TrainingFailure(e.to_string()))?;
    init.validate()?;
    let (y_offset, y_scale) = standardization(ys);
    let z: Vec<f64> = ys.iter().map(|y| (y - y_offset) / y_scale).collect();

    let start = init.to_log();
    let mut lower = [LOG_SIGNAL_BOUNDS.0, LOG_LENGTH_BOUNDS.0, LOG_NOISE_BOUNDS.0];
    let mut upper = [LOG_SIGNAL_BOUNDS.1, LOG_LENGTH_BOUNDS.1, LOG_NOISE_BOUNDS.1];
    let mut fixed_noise = init.noise_var;
    if !options.fit_noise {
        lower[2] = start[2];
        upper[2] = start[2];
    } else {
        fixed_noise = f64::NAN;
    }

    let objective = |p: &[f64; 3]| -> Option<(f64, [f64; 3])> {
        let mut h = GpHyperparams::from_log(p);
        if !fixed_noise.is_nan() {
            h.noise_var = fixed_noise;
        }
        let (v, g) = log_marginal_likelihood_with_gradient(xs, &z, &h).ok()?;
        if !v.is_finite() || g.iter().any(|x| !x.is_finite()) {
            return None;
        }
        Some((-v, [-g[0], -g[1], -g[2]]))
    };

    let best = minimize_box(objective, start, lower, upper, options.max_evaluations)
        .or_else(|| {
            let fallback = GpHyperparams::default().to_log();
            minimize_box(objective, fallback, lower, upper, options.max_evaluations)
        })
        .ok_or_else(|| Error::TrainingFailure("likelihood could not be evaluated".into()))?;

    let mut hyper = GpHyperparams::from_log(&best);
    if !fixed_noise.is_nan() {
        hyper.noise_var = fixed_noise;
    }
    GpModel::fit(xs, ys, hyper)
}

fn project(x: &mut [f64; 3], lower: &[f64; 3], upper: &[f64; 3]) {
    for i in 0..3 {
        x[i] = x[i].clamp(lower[i], upper[i]);
    }
}

/// Box-constrained BFGS with projected backtracking line search. Returns the
/// best point found, or `None` if the objective fails at the start.
fn minimize_box<F>(
    mut f: F,
    x0: [f64; 3],
    lower: [f64; 3],
    upper: [f64; 3],
    max_evaluations: usize,
) -> Option<[f64; 3]>
where
    F: FnMut(&[f64; 3]) -> Option<(f64, [f64; 3])>,
{
    let mut x = x0;
    project(&mut x, &lower, &upper);
    let (mut fx, mut g) = f(&x)?;
    let mut evals = 1;
    let mut h = nalgebra::Matrix3::<f64>::identity();

    while evals < max_evaluations {
        let mut pg = g;
        for i in 0..3 {
            let at_lower = x[i] <= lower[i] && g[i] > 0.0;
            let at_upper = x[i] >= upper[i] && g[i] < 0.0;
            if at_lower || at_upper || lower[i] == upper[i] {
                pg[i] = 0.0;
            }
        }
        if pg.iter().all(|v| v.abs() < 1e-6) {
            break;
        }
        let pgv = nalgebra::Vector3::from(pg);
        let mut d = -(h * pgv);
        for i in 0..3 {
            if pg[i] == 0.0 {
                d[i] = 0.0;
            }
        }
        if d.dot(&pgv) >= 0.0 {
            h = nalgebra::Matrix3::identity();
            d = -pgv;
        }
        let max_abs = d.amax();
        let mut t = if max_abs > 3.0 { 3.0 / max_abs } else { 1.0 };

        let mut accepted = None;
        while evals < max_evaluations && t > 1e-10 {
            let mut xn = [x[0] + t * d[0], x[1] + t * d[1], x[2] + t * d[2]];
            project(&mut xn, &lower, &upper);
            evals += 1;
            if let Some((fn_, gn)) = f(&xn) {
                let decrease: f64 = (0..3).map(|i| g[i] * (xn[i] - x[i])).sum();
                if fn_ <= fx + 1e-4 * decrease {
                    accepted = Some((xn, fn_, gn));
                    break;
                }
            }
            t *= 0.5;
        }
        let Some((xn, fn_, gn)) = accepted else { break };

        let s = nalgebra::Vector3::new(xn[0] - x[0], xn[1] - x[1], xn[2] - x[2]);
        let yv = nalgebra::Vector3::new(gn[0] - g[0], gn[1] - g[1], gn[2] - g[2]);
        let sy = s.dot(&yv);
        if sy > 1e-12 {
            let rho = 1.0 / sy;
            let i3 = nalgebra::Matrix3::<f64>::identity();
            h = (i3 - s * yv.transpose() * rho) * h * (i3 - yv * s.transpose() * rho)
                + s * s.transpose() * rho;
        }
        let converged = (fx - fn_).abs() <= 1e-10 * (1.0 + fx.abs());
        x = xn;
        fx = fn_;
        g = gn;
        if converged {
            break;
        }
    }
    Some(x)
}
