//! Adaptive control of the model lifelength `g_m`: surrogate error measures
//! (Kendall, ranking difference, Kullback-Leibler) and the mapping from a
//! smoothed error to the number of model-evaluated generations.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;
use std::sync::{Mutex, OnceLock};

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::cma::{CmaConstants, CmaState};
use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ErrorType {
    Kendall,
    RankDifference,
    KullbackLeibler,
}

impl ErrorType {
    pub fn as_str(&self) -> &'static str {
        match self {
            ErrorType::Kendall => "kendall",
            ErrorType::RankDifference => "rd",
            ErrorType::KullbackLeibler => "kl",
        }
    }
}

impl fmt::Display for ErrorType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ErrorType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "kendall" => Ok(ErrorType::Kendall),
            "rd" | "rde" | "rank-difference" => Ok(ErrorType::RankDifference),
            "kl" | "kullback-leibler" => Ok(ErrorType::KullbackLeibler),
            other => invalid(format!("unknown error type `{other}`")),
        }
    }
}

/// Transfer function γ mapping the complemented error into `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Transfer {
    /// `T1(x) = x`
    Identity,
    /// `T2(x; k)`, a sigmoid with steepness `k > 0`.
    Sigmoid { k: f64 },
}

/// Default sigmoid steepness.
pub const DEFAULT_STEEPNESS: f64 = 1.0;

impl Transfer {
    pub fn apply(&self, x: f64) -> f64 {
        match *self {
            Transfer::Identity => x,
            Transfer::Sigmoid { k } => {
                let c = x - 0.5;
                let v = c * (1.0 + 1.0 / k) / ((2.0 * c).abs() + 1.0 / k) + 0.5;
                v.clamp(0.0, 1.0)
            }
        }
    }
}

pub fn transfer(x: f64, gamma: Transfer) -> f64 {
    gamma.apply(x)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdaptiveConfig {
    pub error_type: ErrorType,
    /// Threshold ε_T at which the smoothed error is truncated to 1.
    pub eps_threshold: f64,
    pub transfer: Transfer,
    /// Exponential smoothing rate r_u.
    pub update_rate: f64,
    pub gm_max: usize,
}

impl AdaptiveConfig {
    /// ADA-Kendall: T2, ε_T = 0.5, r_u = 0.2, g_m^max = 5.
    pub fn ada_kendall() -> Self {
        Self {
            error_type: ErrorType::Kendall,
            eps_threshold: 0.5,
            transfer: Transfer::Sigmoid {
                k: DEFAULT_STEEPNESS,
            },
            update_rate: 0.2,
            gm_max: 5,
        }
    }

    /// ADA-RD: T1, ε_T = 0.5, r_u = 0.2, g_m^max = 5.
    pub fn ada_rd() -> Self {
        Self {
            error_type: ErrorType::RankDifference,
            transfer: Transfer::Identity,
            ..Self::ada_kendall()
        }
    }

    /// ADA-KL: T2, ε_T = 0.9, r_u = 0.5, g_m^max = 5.
    pub fn ada_kl() -> Self {
        Self {
            error_type: ErrorType::KullbackLeibler,
            eps_threshold: 0.9,
            transfer: Transfer::Sigmoid {
                k: DEFAULT_STEEPNESS,
            },
            update_rate: 0.5,
            gm_max: 5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eps_threshold > 0.0 && self.eps_threshold <= 1.0) {
            return invalid(format!("eps_T = {} outside (0, 1]", self.eps_threshold));
        }
        if !(self.update_rate > 0.0 && self.update_rate <= 1.0) {
            return invalid(format!("r_u = {} outside (0, 1]", self.update_rate));
        }
        if self.gm_max < 1 {
            return invalid("g_m^max must be at least 1");
        }
        if let Transfer::Sigmoid { k } = self.transfer {
            if !(k > 0.0) || !k.is_finite() {
                return invalid(format!("sigmoid steepness {k} must be positive"));
            }
        }
        Ok(())
    }
}

/// Per-run error bookkeeping.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct AdaptiveState {
    /// Smoothed error from the previous update, in `[0, 1]`.
    pub eps_last: f64,
    /// Largest raw KL divergence seen so far.
    pub eps_max: f64,
}

/// `ε = (1 - τ)/2` with Kendall's τ-a; tied pairs count as neither
/// concordant nor discordant.
pub fn kendall_error(y: &[f64], y_hat: &[f64]) -> Result<f64> {
    let n = y.len();
    if n != y_hat.len() {
        return invalid("vectors differ in length");
    }
    if n < 2 {
        return invalid("Kendall error needs at least two values");
    }
    let mut balance: i64 = 0;
    for i in 0..n {
        for j in (i + 1)..n {
            let a = y[i].partial_cmp(&y[j]);
            let b = y_hat[i].partial_cmp(&y_hat[j]);
            match (a, b) {
                (Some(a), Some(b)) if a.is_ne() && b.is_ne() => {
                    balance += if a == b { 1 } else { -1 };
                }
                _ => {}
            }
        }
    }
    let tau = 2.0 * balance as f64 / (n as f64 * (n as f64 - 1.0));
    Ok((0.5 * (1.0 - tau)).clamp(0.0, 1.0))
}

/// 1-based ordinal ranks (ascending), ties broken by index.
pub fn ordinal_ranks(values: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0; values.len()];
    for (r, &i) in order.iter().enumerate() {
        ranks[i] = r + 1;
    }
    ranks
}

/// Ranking difference error of the `mu` best predicted points.
pub fn rde_error(y_hat: &[f64], y: &[f64], mu: usize) -> Result<f64> {
    let lambda = y.len();
    if y_hat.len() != lambda {
        return invalid("vectors differ in length");
    }
    if mu < 1 || mu > lambda {
        return invalid(format!("mu = {mu} outside 1..={lambda}"));
    }
    let r1 = ordinal_ranks(y_hat);
    let r2 = ordinal_ranks(y);
    let numerator: usize = r1
        .iter()
        .zip(&r2)
        .filter(|(a, _)| **a <= mu)
        .map(|(a, b)| a.abs_diff(*b))
        .sum();
    let denominator = rde_max_denominator(lambda, mu)?;
    if denominator == 0 {
        // lambda == 1: the only permutation is the identity
        return Ok(0.0);
    }
    Ok((numerator as f64 / denominator as f64).clamp(0.0, 1.0))
}

/// `max_{π ∈ S_λ} Σ_{i: π(i) ≤ μ} |i - π(i)|`, solved as a maximum-weight
/// assignment of ranks `1..=μ` to positions `1..=λ`. Results are cached.
pub fn rde_max_denominator(lambda: usize, mu: usize) -> Result<u64> {
    if mu < 1 || mu > lambda {
        return invalid(format!("mu = {mu} outside 1..={lambda}"));
    }
    static CACHE: OnceLock<Mutex<HashMap<(usize, usize), u64>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    if let Some(&v) = cache.lock().expect("cache poisoned").get(&(lambda, mu)) {
        return Ok(v);
    }
    let cost: Vec<Vec<i64>> = (1..=mu)
        .map(|rank| (1..=lambda).map(|pos| -(rank.abs_diff(pos) as i64)).collect())
        .collect();
    let value = (-min_cost_assignment(&cost)) as u64;
    cache.lock().expect("cache poisoned").insert((lambda, mu), value);
    Ok(value)
}

/// Hungarian algorithm for an `n × m` cost matrix with `n ≤ m`; returns the
/// minimal total cost of assigning every row to a distinct column.
fn min_cost_assignment(cost: &[Vec<i64>]) -> i64 {
    let n = cost.len();
    let m = cost.first().map_or(0, Vec::len);
    debug_assert!(n <= m);
    const INF: i64 = i64::MAX / 4;
    // 1-based potentials; column 0 is a virtual start
    let mut u = vec![0i64; n + 1];
    let mut v = vec![0i64; m + 1];
    let mut assigned_row = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        assigned_row[0] = i;
        let mut j0 = 0;
        let mut min_v = vec![INF; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = assigned_row[j0];
            let mut delta = INF;
            let mut j1 = 0;
            for j in 1..=m {
                if !used[j] {
                    let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                    if cur < min_v[j] {
                        min_v[j] = cur;
                        way[j] = j0;
                    }
                    if min_v[j] < delta {
                        delta = min_v[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[assigned_row[j]] += delta;
                    v[j] -= delta;
                } else {
                    min_v[j] -= delta;
                }
            }
            j0 = j1;
            if assigned_row[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            assigned_row[j0] = assigned_row[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    (1..=m)
        .filter(|&j| assigned_row[j] != 0)
        .map(|j| cost[assigned_row[j] - 1][j - 1])
        .sum()
}

/// `D_KL(N(m1, S1) ‖ N(m2, S2))` in closed form.
pub fn kl_divergence_mvn(
    m1: &DVector<f64>,
    s1: &DMatrix<f64>,
    m2: &DVector<f64>,
    s2: &DMatrix<f64>,
) -> Result<f64> {
    let k = m1.len();
    if m2.len() != k || s1.shape() != (k, k) || s2.shape() != (k, k) {
        return invalid("dimension mismatch between distributions");
    }
    if m1 == m2 && s1 == s2 {
        return Ok(0.0);
    }
    let c1 = Cholesky::new(s1.clone())
        .ok_or_else(|| Error::NumericalDegeneracy("first covariance is not PD".into()))?;
    let c2 = Cholesky::new(s2.clone())
        .ok_or_else(|| Error::NumericalDegeneracy("second covariance is not PD".into()))?;
    let log_det = |c: &Cholesky<f64, nalgebra::Dyn>| -> f64 {
        2.0 * c.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>()
    };
    let trace = c2.solve(s1).trace();
    let diff = m2 - m1;
    let quad = diff.dot(&c2.solve(&diff));
    let kl = 0.5 * (trace + log_det(&c2) - log_det(&c1) + quad - k as f64);
    if !kl.is_finite() {
        return Err(Error::NumericalDegeneracy("non-finite divergence".into()));
    }
    Ok(kl.max(0.0))
}

/// Everything the error estimators may need from the evaluated generation.
pub struct ErrorInputs<'a> {
    pub points: &'a [DVector<f64>],
    /// True fitness values.
    pub y: &'a [f64],
    /// Predictions of the previous model on the same points.
    pub y_hat: &'a [f64],
    pub constants: &'a CmaConstants,
    /// Search state of the generation, before any update.
    pub state: &'a CmaState,
}

/// Raw divergence between the distributions obtained by updating the same
/// state once with true values and once with predictions.
pub fn raw_kl_error(inputs: &ErrorInputs<'_>) -> Result<f64> {
    let true_next = inputs.state.update(inputs.constants, inputs.points, inputs.y)?;
    let model_next = inputs.state.update(inputs.constants, inputs.points, inputs.y_hat)?;
    kl_divergence_mvn(
        &model_next.mean,
        &model_next.sampling_covariance(),
        &true_next.mean,
        &true_next.sampling_covariance(),
    )
}

/// KL error normalized by the running maximum, which is updated first.
/// Degenerate covariances count as the maximal error.
pub fn kl_error(inputs: &ErrorInputs<'_>, state: &mut AdaptiveState) -> f64 {
    match raw_kl_error(inputs) {
        Ok(raw) => {
            if raw > state.eps_max {
                state.eps_max = raw;
            }
            if state.eps_max > 0.0 {
                (raw / state.eps_max).clamp(0.0, 1.0)
            } else {
                0.0
            }
        }
        Err(_) => 1.0,
    }
}

/// Dispatches to the configured error measure; the result is in `[0, 1]`.
pub fn estimate_model_error(
    error_type: ErrorType,
    inputs: &ErrorInputs<'_>,
    state: &mut AdaptiveState,
) -> Result<f64> {
    match error_type {
        ErrorType::Kendall => kendall_error(inputs.y, inputs.y_hat),
        ErrorType::RankDifference => rde_error(inputs.y_hat, inputs.y, inputs.constants.mu),
        ErrorType::KullbackLeibler => Ok(kl_error(inputs, state)),
    }
}

/// Smooths `eps` into `state.eps_last`, truncates at ε_T and scales through
/// the transfer function into `0..=g_m^max` (round half up).
pub fn update_gm(eps: f64, state: &mut AdaptiveState, config: &AdaptiveConfig) -> usize {
    let eps = eps.clamp(0.0, 1.0);
    let smoothed = ((1.0 - config.update_rate) * state.eps_last + config.update_rate * eps).clamp(0.0, 1.0);
    state.eps_last = smoothed;
    let truncated = smoothed.min(config.eps_threshold) / config.eps_threshold;
    let scaled = config.transfer.apply(1.0 - truncated) * config.gm_max as f64;
    ((scaled + 0.5).floor() as usize).min(config.gm_max)
}
