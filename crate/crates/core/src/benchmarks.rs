//! Seeded, rotated and shifted test functions.
//!
//! Every instance evaluates `f_base(R (x - x_shift)) + f_shift` with a random
//! orthogonal `R`, `x_shift ∈ [-4, 4]^D` and `f_shift ∈ [-100, 100]`.
//!
//! | id                 | group           | modelled after            |
//! |--------------------|-----------------|---------------------------|
//! | `sphere`           | separable       | f1 sphere                 |
//! | `ellipsoid`        | ill-conditioned | f10 ellipsoid, cond. 1e6  |
//! | `attractive-sector`| moderate        | f6 attractive sector      |
//! | `rosenbrock`       | moderate        | f8/f9 Rosenbrock          |
//! | `rastrigin`        | multimodal      | f15 Rastrigin             |
//! | `schwefel`         | multimodal      | f20 Schwefel              |

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum FunctionId {
    Sphere,
    Ellipsoid,
    AttractiveSector,
    Rosenbrock,
    Rastrigin,
    Schwefel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum FunctionGroup {
    Separable,
    Moderate,
    IllConditioned,
    Multimodal,
}

impl FunctionGroup {
    pub const ALL: [FunctionGroup; 4] = [
        FunctionGroup::Separable,
        FunctionGroup::Moderate,
        FunctionGroup::IllConditioned,
        FunctionGroup::Multimodal,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            FunctionGroup::Separable => "separable",
            FunctionGroup::Moderate => "moderate",
            FunctionGroup::IllConditioned => "ill-conditioned",
            FunctionGroup::Multimodal => "multimodal",
        }
    }
}

impl FunctionId {
    pub const ALL: [FunctionId; 6] = [
        FunctionId::Sphere,
        FunctionId::Ellipsoid,
        FunctionId::AttractiveSector,
        FunctionId::Rosenbrock,
        FunctionId::Rastrigin,
        FunctionId::Schwefel,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            FunctionId::Sphere => "sphere",
            FunctionId::Ellipsoid => "ellipsoid",
            FunctionId::AttractiveSector => "attractive-sector",
            FunctionId::Rosenbrock => "rosenbrock",
            FunctionId::Rastrigin => "rastrigin",
            FunctionId::Schwefel => "schwefel",
        }
    }

    pub fn group(&self) -> FunctionGroup {
        match self {
            FunctionId::Sphere => FunctionGroup::Separable,
            FunctionId::Ellipsoid => FunctionGroup::IllConditioned,
            FunctionId::AttractiveSector | FunctionId::Rosenbrock => FunctionGroup::Moderate,
            FunctionId::Rastrigin | FunctionId::Schwefel => FunctionGroup::Multimodal,
        }
    }

    pub fn description(&self) -> &'static str {
        match self {
            FunctionId::Sphere => "sum of squares",
            FunctionId::Ellipsoid => "ellipsoid with condition number 1e6",
            FunctionId::AttractiveSector => "asymmetric quadratic, factor 100 on the positive side",
            FunctionId::Rosenbrock => "Rosenbrock valley, optimum at z = (1, ..., 1)",
            FunctionId::Rastrigin => "Rastrigin, 10^D local optima",
            FunctionId::Schwefel => "Schwefel sine function with boundary penalty",
        }
    }

    /// Location of the minimum of the base function.
    pub fn base_optimum(&self, dim: usize) -> DVector<f64> {
        match self {
            FunctionId::Rosenbrock => DVector::from_element(dim, 1.0),
            _ => DVector::zeros(dim),
        }
    }

    /// The untransformed function; its minimum value is exactly 0.
    pub fn base(&self, z: &DVector<f64>) -> f64 {
        let d = z.len();
        match self {
            FunctionId::Sphere => z.norm_squared(),
            FunctionId::Ellipsoid => z
                .iter()
                .enumerate()
                .map(|(i, zi)| {
                    let exponent = if d > 1 { 6.0 * i as f64 / (d - 1) as f64 } else { 0.0 };
                    10f64.powf(exponent) * zi * zi
                })
                .sum(),
            FunctionId::AttractiveSector => z
                .iter()
                .map(|&zi| if zi > 0.0 { 100.0 * zi * zi } else { zi * zi })
                .sum(),
            FunctionId::Rosenbrock => z
                .as_slice()
                .windows(2)
                .map(|w| 100.0 * (w[1] - w[0] * w[0]).powi(2) + (w[0] - 1.0).powi(2))
                .sum(),
            FunctionId::Rastrigin => {
                let tau = std::f64::consts::TAU;
                z.iter().map(|&zi| zi * zi - 10.0 * (tau * zi).cos() + 10.0).sum()
            }
            FunctionId::Schwefel => {
                let opt = schwefel_term(SCHWEFEL_ARGMIN);
                z.iter()
                    .map(|&zi| {
                        let u = SCHWEFEL_ARGMIN + SCHWEFEL_SCALE * zi;
                        let clamped = u.clamp(-500.0, 500.0);
                        let excess = u.abs() - 500.0;
                        let penalty = if excess > 0.0 { excess * excess } else { 0.0 };
                        (schwefel_term(clamped) - opt) + penalty
                    })
                    .sum()
            }
        }
    }
}

const SCHWEFEL_ARGMIN: f64 = 420.968_746_227_503_1;
const SCHWEFEL_SCALE: f64 = 100.0;

fn schwefel_term(u: f64) -> f64 {
    -u * u.abs().sqrt().sin()
}

impl fmt::Display for FunctionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FunctionId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        FunctionId::ALL
            .iter()
            .copied()
            .find(|f| f.name() == s)
            .map_or_else(|| invalid(format!("unknown function `{s}`")), Ok)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkInstance {
    pub function: FunctionId,
    pub dim: usize,
    pub rotation: DMatrix<f64>,
    pub x_shift: DVector<f64>,
    pub f_shift: f64,
    pub instance_seed: u64,
}

/// Seed of the instance generator for `(function, dim, instance_seed)`.
fn instance_rng_seed(function: FunctionId, dim: usize, instance_seed: u64) -> u64 {
    let mut h = crate::harness::StableHasher::new();
    h.write_str("instance");
    h.write_str(function.name());
    h.write_u64(dim as u64);
    h.write_u64(instance_seed);
    h.finish()
}

/// Orthogonal matrix from the QR decomposition of a Gaussian matrix, with
/// column signs fixed so that `diag(R) > 0`.
pub fn random_rotation<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> DMatrix<f64> {
    let g = DMatrix::from_fn(dim, dim, |_, _| rng.sample::<f64, _>(StandardNormal));
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..dim {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

pub fn make_instance(function: FunctionId, dim: usize, instance_seed: u64) -> Result<BenchmarkInstance> {
    if dim < 2 {
        return invalid(format!("dimension {dim} < 2"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(instance_rng_seed(function, dim, instance_seed));
    let rotation = random_rotation(dim, &mut rng);
    let x_shift = DVector::from_fn(dim, |_, _| rng.random_range(-4.0..=4.0));
    let f_shift = rng.random_range(-100.0..=100.0);
    Ok(BenchmarkInstance {
        function,
        dim,
        rotation,
        x_shift,
        f_shift,
        instance_seed,
    })
}

impl BenchmarkInstance {
    /// `R (x - x_shift)`
    pub fn transform(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.rotation * (x - &self.x_shift)
    }

    pub fn evaluate(&self, x: &DVector<f64>) -> f64 {
        self.function.base(&self.transform(x)) + self.f_shift
    }

    /// Optimum location and value.
    pub fn optimum(&self) -> (DVector<f64>, f64) {
        let z = self.function.base_optimum(self.dim);
        let x = &self.x_shift + self.rotation.transpose() * z;
        (x, self.f_shift)
    }

    pub fn delta_f(&self, value: f64) -> f64 {
        value - self.f_shift
    }
}

pub fn optimum_of(instance: &BenchmarkInstance) -> (DVector<f64>, f64) {
    instance.optimum()
}
