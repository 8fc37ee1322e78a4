//! Generation-based evolution control: the archive of true evaluations,
//! local training-set selection, and the switching between generations
//! evaluated by the true fitness and by the GP surrogate.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::adaptive::{estimate_model_error, update_gm, AdaptiveConfig, AdaptiveState, ErrorInputs};
use crate::cma::{CmaConstants, CmaState};
use crate::error::{invalid, Error, Result};
use crate::gp::{train_gp, GpHyperparams, GpModel, TrainOptions};
use crate::linalg::cholesky_jittered;

/// Append-only store of truly evaluated points.
#[derive(Debug, Clone, Default)]
pub struct Archive {
    points: Vec<DVector<f64>>,
    values: Vec<f64>,
}

impl Archive {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, point: DVector<f64>, value: f64) -> Result<()> {
        if value.is_nan() {
            return invalid("refusing to archive a NaN fitness");
        }
        self.points.push(point);
        self.values.push(value);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[DVector<f64>] {
        &self.points
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlConfig {
    /// Maximal Mahalanobis distance of a training point from the mean.
    pub radius: f64,
    pub n_req: usize,
    pub n_max: usize,
}

impl ControlConfig {
    /// `r = 8`, `n_req = 2λ`, `n_max = 20·D`.
    pub fn defaults(dim: usize, lambda: usize) -> Self {
        let n_max = 20 * dim;
        Self {
            radius: 8.0,
            n_req: (2 * lambda).min(n_max),
            n_max,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.radius > 0.0) {
            return invalid(format!("radius {} must be positive", self.radius));
        }
        if self.n_req < 1 || self.n_req > self.n_max {
            return invalid(format!(
                "need 1 <= n_req ({}) <= n_max ({})",
                self.n_req, self.n_max
            ));
        }
        Ok(())
    }
}

/// Affine map into the coordinates of a sampling distribution:
/// `z = L⁻¹(x - m)/σ` with `L Lᵀ = C`. The Euclidean norm of `z` is the
/// Mahalanobis distance of `x` with respect to `σ²C`.
#[derive(Debug, Clone)]
pub struct Whitening {
    mean: DVector<f64>,
    sigma: f64,
    chol: DMatrix<f64>,
}

impl Whitening {
    pub fn new(mean: &DVector<f64>, sigma: f64, cov: &DMatrix<f64>) -> Result<Self> {
        if !(sigma > 0.0) {
            return invalid("step size must be positive");
        }
        let factor = cholesky_jittered(cov)?;
        Ok(Self {
            mean: mean.clone(),
            sigma,
            chol: factor.chol.l(),
        })
    }

    pub fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        let diff = (x - &self.mean) / self.sigma;
        self.chol
            .solve_lower_triangular(&diff)
            .expect("Cholesky factor has a positive diagonal")
    }
}

/// `√((x - m)ᵀ (σ²C)⁻¹ (x - m))`.
pub fn mahalanobis_distance(
    x: &DVector<f64>,
    m: &DVector<f64>,
    sigma: f64,
    cov: &DMatrix<f64>,
) -> Result<f64> {
    Ok(Whitening::new(m, sigma, cov)?.apply(x).norm())
}

#[derive(Debug, Clone)]
pub enum TrainingSet {
    Selected {
        points: Vec<DVector<f64>>,
        values: Vec<f64>,
        /// Mahalanobis distances, ascending.
        distances: Vec<f64>,
    },
    InsufficientData,
}

/// Archive points within Mahalanobis distance `r` of the mean, nearest
/// first and at most `n_max`; widened to the `n_req` nearest overall when
/// fewer lie inside the radius.
pub fn select_training_set(
    archive: &Archive,
    m: &DVector<f64>,
    sigma: f64,
    cov: &DMatrix<f64>,
    config: &ControlConfig,
) -> Result<TrainingSet> {
    if archive.len() < config.n_req {
        return Ok(TrainingSet::InsufficientData);
    }
    let whitening = Whitening::new(m, sigma, cov)?;
    let mut ranked: Vec<(f64, usize)> = archive
        .points()
        .iter()
        .enumerate()
        .map(|(i, x)| (whitening.apply(x).norm(), i))
        .collect();
    // stable: ties keep insertion order
    ranked.sort_by(|a, b| a.0.total_cmp(&b.0));

    let inside = ranked.iter().take_while(|(d, _)| *d <= config.radius).count();
    let take = inside.clamp(config.n_req, config.n_max);
    let chosen = &ranked[..take];
    Ok(TrainingSet::Selected {
        points: chosen.iter().map(|&(_, i)| archive.points()[i].clone()).collect(),
        values: chosen.iter().map(|&(_, i)| archive.values()[i]).collect(),
        distances: chosen.iter().map(|&(d, _)| d).collect(),
    })
}

/// GP trained in the whitened coordinates of the distribution it was
/// trained under.
#[derive(Debug, Clone)]
pub struct Surrogate {
    pub gp: GpModel,
    pub whitening: Whitening,
}

impl Surrogate {
    pub fn predict(&self, x: &DVector<f64>) -> f64 {
        self.gp.predict_mean(&self.whitening.apply(x))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GenerationKind {
    Original,
    Model,
}

impl GenerationKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            GenerationKind::Original => "original",
            GenerationKind::Model => "model",
        }
    }
}

/// How the number of consecutive model generations is chosen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LifelengthPolicy {
    Fixed(usize),
    Adaptive(AdaptiveConfig),
}

/// Why an original generation was not followed by model generations.
#[derive(Debug, Clone, PartialEq)]
pub enum Fallback {
    InsufficientData,
    TrainingFailed(String),
}

#[derive(Debug, Clone)]
pub struct GenerationOutcome {
    pub kind: GenerationKind,
    pub points: Vec<DVector<f64>>,
    pub values: Vec<f64>,
    pub true_evals_used: usize,
    pub new_model: Option<Arc<Surrogate>>,
    pub fallback: Option<Fallback>,
    /// Lifelength in force after this generation.
    pub gm: usize,
    /// Model error estimated in this generation (adaptive policy only).
    pub model_error: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GenerationRecord {
    pub generation: usize,
    pub gm: usize,
    pub kind: GenerationKind,
}

/// CMA-ES with a GP surrogate replacing the fitness in whole generations.
pub struct SurrogateCmaes {
    constants: CmaConstants,
    state: CmaState,
    archive: Archive,
    config: ControlConfig,
    policy: LifelengthPolicy,
    model: Option<Arc<Surrogate>>,
    models_trained: usize,
    next_kind: GenerationKind,
    gm: usize,
    remaining: usize,
    adaptive: AdaptiveState,
    train_options: TrainOptions,
    trace: Vec<GenerationRecord>,
}

impl SurrogateCmaes {
    pub fn new(
        constants: CmaConstants,
        state: CmaState,
        config: ControlConfig,
        policy: LifelengthPolicy,
    ) -> Result<Self> {
        config.validate()?;
        let gm = match policy {
            LifelengthPolicy::Fixed(g) => g,
            LifelengthPolicy::Adaptive(a) => {
                a.validate()?;
                0
            }
        };
        Ok(Self {
            constants,
            state,
            archive: Archive::new(),
            config,
            policy,
            model: None,
            models_trained: 0,
            next_kind: GenerationKind::Original,
            gm,
            remaining: 0,
            adaptive: AdaptiveState::default(),
            train_options: TrainOptions::default(),
            trace: Vec::new(),
        })
    }

    pub fn constants(&self) -> &CmaConstants {
        &self.constants
    }

    pub fn state(&self) -> &CmaState {
        &self.state
    }

    pub fn archive(&self) -> &Archive {
        &self.archive
    }

    pub fn trace(&self) -> &[GenerationRecord] {
        &self.trace
    }

    pub fn next_kind(&self) -> GenerationKind {
        self.next_kind
    }

    pub fn gm(&self) -> usize {
        self.gm
    }

    pub fn adaptive_state(&self) -> &AdaptiveState {
        &self.adaptive
    }

    pub fn model(&self) -> Option<&Arc<Surrogate>> {
        self.model.as_ref()
    }

    /// Runs one generation. `fitness` is called exactly `λ` times in an
    /// original generation and never in a model generation.
    pub fn generation_step<R, F>(&mut self, fitness: &mut F, rng: &mut R) -> Result<GenerationOutcome>
    where
        R: Rng + ?Sized,
        F: FnMut(&DVector<f64>) -> f64,
    {
        let points = self.state.sample_population(&self.constants, rng)?;
        let generation = self.state.generation;
        let outcome = match self.next_kind {
            GenerationKind::Original => self.original_generation(points, fitness)?,
            GenerationKind::Model => self.model_generation(points)?,
        };
        self.trace.push(GenerationRecord {
            generation,
            gm: outcome.gm,
            kind: outcome.kind,
        });
        Ok(outcome)
    }

    fn original_generation<F>(&mut self, points: Vec<DVector<f64>>, fitness: &mut F) -> Result<GenerationOutcome>
    where
        F: FnMut(&DVector<f64>) -> f64,
    {
        let values: Vec<f64> = points.iter().map(&mut *fitness).collect();
        if values.iter().any(|v| v.is_nan()) {
            return invalid("fitness returned NaN");
        }
        for (p, v) in points.iter().zip(&values) {
            self.archive.push(p.clone(), *v)?;
        }

        let mut model_error = None;
        match self.policy {
            LifelengthPolicy::Fixed(g) => self.gm = g,
            LifelengthPolicy::Adaptive(cfg) => {
                if let Some(previous) = &self.model {
                    let y_hat: Vec<f64> = points.iter().map(|p| previous.predict(p)).collect();
                    let eps = if y_hat.iter().all(|v| v.is_finite()) {
                        let inputs = ErrorInputs {
                            points: &points,
                            y: &values,
                            y_hat: &y_hat,
                            constants: &self.constants,
                            state: &self.state,
                        };
                        estimate_model_error(cfg.error_type, &inputs, &mut self.adaptive)?
                    } else {
                        1.0
                    };
                    self.gm = update_gm(eps, &mut self.adaptive, &cfg);
                    model_error = Some(eps);
                }
            }
        }

        let wants_model = match self.policy {
            LifelengthPolicy::Fixed(g) => g > 0,
            LifelengthPolicy::Adaptive(_) => true,
        };
        let mut new_model = None;
        let mut fallback = None;
        if wants_model {
            match self.train_model() {
                Ok(Some(s)) => new_model = Some(s),
                Ok(None) => fallback = Some(Fallback::InsufficientData),
                Err(e) => fallback = Some(Fallback::TrainingFailed(e.to_string())),
            }
        }
        if let Some(model) = &new_model {
            if matches!(self.policy, LifelengthPolicy::Adaptive(_)) && self.models_trained == 0 {
                self.gm = 1;
            }
            self.models_trained += 1;
            self.model = Some(Arc::clone(model));
        }

        if new_model.is_some() && self.gm > 0 {
            self.next_kind = GenerationKind::Model;
            self.remaining = self.gm;
        } else {
            self.next_kind = GenerationKind::Original;
        }

        self.state = self.state.update(&self.constants, &points, &values)?;
        Ok(GenerationOutcome {
            kind: GenerationKind::Original,
            true_evals_used: points.len(),
            points,
            values,
            new_model,
            fallback,
            gm: self.gm,
            model_error,
        })
    }

    fn model_generation(&mut self, points: Vec<DVector<f64>>) -> Result<GenerationOutcome> {
        let model = self
            .model
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument("model generation without a model".into()))?;
        let values: Vec<f64> = points.iter().map(|p| model.predict(p)).collect();
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NumericalDegeneracy("surrogate predicted a non-finite value".into()));
        }
        self.remaining = self.remaining.saturating_sub(1);
        if self.remaining == 0 {
            self.next_kind = GenerationKind::Original;
        }
        self.state = self.state.update(&self.constants, &points, &values)?;
        Ok(GenerationOutcome {
            kind: GenerationKind::Model,
            points,
            values,
            true_evals_used: 0,
            new_model: None,
            fallback: None,
            gm: self.gm,
            model_error: None,
        })
    }

    /// Trains a GP on the local training set; `Ok(None)` when the archive is
    /// too small.
    fn train_model(&self) -> Result<Option<Arc<Surrogate>>> {
        let set = select_training_set(
            &self.archive,
            &self.state.mean,
            self.state.sigma,
            &self.state.cov,
            &self.config,
        )?;
        let TrainingSet::Selected { points, values, .. } = set else {
            return Ok(None);
        };
        let whitening = Whitening::new(&self.state.mean, self.state.sigma, &self.state.cov)?;
        let inputs: Vec<DVector<f64>> = points.iter().map(|p| whitening.apply(p)).collect();
        // warm start from the previous optimum
        let init = self
            .model
            .as_ref()
            .map(|m| *m.gp.hyper())
            .unwrap_or_default();
        let gp = train_gp(&inputs, &values, init, self.train_options).or_else(|_| {
            train_gp(&inputs, &values, GpHyperparams::default(), self.train_options)
        })?;
        Ok(Some(Arc::new(Surrogate { gp, whitening })))
    }
}
