//! Trial and experiment runner plus the CSV formats it emits.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::adaptive::{AdaptiveConfig, ErrorType, Transfer, DEFAULT_STEEPNESS};
use crate::benchmarks::{make_instance, BenchmarkInstance, FunctionId};
use crate::cma::init_cma;
use crate::config::ExperimentConfig;
use crate::control::{ControlConfig, GenerationKind, GenerationRecord, LifelengthPolicy, SurrogateCmaes};
use crate::error::{invalid, Error, Result};

pub const SUMMARY_HEADER: &str = "algorithm,function,dim,instance,evals_used,best_delta_f,termination";
pub const TRACE_HEADER: &str = "algorithm,function,dim,instance,eval_index,best_delta_f";
pub const LIFELENGTH_HEADER: &str = "algorithm,function,dim,instance,generation,g_m,kind";

pub const SUMMARY_FILE: &str = "summary.csv";
pub const TRACE_FILE: &str = "trace.csv";
pub const LIFELENGTH_FILE: &str = "lifelength.csv";
pub const CONFIG_FILE: &str = "experiment.cfg";

/// Initial step size.
pub const SIGMA0: f64 = 8.0 / 3.0;

/// FNV-1a over the written bytes followed by a SplitMix64 finalizer. Used
/// for seed derivation, so its output must never change between releases.
pub struct StableHasher(u64);

impl StableHasher {
    pub fn new() -> Self {
        Self(0xcbf2_9ce4_8422_2325)
    }

    pub fn write_bytes(&mut self, bytes: &[u8]) {
        for b in bytes {
            self.0 ^= u64::from(*b);
            self.0 = self.0.wrapping_mul(0x0000_0100_0000_01b3);
        }
        // field separator so ("ab","c") != ("a","bc")
        self.0 ^= 0xff;
        self.0 = self.0.wrapping_mul(0x0000_0100_0000_01b3);
    }

    pub fn write_str(&mut self, s: &str) {
        self.write_bytes(s.as_bytes());
    }

    pub fn write_u64(&mut self, v: u64) {
        self.write_bytes(&v.to_le_bytes());
    }

    pub fn finish(&self) -> u64 {
        let mut z = self.0.wrapping_add(0x9e37_79b9_7f4a_7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }
}

impl Default for StableHasher {
    fn default() -> Self {
        Self::new()
    }
}

/// One compared optimizer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AlgorithmSpec {
    Cmaes,
    GpFixed { gm: usize },
    Ada(AdaptiveConfig),
}

impl AlgorithmSpec {
    pub fn policy(&self) -> LifelengthPolicy {
        match *self {
            AlgorithmSpec::Cmaes => LifelengthPolicy::Fixed(0),
            AlgorithmSpec::GpFixed { gm } => LifelengthPolicy::Fixed(gm),
            AlgorithmSpec::Ada(cfg) => LifelengthPolicy::Adaptive(cfg),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            AlgorithmSpec::Ada(cfg) => cfg.validate(),
            _ => Ok(()),
        }
    }
}

fn format_transfer(t: Transfer) -> String {
    match t {
        Transfer::Identity => "t1".into(),
        Transfer::Sigmoid { k } if k == DEFAULT_STEEPNESS => "t2".into(),
        Transfer::Sigmoid { k } => format!("t2@{k}"),
    }
}

fn parse_transfer(s: &str) -> Result<Transfer> {
    match s {
        "t1" => Ok(Transfer::Identity),
        "t2" => Ok(Transfer::Sigmoid {
            k: DEFAULT_STEEPNESS,
        }),
        _ => match s.strip_prefix("t2@") {
            Some(k) => k
                .parse::<f64>()
                .map(|k| Transfer::Sigmoid { k })
                .map_err(|_| Error::InvalidArgument(format!("bad sigmoid steepness in `{s}`"))),
            None => invalid(format!("unknown transfer function `{s}`")),
        },
    }
}

impl fmt::Display for AlgorithmSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AlgorithmSpec::Cmaes => f.write_str("cmaes"),
            AlgorithmSpec::GpFixed { gm } => write!(f, "gp-{gm}"),
            AlgorithmSpec::Ada(cfg) if *cfg == AdaptiveConfig::ada_kendall() => f.write_str("ada-kendall"),
            AlgorithmSpec::Ada(cfg) if *cfg == AdaptiveConfig::ada_rd() => f.write_str("ada-rd"),
            AlgorithmSpec::Ada(cfg) if *cfg == AdaptiveConfig::ada_kl() => f.write_str("ada-kl"),
            AlgorithmSpec::Ada(cfg) => write!(
                f,
                "ada:{}:{}:{}:{}:{}",
                cfg.error_type,
                format_transfer(cfg.transfer),
                cfg.eps_threshold,
                cfg.update_rate,
                cfg.gm_max
            ),
        }
    }
}

impl FromStr for AlgorithmSpec {
    type Err = Error;

    /// `cmaes`, `gp-<g_m>`, `ada-kendall`, `ada-rd`, `ada-kl`, or
    /// `ada:<error>:<t1|t2|t2@k>:<eps_T>:<r_u>:<g_m_max>`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let spec = match s {
            "cmaes" => AlgorithmSpec::Cmaes,
            "ada-kendall" => AlgorithmSpec::Ada(AdaptiveConfig::ada_kendall()),
            "ada-rd" => AlgorithmSpec::Ada(AdaptiveConfig::ada_rd()),
            "ada-kl" => AlgorithmSpec::Ada(AdaptiveConfig::ada_kl()),
            _ => {
                if let Some(g) = s.strip_prefix("gp-") {
                    let gm = g
                        .parse()
                        .map_err(|_| Error::InvalidArgument(format!("bad lifelength in `{s}`")))?;
                    AlgorithmSpec::GpFixed { gm }
                } else if let Some(rest) = s.strip_prefix("ada:") {
                    let parts: Vec<&str> = rest.split(':').collect();
                    if parts.len() != 5 {
                        return invalid(format!("`{s}` needs 5 fields after `ada:`"));
                    }
                    let num = |p: &str| -> Result<f64> {
                        p.parse()
                            .map_err(|_| Error::InvalidArgument(format!("bad number `{p}` in `{s}`")))
                    };
                    AlgorithmSpec::Ada(AdaptiveConfig {
                        error_type: parts[0].parse::<ErrorType>()?,
                        transfer: parse_transfer(parts[1])?,
                        eps_threshold: num(parts[2])?,
                        update_rate: num(parts[3])?,
                        gm_max: parts[4]
                            .parse()
                            .map_err(|_| Error::InvalidArgument(format!("bad g_m_max in `{s}`")))?,
                    })
                } else {
                    return invalid(format!("unknown algorithm `{s}`"));
                }
            }
        };
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Termination {
    TargetHit,
    BudgetExhausted,
    Failed(String),
}

impl Termination {
    pub fn as_str(&self) -> &'static str {
        match self {
            Termination::TargetHit => "target_hit",
            Termination::BudgetExhausted => "budget_exhausted",
            Termination::Failed(_) => "failed",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialRecord {
    pub algorithm: String,
    pub function: FunctionId,
    pub dim: usize,
    pub instance: u64,
    /// `(true evaluation index, best Δf so far)`, one entry per evaluation.
    pub history: Vec<(usize, f64)>,
    pub gm_trace: Vec<GenerationRecord>,
    pub termination: Termination,
}

impl TrialRecord {
    pub fn evals_used(&self) -> usize {
        self.history.last().map_or(0, |h| h.0)
    }

    pub fn best_delta_f(&self) -> f64 {
        self.history.last().map_or(f64::INFINITY, |h| h.1)
    }

    /// Best Δf after `evals` true evaluations, carrying the final value
    /// forward past the end of the run.
    pub fn delta_f_at(&self, evals: usize) -> f64 {
        let idx = self.history.partition_point(|h| h.0 <= evals);
        if idx == 0 {
            f64::INFINITY
        } else {
            self.history[idx - 1].1
        }
    }

    /// First evaluation index at which `Δf <= target`.
    pub fn first_hit(&self, target: f64) -> Option<usize> {
        let idx = self.history.partition_point(|h| h.1 > target);
        self.history.get(idx).map(|h| h.0)
    }

    /// Ratio of original to model generations, `None` without model generations.
    pub fn control_frequency(&self) -> Option<f64> {
        let model = self.gm_trace.iter().filter(|g| g.kind == GenerationKind::Model).count();
        let original = self.gm_trace.len() - model;
        (model > 0).then(|| original as f64 / model as f64)
    }
}

/// Per-trial settings shared by all trials of an experiment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrialSettings {
    pub budget: usize,
    pub target: f64,
    pub radius: f64,
    pub n_req: Option<usize>,
    pub n_max: Option<usize>,
}

impl TrialSettings {
    pub fn new(budget: usize, target: f64) -> Self {
        Self {
            budget,
            target,
            radius: 8.0,
            n_req: None,
            n_max: None,
        }
    }

    fn control_config(&self, dim: usize, lambda: usize) -> ControlConfig {
        let defaults = ControlConfig::defaults(dim, lambda);
        let n_max = self.n_max.unwrap_or(defaults.n_max);
        ControlConfig {
            radius: self.radius,
            n_req: self.n_req.unwrap_or(defaults.n_req.min(n_max)),
            n_max,
        }
    }
}

/// Runs one optimizer on one instance until the target or the budget of
/// true evaluations is reached. The starting mean is uniform in `[-4, 4]^D`.
///
/// Evaluations requested after the run has stopped (the rest of the last
/// population) are not recorded; the run ends with that generation.
pub fn run_trial(
    algorithm: &AlgorithmSpec,
    instance: &BenchmarkInstance,
    settings: &TrialSettings,
    seed: u64,
) -> Result<TrialRecord> {
    algorithm.validate()?;
    if !(settings.target >= 0.0) {
        return invalid("target must be nonnegative");
    }
    let dim = instance.dim;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m0: Vec<f64> = (0..dim).map(|_| rng.random_range(-4.0..=4.0)).collect();
    let (constants, state) = init_cma(dim, SIGMA0, &m0, None)?;
    if settings.budget < constants.lambda {
        return invalid(format!(
            "budget {} is smaller than the population size {}",
            settings.budget, constants.lambda
        ));
    }
    let control = settings.control_config(dim, constants.lambda);
    let mut optimizer = SurrogateCmaes::new(constants, state, control, algorithm.policy())?;

    let mut history: Vec<(usize, f64)> = Vec::with_capacity(settings.budget);
    let mut hit = false;
    let mut best = f64::INFINITY;
    // model generations are free, so cap generations to guarantee termination
    let max_generations = 100 * settings.budget + 1000;
    let mut termination = None;
    for _ in 0..max_generations {
        let mut evaluate = |x: &DVector<f64>| {
            let value = instance.evaluate(x);
            if !hit && history.len() < settings.budget {
                best = best.min(instance.delta_f(value));
                history.push((history.len() + 1, best));
                hit = best <= settings.target;
            }
            value
        };
        if let Err(e) = optimizer.generation_step(&mut evaluate, &mut rng) {
            termination = Some(Termination::Failed(e.to_string()));
            break;
        }
        if hit {
            termination = Some(Termination::TargetHit);
            break;
        }
        if history.len() >= settings.budget {
            termination = Some(Termination::BudgetExhausted);
            break;
        }
    }
    let termination =
        termination.unwrap_or_else(|| Termination::Failed("generation limit reached".into()));
    Ok(TrialRecord {
        algorithm: algorithm.to_string(),
        function: instance.function,
        dim,
        instance: instance.instance_seed,
        history,
        gm_trace: optimizer.trace().to_vec(),
        termination,
    })
}

/// Seed of one trial: `hash(master, algorithm, function, dim, instance index)`.
pub fn trial_seed(master: u64, algorithm: &str, function: FunctionId, dim: usize, instance_index: usize) -> u64 {
    let mut h = StableHasher::new();
    h.write_u64(master);
    h.write_str(algorithm);
    h.write_str(function.name());
    h.write_u64(dim as u64);
    h.write_u64(instance_index as u64);
    h.finish()
}

struct Job {
    order: (usize, usize, usize, usize),
    algorithm: AlgorithmSpec,
    function: FunctionId,
    dim: usize,
    instance_index: usize,
    instance_seed: u64,
}

/// Runs every (algorithm, function, dim, instance) combination, on up to
/// `threads` worker threads. Output order is independent of scheduling.
pub fn run_experiment(config: &ExperimentConfig, threads: usize) -> Result<Vec<TrialRecord>> {
    config.validate()?;
    let mut jobs = Vec::new();
    for (ai, algorithm) in config.algorithms.iter().enumerate() {
        for (fi, function) in config.functions.iter().enumerate() {
            for (di, dim) in config.dims.iter().enumerate() {
                for (ii, instance_seed) in config.instances.iter().enumerate() {
                    jobs.push(Job {
                        order: (ai, fi, di, ii),
                        algorithm: *algorithm,
                        function: *function,
                        dim: *dim,
                        instance_index: ii,
                        instance_seed: *instance_seed,
                    });
                }
            }
        }
    }

    let run = |job: &Job| -> Result<(usize, usize, usize, usize, TrialRecord)> {
        let instance = make_instance(job.function, job.dim, job.instance_seed)?;
        let settings = config.trial_settings(job.dim);
        let name = job.algorithm.to_string();
        let seed = trial_seed(config.master_seed, &name, job.function, job.dim, job.instance_index);
        let record = run_trial(&job.algorithm, &instance, &settings, seed)?;
        let (a, f, d, i) = job.order;
        Ok((a, f, d, i, record))
    };

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    let mut results: Vec<_> = pool.install(|| jobs.par_iter().map(run).collect::<Result<Vec<_>>>())?;
    results.sort_by_key(|r| (r.0, r.1, r.2, r.3));
    Ok(results.into_iter().map(|r| r.4).collect())
}

fn fmt_f64(v: f64) -> String {
    format!("{v:e}")
}

/// Writes the summary, trace and lifelength CSVs into `dir`.
pub fn write_results(dir: &Path, records: &[TrialRecord]) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut summary = csv::Writer::from_path(dir.join(SUMMARY_FILE))?;
    let mut trace = csv::Writer::from_path(dir.join(TRACE_FILE))?;
    let mut lifelength = csv::Writer::from_path(dir.join(LIFELENGTH_FILE))?;
    summary.write_record(SUMMARY_HEADER.split(','))?;
    trace.write_record(TRACE_HEADER.split(','))?;
    lifelength.write_record(LIFELENGTH_HEADER.split(','))?;
    for r in records {
        let key = [
            r.algorithm.clone(),
            r.function.name().to_string(),
            r.dim.to_string(),
            r.instance.to_string(),
        ];
        let mut row = key.to_vec();
        row.extend([
            r.evals_used().to_string(),
            fmt_f64(r.best_delta_f()),
            r.termination.as_str().to_string(),
        ]);
        summary.write_record(&row)?;
        for (idx, best) in &r.history {
            let mut row = key.to_vec();
            row.extend([idx.to_string(), fmt_f64(*best)]);
            trace.write_record(&row)?;
        }
        for g in &r.gm_trace {
            let mut row = key.to_vec();
            row.extend([g.generation.to_string(), g.gm.to_string(), g.kind.as_str().to_string()]);
            lifelength.write_record(&row)?;
        }
    }
    summary.flush()?;
    trace.flush()?;
    lifelength.flush()?;
    Ok(())
}

type RecordKey = (String, FunctionId, usize, u64);

fn open_checked(path: &Path, header: &str) -> Result<csv::Reader<fs::File>> {
    let mut reader = csv::Reader::from_path(path)?;
    let found: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    if found.join(",") != header {
        return Err(Error::Data {
            context: path.display().to_string(),
            message: format!("header `{}` does not match `{header}`", found.join(",")),
        });
    }
    Ok(reader)
}

fn parse_field<T: FromStr>(path: &Path, row: &csv::StringRecord, i: usize) -> Result<T> {
    let raw = row.get(i).unwrap_or("");
    raw.parse().map_err(|_| Error::Data {
        context: path.display().to_string(),
        message: format!("cannot parse field {i} `{raw}`"),
    })
}

fn parse_key(path: &Path, row: &csv::StringRecord) -> Result<RecordKey> {
    let function = row.get(1).unwrap_or("").parse::<FunctionId>().map_err(|e| Error::Data {
        context: path.display().to_string(),
        message: e.to_string(),
    })?;
    Ok((
        row.get(0).unwrap_or("").to_string(),
        function,
        parse_field(path, row, 2)?,
        parse_field(path, row, 3)?,
    ))
}

/// Reads the records written by [`write_results`], in summary order.
pub fn read_results(dir: &Path) -> Result<Vec<TrialRecord>> {
    let summary_path = dir.join(SUMMARY_FILE);
    let mut order = Vec::new();
    let mut records: BTreeMap<RecordKey, TrialRecord> = BTreeMap::new();
    for row in open_checked(&summary_path, SUMMARY_HEADER)?.records() {
        let row = row?;
        let key = parse_key(&summary_path, &row)?;
        let termination = match row.get(6).unwrap_or("") {
            "target_hit" => Termination::TargetHit,
            "budget_exhausted" => Termination::BudgetExhausted,
            "failed" => Termination::Failed(String::new()),
            other => {
                return Err(Error::Data {
                    context: summary_path.display().to_string(),
                    message: format!("unknown termination `{other}`"),
                })
            }
        };
        records.insert(
            key.clone(),
            TrialRecord {
                algorithm: key.0.clone(),
                function: key.1,
                dim: key.2,
                instance: key.3,
                history: Vec::new(),
                gm_trace: Vec::new(),
                termination,
            },
        );
        order.push(key);
    }

    let trace_path = dir.join(TRACE_FILE);
    for row in open_checked(&trace_path, TRACE_HEADER)?.records() {
        let row = row?;
        let key = parse_key(&trace_path, &row)?;
        let entry = (parse_field(&trace_path, &row, 4)?, parse_field(&trace_path, &row, 5)?);
        match records.get_mut(&key) {
            Some(r) => r.history.push(entry),
            None => {
                return Err(Error::Data {
                    context: trace_path.display().to_string(),
                    message: format!("trial {key:?} missing from the summary"),
                })
            }
        }
    }

    let life_path = dir.join(LIFELENGTH_FILE);
    if life_path.exists() {
        for row in open_checked(&life_path, LIFELENGTH_HEADER)?.records() {
            let row = row?;
            let key = parse_key(&life_path, &row)?;
            let kind = match row.get(6).unwrap_or("") {
                "original" => GenerationKind::Original,
                "model" => GenerationKind::Model,
                other => {
                    return Err(Error::Data {
                        context: life_path.display().to_string(),
                        message: format!("unknown generation kind `{other}`"),
                    })
                }
            };
            if let Some(r) = records.get_mut(&key) {
                r.gm_trace.push(GenerationRecord {
                    generation: parse_field(&life_path, &row, 4)?,
                    gm: parse_field(&life_path, &row, 5)?,
                    kind,
                });
            }
        }
    }

    Ok(order
        .into_iter()
        .filter_map(|k| records.remove(&k))
        .collect())
}
