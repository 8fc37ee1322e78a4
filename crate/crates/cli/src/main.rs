use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use ascmaes::benchmarks::FunctionId;
use ascmaes::config::ExperimentConfig;
use ascmaes::harness::{self, Termination, TrialRecord};
use ascmaes::{report, stats, Error, Result};

/// Surrogate-assisted CMA-ES experiments.
#[derive(Parser)]
#[command(name = "ascmaes", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment and write summary, trace and lifelength CSVs.
    Run(RunArgs),
    /// Mean ranks, Friedman statistics and pairwise wins from a results directory.
    Stats(OutArgs),
    /// Export ECDF curves per function group.
    ExportEcdf(EcdfArgs),
    /// List the benchmark functions.
    ListFunctions,
}

#[derive(Args)]
struct RunArgs {
    /// `key = value` experiment config.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Comma-separated dimensions.
    #[arg(long)]
    dims: Option<String>,
    /// Comma-separated function names.
    #[arg(long)]
    functions: Option<String>,
    /// Comma-separated algorithms (cmaes, gp-<n>, ada-kendall, ada-rd, ada-kl, ada:...).
    #[arg(long)]
    algorithms: Option<String>,
    /// Comma-separated instance ids.
    #[arg(long)]
    instances: Option<String>,
    #[arg(long)]
    budget_multiplier: Option<String>,
    #[arg(long)]
    target: Option<String>,
    /// Maximum number of concurrent trials.
    #[arg(long, default_value_t = 1)]
    threads: usize,
    #[arg(long, env = "ASCMAES_OUT")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct OutArgs {
    /// Results directory (falls back to $ASCMAES_OUT, then `results`).
    #[arg(long, env = "ASCMAES_OUT", default_value = "results")]
    out: PathBuf,
}

#[derive(Args)]
struct EcdfArgs {
    #[command(flatten)]
    out: OutArgs,
    /// Comma-separated Δf targets (default 1e1 down to 1e-8).
    #[arg(long)]
    targets: Option<String>,
}

fn build_config(args: &RunArgs) -> Result<ExperimentConfig> {
    let mut config = match &args.config {
        Some(path) => ExperimentConfig::from_file(path)?,
        None => ExperimentConfig::default(),
    };
    let overrides = [
        ("dims", &args.dims),
        ("functions", &args.functions),
        ("algorithms", &args.algorithms),
        ("instances", &args.instances),
        ("budget_multiplier", &args.budget_multiplier),
        ("target", &args.target),
    ];
    for (key, value) in overrides {
        if let Some(v) = value {
            config.set(key, v)?;
        }
    }
    if let Some(seed) = args.seed {
        config.master_seed = seed;
    }
    if let Some(out) = &args.out {
        config.output_dir = out.clone();
    }
    config.validate()?;
    Ok(config)
}

fn summarize(config: &ExperimentConfig, records: &[TrialRecord]) {
    for alg in &config.algorithms {
        let name = alg.to_string();
        let mine: Vec<&TrialRecord> = records.iter().filter(|r| r.algorithm == name).collect();
        let hit = mine.iter().filter(|r| r.termination == Termination::TargetHit).count();
        let failed = mine
            .iter()
            .filter(|r| matches!(r.termination, Termination::Failed(_)))
            .count();
        let evals: Vec<f64> = mine.iter().map(|r| r.evals_used() as f64).collect();
        let deltas: Vec<f64> = mine.iter().map(|r| r.best_delta_f()).collect();
        println!(
            "{name}: {} trials, {hit} hit target, {failed} failed, median evals {}, median best delta_f {:.3e}",
            mine.len(),
            stats::median(&evals),
            stats::median(&deltas)
        );
    }
}

fn cmd_run(args: &RunArgs) -> Result<bool> {
    let config = build_config(args)?;
    let records = harness::run_experiment(&config, args.threads)?;
    harness::write_results(&config.output_dir, &records)?;
    std::fs::write(config.output_dir.join(harness::CONFIG_FILE), config.serialize())?;
    summarize(&config, &records);
    for r in &records {
        if let Termination::Failed(msg) = &r.termination {
            eprintln!(
                "trial failed: {} {} {}D instance {}: {msg}",
                r.algorithm, r.function, r.dim, r.instance
            );
        }
    }
    Ok(records
        .iter()
        .all(|r| !matches!(r.termination, Termination::Failed(_))))
}

fn load(dir: &std::path::Path) -> Result<(ExperimentConfig, Vec<TrialRecord>)> {
    let config = ExperimentConfig::from_file(&dir.join(harness::CONFIG_FILE))?;
    let records = harness::read_results(dir)?;
    Ok((config, records))
}

fn cmd_stats(args: &OutArgs) -> Result<()> {
    let (config, records) = load(&args.out)?;
    let rep = stats::compute_report(&records, &config)?;
    print!("{}", report::format_stats(&rep));
    report::write_stats(&args.out, &rep)
}

fn cmd_export_ecdf(args: &EcdfArgs) -> Result<()> {
    let (_, records) = load(&args.out.out)?;
    let targets = match &args.targets {
        Some(list) => list
            .split(',')
            .map(|t| {
                t.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::InvalidArgument(format!("bad target `{t}`")))
            })
            .collect::<Result<Vec<_>>>()?,
        None => stats::default_ecdf_targets(),
    };
    for path in report::write_ecdf(&args.out.out, &records, &targets)? {
        println!("{}", path.display());
    }
    Ok(())
}

fn cmd_list_functions() {
    for f in FunctionId::ALL {
        println!("{:<18} {:<16} {}", f.name(), f.group().as_str(), f.description());
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Stats(args) => cmd_stats(args).map(|_| true),
        Command::ExportEcdf(args) => cmd_export_ecdf(args).map(|_| true),
        Command::ListFunctions => {
            cmd_list_functions();
            Ok(true)
        }
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
