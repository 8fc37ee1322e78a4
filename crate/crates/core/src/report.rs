//! Text and CSV rendering of statistics reports and ECDF exports.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::Result;
use crate::harness::TrialRecord;
use crate::stats::{ecdf_by_group, StatsReport, REFERENCE_CRITICAL_VALUE};

pub const RANKS_FILE: &str = "ranks.csv";
pub const FRIEDMAN_FILE: &str = "friedman.csv";
pub const WINS_FILE: &str = "wins.csv";
pub const ECDF_DIR: &str = "ecdf";
pub const ECDF_HEADER: &str = "group,evals_per_dim,proportion";

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| format!("{x}"))
}

/// Writes `ranks.csv`, `friedman.csv` and `wins.csv` into `dir`.
pub fn write_stats(dir: &Path, report: &StatsReport) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut ranks = csv::Writer::from_path(dir.join(RANKS_FILE))?;
    let mut friedman = csv::Writer::from_path(dir.join(FRIEDMAN_FILE))?;
    let mut wins = csv::Writer::from_path(dir.join(WINS_FILE))?;
    ranks.write_record(["dim", "level", "algorithm", "mean_rank"])?;
    friedman.write_record(["dim", "level", "n_functions", "k", "chi2", "f_f", "critical_value"])?;
    wins.write_record(["dim", "level", "algorithm", "opponent", "wins"])?;
    for d in &report.dims {
        for c in &d.comparisons {
            let dim = d.dim.to_string();
            for (alg, r) in report.algorithms.iter().zip(&c.ranks.mean_ranks) {
                ranks.write_record([&dim, &c.level, alg, &format!("{r}")])?;
            }
            friedman.write_record([
                dim.clone(),
                c.level.clone(),
                c.functions.len().to_string(),
                report.algorithms.len().to_string(),
                opt(c.friedman.map(|f| f.chi2)),
                opt(c.friedman.and_then(|f| f.f_f)),
                opt(c.critical_value),
            ])?;
            for (i, a) in report.algorithms.iter().enumerate() {
                for (j, b) in report.algorithms.iter().enumerate() {
                    if i != j {
                        wins.write_record([&dim, &c.level, a, b, &c.wins[i][j].to_string()])?;
                    }
                }
            }
        }
    }
    ranks.flush()?;
    friedman.flush()?;
    wins.flush()?;
    Ok(())
}

/// Human-readable mean-rank and win-count tables.
pub fn format_stats(report: &StatsReport) -> String {
    let mut s = String::new();
    let width = report.algorithms.iter().map(String::len).max().unwrap_or(8).max(8);
    for d in &report.dims {
        let _ = writeln!(s, "== {}D ({} functions) ==", d.dim, d.best_fe.len());
        let _ = write!(s, "{:width$}", "#FEs/bestFE");
        for c in &d.comparisons {
            let _ = write!(s, " {:>8}", c.level);
        }
        let _ = writeln!(s);
        for (i, alg) in report.algorithms.iter().enumerate() {
            let _ = write!(s, "{alg:width$}");
            for c in &d.comparisons {
                let _ = write!(s, " {:>8.2}", c.ranks.mean_ranks[i]);
            }
            let _ = writeln!(s);
        }
        let _ = write!(s, "{:width$}", "F_F");
        for c in &d.comparisons {
            let v = c.friedman.and_then(|f| f.f_f);
            let marked = match (v, c.critical_value) {
                (Some(f), Some(cv)) if f > cv => format!("{f:.2}*"),
                (Some(f), _) => format!("{f:.2}"),
                (None, _) => "n/a".to_string(),
            };
            let _ = write!(s, " {marked:>8}");
        }
        let _ = writeln!(s);
        let _ = write!(s, "{:width$}", "critical");
        for c in &d.comparisons {
            let _ = write!(s, " {:>8}", c.critical_value.map_or("n/a".into(), |v| format!("{v:.2}")));
        }
        let _ = writeln!(s);
        for c in &d.comparisons {
            let _ = writeln!(s, "wins at {} x bestFE (row beats column):", c.level);
            for (i, alg) in report.algorithms.iter().enumerate() {
                let _ = write!(s, "{alg:width$}");
                for j in 0..report.algorithms.len() {
                    if i == j {
                        let _ = write!(s, " {:>4}", "-");
                    } else {
                        let _ = write!(s, " {:>4}", c.wins[i][j]);
                    }
                }
                let _ = writeln!(s);
            }
        }
        let _ = writeln!(s);
    }
    let _ = writeln!(
        s,
        "reference: critical value {REFERENCE_CRITICAL_VALUE} for k = 6 algorithms, N = 24 functions, alpha = 0.05"
    );
    s
}

/// File-name-safe form of an algorithm label.
pub fn file_stem(algorithm: &str) -> String {
    algorithm
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '.' { c } else { '_' })
        .collect()
}

/// Writes one `ecdf/<algorithm>_<dim>D.csv` per algorithm and dimension.
pub fn write_ecdf(dir: &Path, records: &[TrialRecord], targets: &[f64]) -> Result<Vec<PathBuf>> {
    let out_dir = dir.join(ECDF_DIR);
    fs::create_dir_all(&out_dir)?;
    let mut written = Vec::new();
    for ((alg, dim), series) in ecdf_by_group(records, targets) {
        let path = out_dir.join(format!("{}_{}D.csv", file_stem(&alg), dim));
        let mut w = csv::Writer::from_path(&path)?;
        w.write_record(ECDF_HEADER.split(','))?;
        for (group, curve) in series {
            for (x, y) in curve {
                w.write_record([group.clone(), format!("{x}"), format!("{y}")])?;
            }
        }
        w.flush()?;
        written.push(path);
    }
    Ok(written)
}
