//! Comparison statistics over trial records: medians of best Δf, mean
//! ranks, the Iman-Davenport variant of the Friedman test, pairwise win
//! counts and ECDF curves.

use std::collections::BTreeMap;

use statrs::distribution::{ContinuousCDF, FisherSnedecor};

use crate::benchmarks::{FunctionGroup, FunctionId};
use crate::config::ExperimentConfig;
use crate::error::{invalid, Result};
use crate::harness::TrialRecord;

/// Critical value the Friedman comparison is reported against for six
/// algorithms on 24 functions at α = 0.05.
pub const REFERENCE_CRITICAL_VALUE: f64 = 2.29;

/// Default ECDF targets `10^1, 10^0, ..., 10^-8`.
pub fn default_ecdf_targets() -> Vec<f64> {
    (-8..=1).rev().map(|e| 10f64.powi(e)).collect()
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        let (a, b) = (v[n / 2 - 1], v[n / 2]);
        if a == b {
            a
        } else {
            0.5 * (a + b)
        }
    }
}

/// Median over trials of the best Δf after `at_evals` true evaluations.
pub fn median_delta_f(records: &[&TrialRecord], at_evals: usize) -> f64 {
    let values: Vec<f64> = records.iter().map(|r| r.delta_f_at(at_evals)).collect();
    median(&values)
}

/// Ascending ranks starting at 1; ties share the average rank.
pub fn midranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        // positions start..end hold ranks start+1..=end
        let avg = (start + 1 + end) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = avg;
        }
        start = end;
    }
    ranks
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankTable {
    /// Ranks per function (rows) and algorithm (columns).
    pub ranks: Vec<Vec<f64>>,
    /// Mean rank of each algorithm over the functions.
    pub mean_ranks: Vec<f64>,
}

/// Ranks algorithms per function (row) by their medians, lower is better.
pub fn mean_ranks(medians: &[Vec<f64>]) -> Result<RankTable> {
    let Some(first) = medians.first() else {
        return invalid("empty median table");
    };
    let k = first.len();
    if k == 0 || medians.iter().any(|row| row.len() != k) {
        return invalid("median table rows must be nonempty and equally long");
    }
    let ranks: Vec<Vec<f64>> = medians.iter().map(|row| midranks(row)).collect();
    let n = ranks.len() as f64;
    let mean_ranks = (0..k)
        .map(|j| ranks.iter().map(|row| row[j]).sum::<f64>() / n)
        .collect();
    Ok(RankTable { ranks, mean_ranks })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FriedmanResult {
    pub chi2: f64,
    /// Iman-Davenport statistic; `None` when its denominator vanishes.
    pub f_f: Option<f64>,
}

/// `χ²_F = 12N/(k(k+1)) (Σ R_j² - k(k+1)²/4)` and
/// `F_F = (N-1) χ²_F / (N(k-1) - χ²_F)`.
pub fn friedman_iman_davenport(mean_ranks: &[f64], n_functions: usize) -> Result<FriedmanResult> {
    let k = mean_ranks.len();
    if k < 2 || n_functions < 1 {
        return invalid("need at least two algorithms and one function");
    }
    let (n, kf) = (n_functions as f64, k as f64);
    let sum_sq: f64 = mean_ranks.iter().map(|r| r * r).sum();
    let chi2 = 12.0 * n / (kf * (kf + 1.0)) * (sum_sq - kf * (kf + 1.0).powi(2) / 4.0);
    let denom = n * (kf - 1.0) - chi2;
    let f_f = (denom > 1e-12 * n * kf).then(|| (n - 1.0) * chi2 / denom);
    Ok(FriedmanResult { chi2, f_f })
}

/// Upper `alpha` quantile of `F(k-1, (k-1)(N-1))`, the critical value for
/// the Iman-Davenport statistic.
pub fn friedman_critical_value(k: usize, n_functions: usize, alpha: f64) -> Option<f64> {
    if k < 2 || n_functions < 2 || !(alpha > 0.0 && alpha < 1.0) {
        return None;
    }
    let d1 = (k - 1) as f64;
    let d2 = ((k - 1) * (n_functions - 1)) as f64;
    FisherSnedecor::new(d1, d2).ok().map(|f| f.inverse_cdf(1.0 - alpha))
}

/// `wins[i][j]`: functions on which algorithm `i` has a strictly lower
/// median than algorithm `j`.
pub fn pairwise_wins(medians: &[Vec<f64>]) -> Vec<Vec<usize>> {
    let k = medians.first().map_or(0, Vec::len);
    let mut wins = vec![vec![0; k]; k];
    for row in medians {
        for i in 0..k {
            for j in 0..k {
                if row[i] < row[j] {
                    wins[i][j] += 1;
                }
            }
        }
    }
    wins
}

/// Step points `(evals / D, proportion of (trial, target) pairs reached)`.
///
/// Starts at `(0, 0)`, adds a point at every evaluation count where the
/// proportion increases, and ends at the largest evaluation count seen.
pub fn ecdf_curve(records: &[&TrialRecord], targets: &[f64]) -> Vec<(f64, f64)> {
    let mut curve = vec![(0.0, 0.0)];
    let total = records.len() * targets.len();
    if total == 0 {
        return curve;
    }
    let dim = records[0].dim.max(1) as f64;
    let mut hits: Vec<usize> = records
        .iter()
        .flat_map(|r| targets.iter().filter_map(move |t| r.first_hit(*t)))
        .collect();
    hits.sort_unstable();
    let mut solved = 0;
    let mut i = 0;
    while i < hits.len() {
        let e = hits[i];
        while i < hits.len() && hits[i] == e {
            solved += 1;
            i += 1;
        }
        curve.push((e as f64 / dim, solved as f64 / total as f64));
    }
    let last = records.iter().map(|r| r.evals_used()).max().unwrap_or(0);
    let (x_end, y_end) = *curve.last().expect("nonempty");
    if (last as f64 / dim) > x_end {
        curve.push((last as f64 / dim, y_end));
    }
    curve
}

/// Smallest evaluation count at which the median Δf of some algorithm
/// reaches `target`; `budget` if none does.
pub fn best_fe(per_algorithm: &[Vec<&TrialRecord>], target: f64, budget: usize) -> usize {
    per_algorithm
        .iter()
        .filter_map(|records| first_median_hit(records, target, budget))
        .min()
        .unwrap_or(budget)
}

fn first_median_hit(records: &[&TrialRecord], target: f64, budget: usize) -> Option<usize> {
    if records.is_empty() || median_delta_f(records, budget) > target {
        return None;
    }
    // the median curve is nonincreasing in the evaluation count
    let (mut lo, mut hi) = (1, budget);
    while lo < hi {
        let mid = lo + (hi - lo) / 2;
        if median_delta_f(records, mid) <= target {
            hi = mid;
        } else {
            lo = mid + 1;
        }
    }
    Some(lo)
}

/// Rank comparison for one dimension at one budget level.
#[derive(Debug, Clone, PartialEq)]
pub struct BudgetComparison {
    /// `"1/3"` or `"1"` (fraction of bestFE).
    pub level: String,
    pub functions: Vec<FunctionId>,
    /// Evaluation count used per function.
    pub evals: Vec<usize>,
    pub medians: Vec<Vec<f64>>,
    pub ranks: RankTable,
    pub friedman: Option<FriedmanResult>,
    pub critical_value: Option<f64>,
    pub wins: Vec<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DimReport {
    pub dim: usize,
    pub best_fe: Vec<(FunctionId, usize)>,
    pub comparisons: Vec<BudgetComparison>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StatsReport {
    pub algorithms: Vec<String>,
    pub dims: Vec<DimReport>,
}

/// Groups records by `(algorithm, function, dim)`.
pub fn group_records(records: &[TrialRecord]) -> BTreeMap<(String, FunctionId, usize), Vec<&TrialRecord>> {
    let mut map: BTreeMap<_, Vec<&TrialRecord>> = BTreeMap::new();
    for r in records {
        map.entry((r.algorithm.clone(), r.function, r.dim)).or_default().push(r);
    }
    map
}

/// Mean ranks, Friedman statistics and win counts per dimension at
/// `⌈bestFE/3⌉` and `bestFE` evaluations.
pub fn compute_report(records: &[TrialRecord], config: &ExperimentConfig) -> Result<StatsReport> {
    let mut algorithms: Vec<String> = Vec::new();
    for r in records {
        if !algorithms.contains(&r.algorithm) {
            algorithms.push(r.algorithm.clone());
        }
    }
    if algorithms.is_empty() {
        return invalid("no trial records");
    }
    let groups = group_records(records);
    let mut dims: Vec<usize> = records.iter().map(|r| r.dim).collect();
    dims.sort_unstable();
    dims.dedup();

    let mut reports = Vec::new();
    for dim in dims {
        let budget = config.budget(dim);
        let mut functions: Vec<FunctionId> = records
            .iter()
            .filter(|r| r.dim == dim)
            .map(|r| r.function)
            .collect();
        functions.sort_unstable();
        functions.dedup();
        // only functions on which every algorithm ran
        functions.retain(|f| {
            algorithms
                .iter()
                .all(|a| groups.contains_key(&(a.clone(), *f, dim)))
        });
        if functions.is_empty() {
            continue;
        }

        let per_function: Vec<Vec<Vec<&TrialRecord>>> = functions
            .iter()
            .map(|f| {
                algorithms
                    .iter()
                    .map(|a| groups[&(a.clone(), *f, dim)].clone())
                    .collect()
            })
            .collect();
        let best: Vec<usize> = per_function
            .iter()
            .map(|algs| best_fe(algs, config.target, budget))
            .collect();

        let mut comparisons = Vec::new();
        for (level, divisor) in [("1/3", 3usize), ("1", 1)] {
            let evals: Vec<usize> = best.iter().map(|b| b.div_ceil(divisor)).collect();
            let medians: Vec<Vec<f64>> = per_function
                .iter()
                .zip(&evals)
                .map(|(algs, e)| algs.iter().map(|recs| median_delta_f(recs, *e)).collect())
                .collect();
            let ranks = mean_ranks(&medians)?;
            let friedman = friedman_iman_davenport(&ranks.mean_ranks, functions.len()).ok();
            comparisons.push(BudgetComparison {
                level: level.to_string(),
                functions: functions.clone(),
                evals,
                critical_value: friedman_critical_value(algorithms.len(), functions.len(), 0.05),
                wins: pairwise_wins(&medians),
                medians,
                ranks,
                friedman,
            });
        }
        reports.push(DimReport {
            dim,
            best_fe: functions.iter().copied().zip(best).collect(),
            comparisons,
        });
    }
    Ok(StatsReport {
        algorithms,
        dims: reports,
    })
}

/// Named ECDF curves, one per function group and a final `all`.
pub type EcdfSeries = Vec<(String, Vec<(f64, f64)>)>;

/// ECDF series per `(algorithm, dim)` and function group (plus `all`).
pub fn ecdf_by_group(records: &[TrialRecord], targets: &[f64]) -> BTreeMap<(String, usize), EcdfSeries> {
    let mut out = BTreeMap::new();
    let mut keys: Vec<(String, usize)> = records.iter().map(|r| (r.algorithm.clone(), r.dim)).collect();
    keys.sort();
    keys.dedup();
    for (alg, dim) in keys {
        let selected: Vec<&TrialRecord> = records
            .iter()
            .filter(|r| r.algorithm == alg && r.dim == dim)
            .collect();
        let mut series = Vec::new();
        for group in FunctionGroup::ALL {
            let in_group: Vec<&TrialRecord> = selected
                .iter()
                .copied()
                .filter(|r| r.function.group() == group)
                .collect();
            if !in_group.is_empty() {
                series.push((group.as_str().to_string(), ecdf_curve(&in_group, targets)));
            }
        }
        series.push(("all".to_string(), ecdf_curve(&selected, targets)));
        out.insert((alg, dim), series);
    }
    out
}
