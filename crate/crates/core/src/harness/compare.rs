//! Side-by-side welfare and constraint table across experiments.

use std::cmp::Ordering;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::config::Algorithm;
use crate::harness::run::ExperimentSummary;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub name: String,
    pub algorithm: Algorithm,
    pub seeds: usize,
    /// Mean tail welfare across seeds.
    pub welfare: f64,
    /// Per agent, the largest tail cost across seeds.
    pub worst_costs: Vec<f64>,
    pub cost_bounds: Vec<f64>,
    /// Seeds in which some agent's tail cost exceeds its bound plus the tolerance.
    pub violating_seeds: Vec<u64>,
}

impl ComparisonRow {
    pub fn violates(&self) -> bool {
        !self.violating_seeds.is_empty()
    }
}

/// One row per summary, sorted by decreasing welfare, then name and algorithm;
/// remaining ties are broken on the other columns so the order never depends
/// on the input order.
///
/// Every summary must describe the same environment and iteration budget.
pub fn compare_runs(summaries: &[ExperimentSummary], tolerance: f64) -> Result<Vec<ComparisonRow>> {
    if let Some(first) = summaries.first() {
        for s in &summaries[1..] {
            if s.environment != first.environment || s.game != first.game {
                return Err(Error::MismatchedConfigs(format!(
                    "{} and {} use different environments",
                    first.name, s.name
                )));
            }
            if s.iterations != first.iterations {
                return Err(Error::MismatchedConfigs(format!(
                    "{} runs {} iterations, {} runs {}",
                    first.name, first.iterations, s.name, s.iterations
                )));
            }
        }
    }
    let mut rows: Vec<ComparisonRow> = summaries
        .iter()
        .map(|s| {
            let agents = s.runs.first().map_or(0, |r| r.tail_costs.len());
            let worst_costs = (0..agents)
                .map(|k| s.runs.iter().map(|r| r.tail_costs[k]).fold(f64::NEG_INFINITY, f64::max))
                .collect();
            ComparisonRow {
                name: s.name.clone(),
                algorithm: s.algorithm,
                seeds: s.runs.len(),
                welfare: s.mean_tail_welfare(),
                worst_costs,
                cost_bounds: s.runs.first().map(|r| r.cost_bounds.clone()).unwrap_or_default(),
                violating_seeds: s
                    .runs
                    .iter()
                    .filter(|r| !r.violations(tolerance).is_empty())
                    .map(|r| r.seed)
                    .collect(),
            }
        })
        .collect();
    rows.sort_by(|a, b| {
        b.welfare
            .total_cmp(&a.welfare)
            .then_with(|| a.name.cmp(&b.name))
            .then_with(|| a.algorithm.cmp(&b.algorithm))
            .then_with(|| a.seeds.cmp(&b.seeds))
            .then_with(|| lexicographic(&a.worst_costs, &b.worst_costs))
            .then_with(|| lexicographic(&a.cost_bounds, &b.cost_bounds))
            .then_with(|| a.violating_seeds.cmp(&b.violating_seeds))
    });
    Ok(rows)
}

fn lexicographic(a: &[f64], b: &[f64]) -> Ordering {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or_else(|| a.len().cmp(&b.len()))
}

/// Plain-text rendering of [`compare_runs`] output.
pub fn format_table(rows: &[ComparisonRow]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<24} {:<16} {:>5} {:>12}  {:<40} violation",
        "name", "algorithm", "seeds", "welfare", "worst tail cost / bound"
    );
    for r in rows {
        let costs: Vec<String> = r
            .worst_costs
            .iter()
            .zip(&r.cost_bounds)
            .map(|(c, b)| format!("{c:.3}/{b}"))
            .collect();
        let flag = if r.violates() {
            format!("yes (seeds {:?})", r.violating_seeds)
        } else {
            "no".into()
        };
        let _ = writeln!(
            out,
            "{:<24} {:<16} {:>5} {:>12.6}  {:<40} {}",
            r.name,
            r.algorithm.name(),
            r.seeds,
            r.welfare,
            costs.join(" "),
            flag
        );
    }
    out
}
