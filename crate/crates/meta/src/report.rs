//! Comparison tables (aligned text and CSV) and sweep plot data.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write;

use crate::error::Result;
use crate::eval::{EvalReport, SweepEntry};
use crate::rank::average_rank;

/// Accuracy grid indexed by dataset then algorithm, in first-seen order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ResultsTable {
    pub datasets: Vec<String>,
    pub algorithms: Vec<String>,
    /// `(mean, ci95)` per `[dataset][algorithm]`.
    pub cells: Vec<Vec<Option<(f64, f64)>>>,
}

impl ResultsTable {
    pub fn from_reports(reports: &[EvalReport]) -> Self {
        let mut datasets: Vec<String> = Vec::new();
        let mut algorithms: Vec<String> = Vec::new();
        for r in reports {
            if !datasets.contains(&r.dataset_id) {
                datasets.push(r.dataset_id.clone());
            }
            if !algorithms.contains(&r.algorithm) {
                algorithms.push(r.algorithm.clone());
            }
        }
        let mut cells = vec![vec![None; algorithms.len()]; datasets.len()];
        for r in reports {
            let d = datasets.iter().position(|x| x == &r.dataset_id).expect("seen");
            let a = algorithms.iter().position(|x| x == &r.algorithm).expect("seen");
            cells[d][a] = Some((r.mean_accuracy, r.ci95_halfwidth));
        }
        ResultsTable {
            datasets,
            algorithms,
            cells,
        }
    }

    /// Average rank per algorithm, when every cell is filled.
    pub fn ranks(&self) -> Result<Vec<f64>> {
        let means: Vec<Vec<Option<f64>>> = self
            .cells
            .iter()
            .map(|row| row.iter().map(|c| c.map(|(m, _)| m)).collect())
            .collect();
        average_rank(&means)
    }

    fn grid(&self) -> Vec<Vec<String>> {
        let mut rows = vec![std::iter::once("dataset".to_string())
            .chain(self.algorithms.iter().cloned())
            .collect::<Vec<_>>()];
        for (d, name) in self.datasets.iter().enumerate() {
            let mut row = vec![name.clone()];
            for cell in &self.cells[d] {
                row.push(match cell {
                    Some((m, ci)) => format!("{:.2} ± {:.2}", 100.0 * m, 100.0 * ci),
                    None => "n/a".into(),
                });
            }
            rows.push(row);
        }
        if let Ok(ranks) = self.ranks() {
            let mut row = vec!["avg rank".to_string()];
            row.extend(ranks.iter().map(|r| format!("{r:.1}")));
            rows.push(row);
        }
        rows
    }

    /// Column-aligned text, accuracies in percent.
    pub fn to_text(&self) -> String {
        let rows = self.grid();
        let widths: Vec<usize> = (0..rows[0].len())
            .map(|c| rows.iter().map(|r| r[c].chars().count()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for (i, row) in rows.iter().enumerate() {
            let cells: Vec<String> = row
                .iter()
                .zip(&widths)
                .map(|(s, w)| format!("{s:<w$}", w = *w))
                .collect();
            let _ = writeln!(out, "{}", cells.join("  ").trim_end());
            if i == 0 {
                let _ = writeln!(
                    out,
                    "{}",
                    "-".repeat(widths.iter().sum::<usize>() + 2 * (widths.len() - 1))
                );
            }
        }
        out
    }

    /// One line per cell: `dataset,algorithm,mean,ci95`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("dataset,algorithm,mean_accuracy,ci95_halfwidth\n");
        for (d, name) in self.datasets.iter().enumerate() {
            for (a, alg) in self.algorithms.iter().enumerate() {
                if let Some((m, ci)) = self.cells[d][a] {
                    let _ = writeln!(out, "{name},{alg},{m},{ci}");
                }
            }
        }
        out
    }
}

/// `(x, mean, ci95)` points per `(dataset, algorithm)`.
type Series = BTreeMap<(String, String), Vec<(usize, f64, f64)>>;

/// Whitespace-separated plot data: `x mean ci95` per line, grouped per
/// `(dataset, algorithm)` series with a `# series` header.
pub fn shot_plot_data(reports: &[EvalReport]) -> String {
    let mut series: Series = BTreeMap::new();
    for r in reports {
        series
            .entry((r.dataset_id.clone(), r.algorithm.clone()))
            .or_default()
            .push((r.spec.k_shot, r.mean_accuracy, r.ci95_halfwidth));
    }
    render_series(series)
}

/// As [`shot_plot_data`] over N; unavailable entries are skipped.
pub fn way_plot_data(entries: &[SweepEntry]) -> String {
    let mut series: Series = BTreeMap::new();
    for r in entries.iter().filter_map(|e| e.report.as_ref()) {
        series
            .entry((r.dataset_id.clone(), r.algorithm.clone()))
            .or_default()
            .push((r.spec.n_way, r.mean_accuracy, r.ci95_halfwidth));
    }
    render_series(series)
}

fn render_series(series: Series) -> String {
    let mut out = String::new();
    for ((d, a), mut points) in series {
        points.sort_by_key(|p| p.0);
        let _ = writeln!(out, "# series {d} {a}");
        for (x, m, ci) in points {
            let _ = writeln!(out, "{x} {m} {ci}");
        }
        out.push('\n');
    }
    out
}

/// Distinct algorithm names across reports.
pub fn algorithms(reports: &[EvalReport]) -> BTreeSet<String> {
    reports.iter().map(|r| r.algorithm.clone()).collect()
}
