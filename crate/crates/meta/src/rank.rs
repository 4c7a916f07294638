//! Average algorithm rank across datasets.

use crate::error::{Error, Result};

/// Ranks of one row, 1 = highest, ties share the mean of their positions.
pub fn rank_row(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        // positions i..=j are 1-based ranks i+1..=j+1
        let shared = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = shared;
        }
        i = j + 1;
    }
    ranks
}

/// Mean rank per algorithm over datasets; `table[dataset][algorithm]`.
pub fn average_rank(table: &[Vec<Option<f64>>]) -> Result<Vec<f64>> {
    let Some(first) = table.first() else {
        return Err(Error::invalid("empty results table"));
    };
    let m = first.len();
    if m == 0 {
        return Err(Error::invalid("results table has no algorithms"));
    }
    let mut total = vec![0.0; m];
    for (d, row) in table.iter().enumerate() {
        if row.len() != m {
            return Err(Error::invalid(format!(
                "dataset {d} has {} cells, expected {m}",
                row.len()
            )));
        }
        let values: Vec<f64> = row
            .iter()
            .enumerate()
            .map(|(a, v)| {
                v.filter(|x| x.is_finite()).ok_or(Error::MissingCell {
                    dataset: d,
                    algorithm: a,
                })
            })
            .collect::<Result<_>>()?;
        for (t, r) in total.iter_mut().zip(rank_row(&values)) {
            *t += r;
        }
    }
    Ok(total.into_iter().map(|t| t / table.len() as f64).collect())
}
