//! Dense linear assignment by shortest augmenting paths with dual
//! potentials (Jonker–Volgenant class; Crouse's variant).

use crate::error::{KclError, Result};

/// Solution of a square assignment problem.
#[derive(Clone, Debug, PartialEq)]
pub struct Assignment {
    /// `col_for_row[i]` is the column matched to row `i`.
    pub col_for_row: Vec<usize>,
    pub total_cost: f64,
}

/// Minimizes `Σ_i cost(i, σ(i))` over permutations `σ` of `0..n`. Costs are
/// evaluated on demand, so no `n × n` matrix is stored.
pub fn solve_assignment<F: Fn(usize, usize) -> f64>(n: usize, cost: F) -> Result<Assignment> {
    const FREE: usize = usize::MAX;
    let mut u = vec![0.0f64; n];
    let mut v = vec![0.0f64; n];
    let mut col_for_row = vec![FREE; n];
    let mut row_for_col = vec![FREE; n];
    let mut spc = vec![0.0f64; n];
    let mut path = vec![FREE; n];
    let mut remaining = vec![0usize; n];
    let mut seen_row = vec![false; n];
    let mut seen_col = vec![false; n];

    // Column reduction: v_j = min_i c(i, j), matching the minimizing row
    // when it is still free. Reduced costs stay nonnegative and are zero on
    // every matched pair.
    for j in 0..n {
        let (mut best, mut arg) = (f64::INFINITY, FREE);
        for i in 0..n {
            let c = cost(i, j);
            if c < best {
                best = c;
                arg = i;
            }
        }
        if arg == FREE {
            return Err(KclError::NonFinite {
                what: "assignment cost".into(),
                location: format!("column {j}"),
            });
        }
        v[j] = best;
        if col_for_row[arg] == FREE {
            col_for_row[arg] = j;
            row_for_col[j] = arg;
        }
    }

    for cur in 0..n {
        if col_for_row[cur] != FREE {
            continue;
        }
        spc.iter_mut().for_each(|s| *s = f64::INFINITY);
        seen_row.iter_mut().for_each(|s| *s = false);
        seen_col.iter_mut().for_each(|s| *s = false);
        for (k, r) in remaining.iter_mut().enumerate() {
            *r = n - 1 - k;
        }
        let mut n_rem = n;
        let mut min_val = 0.0;
        let mut i = cur;
        let sink;
        loop {
            seen_row[i] = true;
            let mut lowest = f64::INFINITY;
            let mut index = FREE;
            let ui = u[i];
            for (it, &j) in remaining[..n_rem].iter().enumerate() {
                let r = min_val + cost(i, j) - ui - v[j];
                if r < spc[j] {
                    path[j] = i;
                    spc[j] = r;
                }
                if spc[j] < lowest || (spc[j] == lowest && row_for_col[j] == FREE) {
                    lowest = spc[j];
                    index = it;
                }
            }
            min_val = lowest;
            if index == FREE || !min_val.is_finite() {
                return Err(KclError::NonFinite {
                    what: "assignment cost".into(),
                    location: format!("row {i}"),
                });
            }
            let j = remaining[index];
            seen_col[j] = true;
            n_rem -= 1;
            remaining[index] = remaining[n_rem];
            if row_for_col[j] == FREE {
                sink = j;
                break;
            }
            i = row_for_col[j];
        }
        u[cur] += min_val;
        for r in 0..n {
            if seen_row[r] && r != cur {
                u[r] += min_val - spc[col_for_row[r]];
            }
        }
        for c in 0..n {
            if seen_col[c] {
                v[c] -= min_val - spc[c];
            }
        }
        let mut j = sink;
        loop {
            let i = path[j];
            row_for_col[j] = i;
            std::mem::swap(&mut col_for_row[i], &mut j);
            if i == cur {
                break;
            }
        }
    }
    let total_cost = col_for_row
        .iter()
        .enumerate()
        .map(|(i, &j)| cost(i, j))
        .sum();
    Ok(Assignment {
        col_for_row,
        total_cost,
    })
}
