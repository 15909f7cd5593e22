use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AssignError {
    #[error("cannot assign {cols} ground-truth objects to {rows} predictions")]
    InfeasibleShape { rows: usize, cols: usize },
    #[error("cost matrix holds a non-finite entry at ({row}, {col})")]
    NonFinite { row: usize, col: usize },
}

/// Row-major costs, rows = predictions, columns = ground-truth objects.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix<T: Real> {
    rows: usize,
    cols: usize,
    values: Vec<T>,
}

impl<T: Real> CostMatrix<T> {
    pub fn new(rows: usize, cols: usize, values: Vec<T>) -> Self {
        assert_eq!(values.len(), rows * cols, "cost matrix size mismatch");
        CostMatrix { rows, cols, values }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut values = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                values.push(f(r, c));
            }
        }
        CostMatrix { rows, cols, values }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> T {
        self.values[r * self.cols + c]
    }
}

/// Each ground-truth column mapped to a distinct prediction row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct Assignment<T: Real> {
    /// `col_to_row[j]` is the prediction matched to ground truth `j`.
    pub col_to_row: Vec<usize>,
    /// Sum of matched costs, accumulated in column order.
    pub cost: T,
}

impl<T: Real> Assignment<T> {
    /// `(prediction, ground truth)` pairs in column order.
    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.col_to_row.iter().enumerate().map(|(c, &r)| (r, c))
    }

    pub fn row_to_col(&self, rows: usize) -> Vec<Option<usize>> {
        let mut out = vec![None; rows];
        for (r, c) in self.pairs() {
            out[r] = Some(c);
        }
        out
    }

    /// Cost of this matching under `cost`, summed in column order.
    pub fn evaluate(col_to_row: &[usize], cost: &CostMatrix<T>) -> T {
        col_to_row
            .iter()
            .enumerate()
            .fold(T::zero(), |acc, (c, &r)| acc + cost.get(r, c))
    }
}

/// Minimum-cost assignment of every column to a distinct row, via shortest
/// augmenting paths with dual potentials (O(cols²·rows)).
///
/// Ties are broken deterministically: each augmenting step takes the lowest
/// row index among equally cheap candidates.
pub fn hungarian<T: Real>(cost: &CostMatrix<T>) -> Result<Assignment<T>, AssignError> {
    let (rows, cols) = (cost.rows(), cost.cols());
    if rows < cols {
        return Err(AssignError::InfeasibleShape { rows, cols });
    }
    for r in 0..rows {
        for c in 0..cols {
            if !cost.get(r, c).is_finite() {
                return Err(AssignError::NonFinite { row: r, col: c });
            }
        }
    }
    if cols == 0 {
        return Ok(Assignment {
            col_to_row: Vec::new(),
            cost: T::zero(),
        });
    }

    // Columns play the role of "workers" (1-based, 0 is a sentinel) and rows
    // the role of "jobs"; owner[j] is the column currently holding row j.
    let inf = T::infinity();
    let mut pot_col = vec![T::zero(); cols + 1];
    let mut pot_row = vec![T::zero(); rows + 1];
    let mut owner = vec![0usize; rows + 1];
    let mut way = vec![0usize; rows + 1];

    for col in 1..=cols {
        owner[0] = col;
        let mut j0 = 0usize;
        let mut min_slack = vec![inf; rows + 1];
        let mut used = vec![false; rows + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = inf;
            let mut j1 = 0usize;
            for j in 1..=rows {
                if used[j] {
                    continue;
                }
                let slack = cost.get(j - 1, i0 - 1) - pot_col[i0] - pot_row[j];
                if slack < min_slack[j] {
                    min_slack[j] = slack;
                    way[j] = j0;
                }
                if min_slack[j] < delta {
                    delta = min_slack[j];
                    j1 = j;
                }
            }
            for j in 0..=rows {
                if used[j] {
                    pot_col[owner[j]] = pot_col[owner[j]] + delta;
                    pot_row[j] = pot_row[j] - delta;
                } else {
                    min_slack[j] = min_slack[j] - delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut col_to_row = vec![0usize; cols];
    for j in 1..=rows {
        if owner[j] != 0 {
            col_to_row[owner[j] - 1] = j - 1;
        }
    }
    let total = Assignment::evaluate(&col_to_row, cost);
    Ok(Assignment {
        col_to_row,
        cost: total,
    })
}
