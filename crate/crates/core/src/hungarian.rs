//! Rectangular linear assignment (Hungarian method with potentials).

use nalgebra::DMatrix;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AssignmentError {
    #[error("score matrix has {rows} rows but only {cols} columns")]
    TooFewColumns { rows: usize, cols: usize },
    #[error("score matrix contains non-finite entries")]
    NonFinite,
}

/// Optimal one-to-one assignment of every row to a distinct column.
///
/// Returns `assignment[row] = column`. With `maximize` the total score is
/// maximized, otherwise minimized. Among equal-cost augmenting choices the
/// lowest column index wins, so the output is deterministic.
pub fn hungarian(scores: &DMatrix<f64>, maximize: bool) -> Result<Vec<usize>, AssignmentError> {
    let (n, m) = scores.shape();
    if m < n {
        return Err(AssignmentError::TooFewColumns { rows: n, cols: m });
    }
    if scores.iter().any(|x| !x.is_finite()) {
        return Err(AssignmentError::NonFinite);
    }
    if n == 0 {
        return Ok(Vec::new());
    }
    let cost = |i: usize, j: usize| if maximize { -scores[(i, j)] } else { scores[(i, j)] };

    // 1-based shortest augmenting path with row/column potentials; column 0 is
    // a virtual source.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut owner = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for row in 1..=n {
        owner[0] = row;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
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

    let mut assignment = vec![usize::MAX; n];
    for j in 1..=m {
        if owner[j] != 0 {
            assignment[owner[j] - 1] = j - 1;
        }
    }
    Ok(assignment)
}

pub fn assignment_value(scores: &DMatrix<f64>, assignment: &[usize]) -> f64 {
    assignment.iter().enumerate().map(|(i, &j)| scores[(i, j)]).sum()
}
