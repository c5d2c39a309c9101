//! Small dense linear programming: two-phase primal simplex for problems in
//! standard equality form with nonnegative variables.
//!
//! maximize c'x  subject to  A x = b,  x >= 0.
//!
//! The problems here are tiny (a handful of rows, a few dozen columns), so a
//! dense tableau with Bland's rule is plenty and immune to cycling.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum LpError {
    #[error("dimension mismatch")]
    Dimension,
    #[error("problem is unbounded")]
    Unbounded,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LpOutcome {
    /// Optimal solution found: (objective value, primal point).
    Optimal { objective: f64, x: Vec<f64> },
    /// No x >= 0 satisfies A x = b (phase-1 optimum above tolerance).
    Infeasible { residual: f64 },
}

const PIVOT_EPS: f64 = 1e-11;

struct Tableau {
    /// rows x (cols + 1); last column is the rhs
    t: DMatrix<f64>,
    /// objective row: cols + 1 entries (reduced costs, then -objective value)
    obj: DVector<f64>,
    basis: Vec<usize>,
    cols: usize,
}

impl Tableau {
    fn pivot(&mut self, row: usize, col: usize) {
        let p = self.t[(row, col)];
        for j in 0..=self.cols {
            self.t[(row, j)] /= p;
        }
        for r in 0..self.t.nrows() {
            if r != row {
                let f = self.t[(r, col)];
                if f != 0.0 {
                    for j in 0..=self.cols {
                        self.t[(r, j)] -= f * self.t[(row, j)];
                    }
                }
            }
        }
        let f = self.obj[col];
        if f != 0.0 {
            for j in 0..=self.cols {
                self.obj[j] -= f * self.t[(row, j)];
            }
        }
        self.basis[row] = col;
    }

    /// Bland's rule iterations until optimal; Err on unbounded.
    fn run(&mut self) -> Result<(), LpError> {
        loop {
            // entering: smallest index with positive reduced cost (maximization)
            let Some(col) = (0..self.cols).find(|&j| self.obj[j] > PIVOT_EPS) else {
                return Ok(());
            };
            // leaving: min ratio, ties by smallest basis index
            let mut best: Option<(usize, f64, usize)> = None;
            for r in 0..self.t.nrows() {
                let a = self.t[(r, col)];
                if a > PIVOT_EPS {
                    let ratio = self.t[(r, self.cols)] / a;
                    let better = match best {
                        None => true,
                        Some((_, br, bb)) => {
                            ratio < br - PIVOT_EPS
                                || (ratio < br + PIVOT_EPS && self.basis[r] < bb)
                        }
                    };
                    if better {
                        best = Some((r, ratio, self.basis[r]));
                    }
                }
            }
            match best {
                Some((row, _, _)) => self.pivot(row, col),
                None => return Err(LpError::Unbounded),
            }
        }
    }
}

/// Solve: maximize c'x subject to A x = b, x >= 0.
///
/// Feasibility tolerance on the phase-1 artificial objective is 1e-8.
pub fn solve(a: &DMatrix<f64>, b: &DVector<f64>, c: &DVector<f64>) -> Result<LpOutcome, LpError> {
    let (m, n) = (a.nrows(), a.ncols());
    if b.len() != m || c.len() != n {
        return Err(LpError::Dimension);
    }
    const FEAS_TOL: f64 = 1e-8;

    // normalize rhs to be nonnegative
    let mut t = DMatrix::zeros(m, n + m + 1);
    for i in 0..m {
        let sign = if b[i] < 0.0 { -1.0 } else { 1.0 };
        for j in 0..n {
            t[(i, j)] = sign * a[(i, j)];
        }
        t[(i, n + i)] = 1.0; // artificial
        t[(i, n + m)] = sign * b[i];
    }

    // phase 1: maximize -sum(artificials)
    let mut obj = DVector::zeros(n + m + 1);
    for i in 0..m {
        for j in 0..=n + m {
            obj[j] += t[(i, j)]; // price out the artificial basis
        }
    }
    for i in 0..m {
        obj[n + i] = 0.0;
    }
    let mut tab = Tableau {
        t,
        obj,
        basis: (n..n + m).collect(),
        cols: n + m,
    };
    tab.run()?;
    // phase-1 objective value (-sum of artificials) sits negated in the rhs slot
    let phase1 = -tab.obj[tab.cols];
    if phase1 < -FEAS_TOL {
        return Ok(LpOutcome::Infeasible { residual: -phase1 });
    }

    // drive any artificial still in the basis out (or drop a redundant row)
    for r in 0..m {
        if tab.basis[r] >= n {
            if let Some(col) = (0..n).find(|&j| tab.t[(r, j)].abs() > PIVOT_EPS) {
                tab.pivot(r, col);
            }
        }
    }

    // phase 2: real objective, artificial columns disabled
    let mut obj = DVector::zeros(n + m + 1);
    for j in 0..n {
        obj[j] = c[j];
    }
    // price out the current basis
    for r in 0..m {
        let bi = tab.basis[r];
        if bi < n {
            let f = obj[bi];
            if f != 0.0 {
                for j in 0..=n + m {
                    obj[j] -= f * tab.t[(r, j)];
                }
            }
        }
    }
    for i in 0..m {
        obj[n + i] = f64::NEG_INFINITY; // never re-enter
    }
    tab.obj = obj;
    // restrict entering search to real columns by masking artificials
    // (NEG_INFINITY reduced cost never exceeds PIVOT_EPS)
    tab.run()?;

    let mut x = vec![0.0; n];
    for r in 0..m {
        if tab.basis[r] < n {
            x[tab.basis[r]] = tab.t[(r, n + m)];
        }
    }
    let objective = c.iter().zip(&x).map(|(ci, xi)| ci * xi).sum();
    Ok(LpOutcome::Optimal { objective, x })
}

/// Feasibility of A x = b, x >= 0 (zero objective).
pub fn feasible(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<bool, LpError> {
    let c = DVector::zeros(a.ncols());
    Ok(matches!(solve(a, b, &c)?, LpOutcome::Optimal { .. }))
}
