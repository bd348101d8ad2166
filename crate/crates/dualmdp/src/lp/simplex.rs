//! Dense two-phase simplex with Bland's pivoting rule.
//!
//! Free variables are split into differences of nonnegative pairs, rows are
//! brought to equality form with slack/surplus columns, and phase 1 drives
//! artificial variables to zero. Bland's rule (always the lowest eligible
//! column, ties in the ratio test broken by the lowest basic variable)
//! makes the solve deterministic and cycle-free.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::lp::{Direction, LinearProgram, LowerBound, LpStatus, LpSolution, RowSense};

const PIVOT_TOL: f64 = 1e-11;
const COST_TOL: f64 = 1e-10;
const MAX_PIVOTS: usize = 50_000;

struct Tableau {
    /// rows x (cols + 1); last column is the rhs
    t: DMatrix<f64>,
    basis: Vec<usize>,
    n_cols: usize,
}

impl Tableau {
    fn rhs(&self, i: usize) -> f64 {
        self.t[(i, self.n_cols)]
    }

    fn pivot(&mut self, row: usize, col: usize) {
        let piv = self.t[(row, col)];
        for j in 0..=self.n_cols {
            self.t[(row, j)] /= piv;
        }
        for i in 0..self.t.nrows() {
            if i == row {
                continue;
            }
            let factor = self.t[(i, col)];
            if factor == 0.0 {
                continue;
            }
            for j in 0..=self.n_cols {
                self.t[(i, j)] -= factor * self.t[(row, j)];
            }
        }
        self.basis[row] = col;
    }
}

/// Runs Bland-rule simplex on the tableau for the maximization objective
/// `costs` restricted to columns in `allowed`. Returns pivot count.
fn optimize(tab: &mut Tableau, costs: &[f64], allowed: &[bool]) -> Result<usize> {
    let m = tab.t.nrows();
    let mut pivots = 0;
    loop {
        // reduced costs: c_j - c_B^T B^{-1} A_j, computed from the tableau
        let mut entering = None;
        for j in 0..tab.n_cols {
            if !allowed[j] {
                continue;
            }
            let mut reduced = costs[j];
            for i in 0..m {
                let cb = costs[tab.basis[i]];
                if cb != 0.0 {
                    reduced -= cb * tab.t[(i, j)];
                }
            }
            if reduced > COST_TOL {
                entering = Some(j);
                break; // Bland: lowest eligible index
            }
        }
        let Some(col) = entering else {
            return Ok(pivots);
        };
        // ratio test, ties broken by lowest basic variable index
        let mut leaving: Option<(usize, f64)> = None;
        for i in 0..m {
            let a = tab.t[(i, col)];
            if a > PIVOT_TOL {
                let ratio = tab.rhs(i) / a;
                let replace = match leaving {
                    None => true,
                    Some((best_i, best_ratio)) => {
                        ratio < best_ratio - PIVOT_TOL
                            || (ratio <= best_ratio + PIVOT_TOL
                                && tab.basis[i] < tab.basis[best_i])
                    }
                };
                if replace {
                    leaving = Some((i, ratio));
                }
            }
        }
        let Some((row, _)) = leaving else {
            return Err(Error::Unbounded);
        };
        tab.pivot(row, col);
        pivots += 1;
        if pivots > MAX_PIVOTS {
            return Err(Error::IterationLimit {
                trace: crate::trace::SolveTrace::new(),
            });
        }
    }
}

/// Solves the linear program; see `LinearProgram` for the row/bound model.
pub fn solve_lp(lp: &LinearProgram) -> Result<LpSolution> {
    lp.check_shapes()?;
    let n_orig = lp.objective.len();
    let m = lp.constraint_matrix.nrows();

    // column layout: split original variables first, then slack/surplus,
    // then artificials
    let mut col_of_var: Vec<(usize, Option<usize>)> = Vec::with_capacity(n_orig);
    let mut n_struct = 0usize;
    for bound in &lp.lower_bounds {
        match bound {
            LowerBound::Zero => {
                col_of_var.push((n_struct, None));
                n_struct += 1;
            }
            LowerBound::Free => {
                col_of_var.push((n_struct, Some(n_struct + 1)));
                n_struct += 2;
            }
        }
    }
    let n_slack = lp
        .senses
        .iter()
        .filter(|s| !matches!(s, RowSense::Eq))
        .count();
    // rows with negative rhs are negated first; senses after negation decide
    // slack direction and artificial need
    let mut row_sign = vec![1.0; m];
    let mut senses = lp.senses.clone();
    for i in 0..m {
        if lp.rhs[i] < 0.0 {
            row_sign[i] = -1.0;
            senses[i] = match senses[i] {
                RowSense::Le => RowSense::Ge,
                RowSense::Ge => RowSense::Le,
                RowSense::Eq => RowSense::Eq,
            };
        }
    }
    let n_art = senses
        .iter()
        .filter(|s| !matches!(s, RowSense::Le))
        .count();
    let n_cols = n_struct + n_slack + n_art;

    let mut t = DMatrix::zeros(m, n_cols + 1);
    for i in 0..m {
        for v in 0..n_orig {
            let a = row_sign[i] * lp.constraint_matrix[(i, v)];
            let (pos, neg) = col_of_var[v];
            t[(i, pos)] += a;
            if let Some(neg) = neg {
                t[(i, neg)] -= a;
            }
        }
        t[(i, n_cols)] = row_sign[i] * lp.rhs[i];
    }
    let mut basis = vec![usize::MAX; m];
    let mut next_slack = n_struct;
    let mut next_art = n_struct + n_slack;
    let mut art_cols = Vec::new();
    for i in 0..m {
        match senses[i] {
            RowSense::Le => {
                t[(i, next_slack)] = 1.0;
                basis[i] = next_slack;
                next_slack += 1;
            }
            RowSense::Ge => {
                t[(i, next_slack)] = -1.0;
                next_slack += 1;
                t[(i, next_art)] = 1.0;
                basis[i] = next_art;
                art_cols.push(next_art);
                next_art += 1;
            }
            RowSense::Eq => {
                t[(i, next_art)] = 1.0;
                basis[i] = next_art;
                art_cols.push(next_art);
                next_art += 1;
            }
        }
    }
    let mut tab = Tableau { t, basis, n_cols };
    let mut iterations = 0usize;

    // phase 1: maximize -(sum of artificials)
    if !art_cols.is_empty() {
        let mut costs = vec![0.0; n_cols];
        for &c in &art_cols {
            costs[c] = -1.0;
        }
        let allowed = vec![true; n_cols];
        iterations += optimize(&mut tab, &costs, &allowed)?;
        let infeas: f64 = (0..m)
            .filter(|&i| art_cols.contains(&tab.basis[i]))
            .map(|i| tab.rhs(i))
            .sum();
        if infeas > 1e-8 {
            return Err(Error::Infeasible);
        }
        // drive remaining artificials out of the basis
        let mut drop_rows = Vec::new();
        for i in 0..m {
            if !art_cols.contains(&tab.basis[i]) {
                continue;
            }
            let mut pivot_col = None;
            for j in 0..n_struct + n_slack {
                if tab.t[(i, j)].abs() > 1e-9 {
                    pivot_col = Some(j);
                    break;
                }
            }
            match pivot_col {
                Some(j) => {
                    tab.pivot(i, j);
                    iterations += 1;
                }
                None => drop_rows.push(i), // redundant row
            }
        }
        if !drop_rows.is_empty() {
            let keep: Vec<usize> = (0..m).filter(|i| !drop_rows.contains(i)).collect();
            let mut nt = DMatrix::zeros(keep.len(), n_cols + 1);
            let mut nb = Vec::with_capacity(keep.len());
            for (ni, &oi) in keep.iter().enumerate() {
                for j in 0..=n_cols {
                    nt[(ni, j)] = tab.t[(oi, j)];
                }
                nb.push(tab.basis[oi]);
            }
            tab = Tableau {
                t: nt,
                basis: nb,
                n_cols,
            };
        }
    }

    // phase 2: original objective over structural + slack columns
    let sign = match lp.direction {
        Direction::Maximize => 1.0,
        Direction::Minimize => -1.0,
    };
    let mut costs = vec![0.0; n_cols];
    for v in 0..n_orig {
        let (pos, neg) = col_of_var[v];
        costs[pos] = sign * lp.objective[v];
        if let Some(neg) = neg {
            costs[neg] = -sign * lp.objective[v];
        }
    }
    let mut allowed = vec![true; n_cols];
    for &c in &art_cols {
        allowed[c] = false;
    }
    iterations += optimize(&mut tab, &costs, &allowed)?;

    // extract solution
    let mut vals = vec![0.0; n_cols];
    for (i, &b) in tab.basis.iter().enumerate() {
        vals[b] = tab.rhs(i);
    }
    let mut x = DVector::zeros(n_orig);
    for v in 0..n_orig {
        let (pos, neg) = col_of_var[v];
        x[v] = vals[pos] - neg.map_or(0.0, |c| vals[c]);
    }
    let objective_value = lp.objective.dot(&x);
    Ok(LpSolution {
        x,
        objective_value,
        status: LpStatus::Optimal,
        iterations,
    })
}
