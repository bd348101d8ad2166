//! The average-reward linear-programming pair.
//!
//! The primal optimizes over occupancy measures: maximize
//! `sum_{s,a} mu(s,a) R(s,a)` subject to `mu >= 0`, total mass 1, and the
//! stationarity (flow) constraints. Its dual optimizes over value
//! functions: minimize `rbar` subject to
//! `rbar + V(s) - sum_{s'} P(s,a,s') V(s') >= R(s,a)` for every pair, with
//! `V` anchored at state 0 to remove the translation degree of freedom.
//! At an optimum the two objectives coincide and the dual solution solves
//! the average-reward Bellman optimality equations.

mod simplex;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::mdp::{policy_from_occupancy, OccupancyMeasure, Policy, TabularMdp};
use crate::trace::fmt_sig12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowSense {
    Le,
    Eq,
    Ge,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LowerBound {
    /// variable constrained to `x >= 0`
    Zero,
    /// free variable
    Free,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Maximize,
    Minimize,
}

/// Dense LP carrier. Upper bounds are always `+inf`.
#[derive(Debug, Clone)]
pub struct LinearProgram {
    pub direction: Direction,
    pub objective: DVector<f64>,
    pub constraint_matrix: DMatrix<f64>,
    pub rhs: DVector<f64>,
    pub senses: Vec<RowSense>,
    pub lower_bounds: Vec<LowerBound>,
}

impl LinearProgram {
    pub(crate) fn check_shapes(&self) -> Result<()> {
        let n = self.objective.len();
        let m = self.constraint_matrix.nrows();
        if self.constraint_matrix.ncols() != n
            || self.rhs.len() != m
            || self.senses.len() != m
            || self.lower_bounds.len() != n
        {
            return Err(Error::DimensionMismatch("linear program blocks".into()));
        }
        if self.objective.iter().any(|c| !c.is_finite())
            || self.constraint_matrix.iter().any(|c| !c.is_finite())
            || self.rhs.iter().any(|c| !c.is_finite())
        {
            return Err(Error::NonFinite("linear program data".into()));
        }
        Ok(())
    }

    pub fn n_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn n_rows(&self) -> usize {
        self.constraint_matrix.nrows()
    }

    /// Plain-text listing: direction, objective row, one constraint per
    /// line with sense and rhs, then the variable bounds.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        out.push_str(match self.direction {
            Direction::Maximize => "maximize\n",
            Direction::Minimize => "minimize\n",
        });
        let coeffs: Vec<String> = self.objective.iter().map(|&c| fmt_sig12(c)).collect();
        out.push_str(&format!("objective: {}\n", coeffs.join(" ")));
        out.push_str("subject to\n");
        for i in 0..self.n_rows() {
            let row: Vec<String> = (0..self.n_vars())
                .map(|j| fmt_sig12(self.constraint_matrix[(i, j)]))
                .collect();
            let sense = match self.senses[i] {
                RowSense::Le => "<=",
                RowSense::Eq => "=",
                RowSense::Ge => ">=",
            };
            out.push_str(&format!(
                "{} {} {}\n",
                row.join(" "),
                sense,
                fmt_sig12(self.rhs[i])
            ));
        }
        out.push_str("bounds\n");
        for (j, b) in self.lower_bounds.iter().enumerate() {
            out.push_str(&match b {
                LowerBound::Zero => format!("x{j} >= 0\n"),
                LowerBound::Free => format!("x{j} free\n"),
            });
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

#[derive(Debug, Clone)]
pub struct LpSolution {
    pub x: DVector<f64>,
    pub objective_value: f64,
    pub status: LpStatus,
    pub iterations: usize,
}

impl LpSolution {
    /// Largest violation of row senses (used by tests to check the
    /// 1e-8 feasibility contract) and of lower bounds (1e-10 contract).
    pub fn feasibility_error(&self, lp: &LinearProgram) -> (f64, f64) {
        let ax = &lp.constraint_matrix * &self.x;
        let mut row_err: f64 = 0.0;
        for i in 0..lp.n_rows() {
            let defect = match lp.senses[i] {
                RowSense::Le => (ax[i] - lp.rhs[i]).max(0.0),
                RowSense::Ge => (lp.rhs[i] - ax[i]).max(0.0),
                RowSense::Eq => (ax[i] - lp.rhs[i]).abs(),
            };
            row_err = row_err.max(defect);
        }
        let mut bound_err: f64 = 0.0;
        for (j, b) in lp.lower_bounds.iter().enumerate() {
            if matches!(b, LowerBound::Zero) {
                bound_err = bound_err.max((-self.x[j]).max(0.0));
            }
        }
        (row_err, bound_err)
    }
}

/// Deterministic dense simplex solve (Bland's rule).
pub fn solve_lp(lp: &LinearProgram) -> Result<LpSolution> {
    simplex::solve_lp(lp)
}

/// Occupancy-measure LP: variables `mu(s,a) >= 0` in row-major order, one
/// total-mass row, and one flow row per state except the last (the flow
/// rows sum to zero, so one is redundant and dropped).
pub fn build_primal_lp(mdp: &TabularMdp) -> LinearProgram {
    let (n, m) = (mdp.n_states(), mdp.n_actions());
    let n_vars = n * m;
    let n_rows = 1 + n.saturating_sub(1);
    let mut a = DMatrix::zeros(n_rows, n_vars);
    let mut rhs = DVector::zeros(n_rows);
    for j in 0..n_vars {
        a[(0, j)] = 1.0;
    }
    rhs[0] = 1.0;
    for sp in 0..n.saturating_sub(1) {
        for s in 0..n {
            for act in 0..m {
                let j = s * m + act;
                let mut coeff = -mdp.prob(s, act, sp);
                if s == sp {
                    coeff += 1.0;
                }
                a[(1 + sp, j)] = coeff;
            }
        }
    }
    let mut objective = DVector::zeros(n_vars);
    for s in 0..n {
        for act in 0..m {
            objective[s * m + act] = mdp.reward(s, act);
        }
    }
    LinearProgram {
        direction: Direction::Maximize,
        objective,
        constraint_matrix: a,
        rhs,
        senses: vec![RowSense::Eq; n_rows],
        lower_bounds: vec![LowerBound::Zero; n_vars],
    }
}

/// Value-function LP: free variables `[rbar, V(0), ..., V(n-1)]`, minimize
/// `rbar` subject to one `>=` row per state-action pair plus the anchor
/// `V(0) = 0`.
pub fn build_dual_lp(mdp: &TabularMdp) -> LinearProgram {
    let (n, m) = (mdp.n_states(), mdp.n_actions());
    let n_vars = 1 + n;
    let n_rows = n * m + 1;
    let mut a = DMatrix::zeros(n_rows, n_vars);
    let mut rhs = DVector::zeros(n_rows);
    let mut senses = Vec::with_capacity(n_rows);
    for s in 0..n {
        for act in 0..m {
            let i = s * m + act;
            a[(i, 0)] = 1.0;
            for sp in 0..n {
                let mut coeff = -mdp.prob(s, act, sp);
                if sp == s {
                    coeff += 1.0;
                }
                a[(i, 1 + sp)] = coeff;
            }
            rhs[i] = mdp.reward(s, act);
            senses.push(RowSense::Ge);
        }
    }
    a[(n * m, 1)] = 1.0;
    rhs[n * m] = 0.0;
    senses.push(RowSense::Eq);
    let mut objective = DVector::zeros(n_vars);
    objective[0] = 1.0;
    LinearProgram {
        direction: Direction::Minimize,
        objective,
        constraint_matrix: a,
        rhs,
        senses,
        lower_bounds: vec![LowerBound::Free; n_vars],
    }
}

/// Solves the dual LP and canonicalizes the optimal value function: among
/// the dual optima (`rbar` pinned at its minimum) a second solve minimizes
/// `sum_s V(s)`, which selects the least feasible `V` — the solution of the
/// Bellman optimality equations. A plain minimum-`rbar` vertex may leave
/// slack at states the optimal policy never visits.
pub fn solve_dual_lp(mdp: &TabularMdp) -> Result<LpSolution> {
    let lp = build_dual_lp(mdp);
    let first = solve_lp(&lp)?;
    let n = mdp.n_states();
    let mut pinned = lp.clone();
    let extra = DMatrix::from_fn(1, pinned.n_vars(), |_, j| if j == 0 { 1.0 } else { 0.0 });
    pinned.constraint_matrix = DMatrix::from_fn(lp.n_rows() + 1, lp.n_vars(), |i, j| {
        if i < lp.n_rows() {
            lp.constraint_matrix[(i, j)]
        } else {
            extra[(0, j)]
        }
    });
    pinned.rhs = DVector::from_fn(lp.n_rows() + 1, |i, _| {
        if i < lp.n_rows() {
            lp.rhs[i]
        } else {
            first.objective_value
        }
    });
    pinned.senses.push(RowSense::Eq);
    pinned.objective = DVector::from_fn(lp.n_vars(), |j, _| if j == 0 { 0.0 } else { 1.0 });
    pinned.direction = Direction::Minimize;
    match solve_lp(&pinned) {
        Ok(second) => Ok(LpSolution {
            objective_value: second.x[0],
            x: second.x,
            status: LpStatus::Optimal,
            iterations: first.iterations + second.iterations,
        }),
        // fall back to the plain optimum if the pinned re-solve stumbles
        Err(_) => {
            let _ = n;
            Ok(first)
        }
    }
}

/// Strong-duality report for a solved primal/dual pair.
#[derive(Debug, Clone)]
pub struct DualityReport {
    pub gap: f64,
    pub bellman_residual: f64,
    pub passed: bool,
}

pub const GAP_TOL: f64 = 1e-7;
pub const BELLMAN_TOL: f64 = 1e-6;

/// Checks `|primal - dual|` and the Bellman optimality residual
/// `max_s |V(s) - max_a (R(s,a) - rbar + sum_{s'} P(s,a,s') V(s'))|`
/// using the dual solution's value function.
pub fn verify_strong_duality(
    primal: &LpSolution,
    dual: &LpSolution,
    mdp: &TabularMdp,
) -> Result<DualityReport> {
    if primal.status != LpStatus::Optimal || dual.status != LpStatus::Optimal {
        return Err(Error::NotOptimal);
    }
    let gap = (primal.objective_value - dual.objective_value).abs();
    let rbar = dual.objective_value;
    let n = mdp.n_states();
    let v = DVector::from_fn(n, |s, _| dual.x[1 + s]);
    let mut residual: f64 = 0.0;
    for s in 0..n {
        let mut best = f64::NEG_INFINITY;
        for a in 0..mdp.n_actions() {
            let mut future = 0.0;
            for (sp, &p) in mdp.successors(s, a).iter().enumerate() {
                future += p * v[sp];
            }
            best = best.max(mdp.reward(s, a) - rbar + future);
        }
        residual = residual.max((v[s] - best).abs());
    }
    Ok(DualityReport {
        gap,
        bellman_residual: residual,
        passed: gap <= GAP_TOL && residual <= BELLMAN_TOL,
    })
}

/// Reads the occupancy part of an optimal primal solution back into a
/// policy.
pub fn extract_policy(primal: &LpSolution, mdp: &TabularMdp) -> Result<Policy> {
    if primal.status != LpStatus::Optimal {
        return Err(Error::NotOptimal);
    }
    let (n, m) = (mdp.n_states(), mdp.n_actions());
    if primal.x.len() != n * m {
        return Err(Error::ShapeMismatch("primal solution vs mdp".into()));
    }
    let mu = DMatrix::from_fn(n, m, |s, a| primal.x[s * m + a].max(0.0));
    let mu = OccupancyMeasure::new(mu)?;
    Ok(policy_from_occupancy(&mu))
}

/// The occupancy measure carried by an optimal primal solution.
pub fn extract_occupancy(primal: &LpSolution, mdp: &TabularMdp) -> Result<OccupancyMeasure> {
    if primal.status != LpStatus::Optimal {
        return Err(Error::NotOptimal);
    }
    let (n, m) = (mdp.n_states(), mdp.n_actions());
    let mu = DMatrix::from_fn(n, m, |s, a| primal.x[s * m + a].max(0.0));
    OccupancyMeasure::new(mu)
}
