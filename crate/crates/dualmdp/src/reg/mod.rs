//! Entropy-regularized average-reward objectives and their duals.
//!
//! The regularized problem maximizes `sum mu R - (1/eta) W(mu)` over the
//! flow polytope, where `W` is a Bregman divergence to a strictly positive
//! reference occupancy: either the relative-entropy divergence on the joint
//! distribution ("Shannon") or the conditional-entropy divergence on the
//! per-state action distributions ("conditional"). Each case is solved
//! through its dual — an unconstrained smooth minimization for the Shannon
//! case, a scalar root-finding problem wrapped around a soft value
//! iteration for the conditional case — and the primal is recovered from
//! the exponential-family form of the optimizer.
//!
//! The same machinery powers three policy iterations: mirror descent
//! (re-regularizing against the previous iterate), the closed-form
//! trust-region update with exact bias values, and the dual-averaging
//! update that regularizes against nothing but entropy.

mod conditional;
mod iterates;
mod shannon;

pub use conditional::{conditional_policy, solve_conditional_dual};
pub use iterates::{dual_averaging_update, mirror_descent_solve, trpo_md_update};
pub use shannon::{shannon_dual, solve_shannon_dual};

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::mdp::{policy_from_occupancy, OccupancyMeasure, Policy, TabularMdp, ValueSolution};

/// Which Bregman divergence regularizes the objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BregmanKind {
    /// Relative entropy on the joint state-action distribution.
    Shannon,
    /// Conditional entropy: state-weighted KL between action conditionals.
    Conditional,
}

/// A Bregman regularizer with its reference distribution. The reference
/// must be strictly positive everywhere: the exponential-family optimizers
/// cannot put mass on pairs the reference excludes.
#[derive(Debug, Clone)]
pub struct Regularizer {
    kind: BregmanKind,
    reference: OccupancyMeasure,
    reference_policy: Policy,
}

impl Regularizer {
    pub fn new(kind: BregmanKind, reference: OccupancyMeasure) -> Result<Self> {
        for s in 0..reference.n_states() {
            for a in 0..reference.n_actions() {
                let v = reference.get(s, a);
                if !(v > 0.0) || !v.is_finite() {
                    return Err(Error::SupportViolation { state: s, action: a });
                }
            }
        }
        let reference_policy = policy_from_occupancy(&reference);
        Ok(Regularizer {
            kind,
            reference,
            reference_policy,
        })
    }

    /// Uniform reference over all pairs — the default.
    pub fn uniform(kind: BregmanKind, mdp: &TabularMdp) -> Self {
        Regularizer::new(
            kind,
            OccupancyMeasure::uniform(mdp.n_states(), mdp.n_actions()),
        )
        .expect("uniform reference is strictly positive")
    }

    pub fn kind(&self) -> BregmanKind {
        self.kind
    }

    pub fn reference(&self) -> &OccupancyMeasure {
        &self.reference
    }

    pub fn reference_policy(&self) -> &Policy {
        &self.reference_policy
    }
}

/// Solver knobs shared by the regularized solvers. `cancel` is a
/// cooperative stop flag checked once per outer iteration; a cancelled
/// solve returns `Error::IterationLimit` with the partial trace.
#[derive(Debug, Clone)]
pub struct SolverOptions {
    /// Gradient infinity-norm target for the Shannon dual descent.
    pub grad_tol: f64,
    /// Outer iteration cap.
    pub max_iters: usize,
    /// Fixed-point displacement target of the inner soft value iteration.
    pub inner_tol: f64,
    /// Relative bracket width at which the bisection stops.
    pub bisect_tol: f64,
    pub cancel: Option<Arc<AtomicBool>>,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            grad_tol: 1e-8,
            max_iters: 100_000,
            inner_tol: 1e-10,
            bisect_tol: 1e-13,
            cancel: None,
        }
    }
}

impl SolverOptions {
    pub(crate) fn cancelled(&self) -> bool {
        self.cancel
            .as_ref()
            .map(|c| c.load(Ordering::Relaxed))
            .unwrap_or(false)
    }
}

/// Output of a regularized solve: the recovered occupancy, the dual value
/// function (`value.v`), both objective values, and their gap.
///
/// `value.residual` reports the solver's optimality defect: the
/// pre-correction flow violation for the Shannon case, the fixed-point
/// equation residual for the conditional case.
#[derive(Debug, Clone)]
pub struct RegularizedSolution {
    pub mu: OccupancyMeasure,
    pub value: ValueSolution,
    pub eta: f64,
    pub primal_objective: f64,
    pub dual_objective: f64,
    pub gap: f64,
}

/// Bregman divergence of `mu` to the regularizer's reference.
///
/// Shannon case: `sum mu log(mu/mu') - sum mu + sum mu'` (the generalized
/// KL, which reduces to plain KL on normalized inputs). Conditional case:
/// `sum_{s,a} mu(s,a) log(pi_mu(a|s) / pi_ref(a|s))`.
pub fn bregman_divergence(reg: &Regularizer, mu: &OccupancyMeasure) -> Result<f64> {
    let refm = reg.reference();
    if mu.n_states() != refm.n_states() || mu.n_actions() != refm.n_actions() {
        return Err(Error::ShapeMismatch("occupancy vs reference".into()));
    }
    match reg.kind() {
        BregmanKind::Shannon => {
            let mut total = 0.0;
            for s in 0..mu.n_states() {
                for a in 0..mu.n_actions() {
                    let m = mu.get(s, a);
                    let r = refm.get(s, a);
                    if m > 0.0 {
                        total += m * (m / r).ln() - m;
                    }
                    total += r;
                }
            }
            Ok(total)
        }
        BregmanKind::Conditional => {
            let pi_mu = policy_from_occupancy(mu);
            let pi_ref = reg.reference_policy();
            let mut total = 0.0;
            for s in 0..mu.n_states() {
                for a in 0..mu.n_actions() {
                    let m = mu.get(s, a);
                    if m > 0.0 {
                        total += m * (pi_mu.prob(s, a) / pi_ref.prob(s, a)).ln();
                    }
                }
            }
            Ok(total)
        }
    }
}

/// The regularized objective `sum mu R - (1/eta) W(mu)`.
pub fn regularized_objective(
    mdp: &TabularMdp,
    eta: f64,
    reg: &Regularizer,
    mu: &OccupancyMeasure,
) -> Result<f64> {
    if !(eta > 0.0) {
        return Err(Error::InvalidInput(format!("eta {eta} must be positive")));
    }
    let avg = crate::mdp::average_reward(mu, mdp)?;
    Ok(avg - bregman_divergence(reg, mu)? / eta)
}
