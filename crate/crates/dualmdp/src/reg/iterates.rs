//! Policy iterations built on the regularized solvers: mirror descent over
//! occupancies, the closed-form trust-region update with exact bias values,
//! and the dual-averaging softmax update.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::mdp::{
    average_reward, policy_bias_values, policy_from_occupancy, OccupancyMeasure, Policy,
    TabularMdp,
};
use crate::reg::{
    solve_conditional_dual, solve_shannon_dual, BregmanKind, Regularizer, SolverOptions,
};
use crate::trace::SolveTrace;

/// Convergence threshold on the l1 movement of mirror-descent iterates.
pub const MD_STEP_TOL: f64 = 1e-9;

/// Mirror descent over the flow polytope: each step maximizes
/// `sum mu R - (1/eta_step) D(mu || mu_k)` via the matching dual solver
/// with the previous iterate as reference, starting from the uniform
/// occupancy. Stops when the iterate moves less than `MD_STEP_TOL` in l1
/// or after `max_iters` steps. The trace records
/// `(iter, average reward, l1 movement, eta_step)` per iterate.
pub fn mirror_descent_solve(
    mdp: &TabularMdp,
    eta_step: f64,
    kind: BregmanKind,
    max_iters: usize,
    opts: &SolverOptions,
) -> Result<(Policy, SolveTrace)> {
    if !(eta_step > 0.0) {
        return Err(Error::InvalidInput(format!(
            "eta_step {eta_step} must be positive"
        )));
    }
    let mut mu = OccupancyMeasure::uniform(mdp.n_states(), mdp.n_actions());
    let mut trace = SolveTrace::new();
    for k in 0..max_iters {
        if opts.cancelled() {
            trace.finish(false, "cancelled");
            return Err(Error::IterationLimit { trace });
        }
        let reg = match Regularizer::new(kind, mu.clone()) {
            Ok(reg) => reg,
            Err(Error::SupportViolation { .. }) => {
                // the iterate reached the boundary of the positive orthant;
                // the exponential update cannot continue past it
                trace.finish(false, "reference positivity lost");
                return Ok((policy_from_occupancy(&mu), trace));
            }
            Err(e) => return Err(e),
        };
        let (sol, _) = match kind {
            BregmanKind::Shannon => solve_shannon_dual(mdp, eta_step, &reg, opts)?,
            BregmanKind::Conditional => solve_conditional_dual(mdp, eta_step, &reg, opts)?,
        };
        let movement = sol.mu.l1_distance(&mu);
        let avg = average_reward(&sol.mu, mdp)?;
        trace.push(k, avg, movement, eta_step);
        mu = sol.mu;
        if movement <= MD_STEP_TOL {
            trace.finish(true, "iterate movement below tolerance");
            return Ok((policy_from_occupancy(&mu), trace));
        }
    }
    trace.finish(false, "iteration limit reached");
    Ok((policy_from_occupancy(&mu), trace))
}

/// Advantage-like table `R(s,a) + sum_{s'} P(s,a,s') V(s') - V(s)` for the
/// exact bias values of `pi`.
fn bias_advantages(pi: &Policy, mdp: &TabularMdp) -> Result<DMatrix<f64>> {
    let vs = policy_bias_values(pi, mdp)?;
    let pv = mdp.transition_values(&vs.v);
    let (n, m) = (mdp.n_states(), mdp.n_actions());
    let mut adv = DMatrix::zeros(n, m);
    for s in 0..n {
        for a in 0..m {
            adv[(s, a)] = mdp.reward(s, a) + pv[(s, a)] - vs.v[s];
        }
    }
    Ok(adv)
}

fn softmax_rows(scores: &DMatrix<f64>) -> Policy {
    let (n, m) = (scores.nrows(), scores.ncols());
    let mut probs = DMatrix::zeros(n, m);
    for s in 0..n {
        let zmax = scores.row(s).max();
        let mut total = 0.0;
        for a in 0..m {
            let w = (scores[(s, a)] - zmax).exp();
            probs[(s, a)] = w;
            total += w;
        }
        for a in 0..m {
            probs[(s, a)] /= total;
        }
    }
    Policy::new(probs).expect("normalized rows")
}

/// Closed-form trust-region update
/// `pi_{k+1}(a|s) ~ pi_k(a|s) exp(eta (R + P V^{pi_k} - V^{pi_k}))` with
/// exact average-reward bias values. Iterating the map converges to an
/// optimal policy and never decreases the average reward.
pub fn trpo_md_update(pi_k: &Policy, mdp: &TabularMdp, eta: f64) -> Result<Policy> {
    if !(eta > 0.0) {
        return Err(Error::InvalidInput(format!("eta {eta} must be positive")));
    }
    let adv = bias_advantages(pi_k, mdp)?;
    let (n, m) = (mdp.n_states(), mdp.n_actions());
    let mut scores = DMatrix::zeros(n, m);
    for s in 0..n {
        for a in 0..m {
            let base = pi_k.prob(s, a);
            scores[(s, a)] = if base > 0.0 {
                base.ln() + eta * adv[(s, a)]
            } else {
                f64::NEG_INFINITY
            };
        }
    }
    // rows with -inf entries: exp(-inf) = 0, handled by the max shift as
    // long as some entry is finite (rows of a policy always have mass)
    Ok(softmax_rows(&scores))
}

/// Dual-averaging update
/// `pi_{k+1}(a|s) ~ exp(eta_k (R + P V^{pi_k} - V^{pi_k}))`: the
/// entropy-regularized greedy step with no reference-policy factor, which
/// is the defining difference from the trust-region map. `schedule(k)`
/// supplies the scale for step `k`. No convergence is asserted for the
/// iteration; traces are emitted for inspection by the callers.
pub fn dual_averaging_update(
    pi_k: &Policy,
    mdp: &TabularMdp,
    schedule: impl Fn(usize) -> f64,
    k: usize,
) -> Result<Policy> {
    let eta_k = schedule(k);
    if !(eta_k > 0.0) {
        return Err(Error::InvalidInput(format!(
            "schedule produced non-positive eta {eta_k} at step {k}"
        )));
    }
    let adv = bias_advantages(pi_k, mdp)?;
    Ok(softmax_rows(&adv.map(|x| eta_k * x)))
}
