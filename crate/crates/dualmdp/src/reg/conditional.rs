//! Conditional-entropy dual: maximize the scalar offset `lambda` subject to
//! the soft fixed-point equations
//! `V(s) = (1/eta) log sum_a pi_ref(a|s) exp(eta (R(s,a) - lambda + P V))`.
//!
//! The offset enters additively, so the drift of the anchored soft value
//! iteration is linear in `lambda`; an outer bisection on `[min R, max R]`
//! against the drift sign finds the root while the inner loop solves the
//! relative fixed point. The inner iteration is averaged with weight 1/2
//! (an aperiodicity transform), which keeps it convergent on periodic
//! chains such as deterministic cycles. The optimal policy is recovered
//! from the exponential-family form and the occupancy from its stationary
//! distribution.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::mdp::{
    average_reward, occupancy_from_policy, Policy, TabularMdp, ValueSolution,
};
use crate::reg::{bregman_divergence, RegularizedSolution, Regularizer, SolverOptions};
use crate::trace::SolveTrace;

/// One application of the soft backup for a fixed offset.
fn soft_backup(
    mdp: &TabularMdp,
    eta: f64,
    pi_ref: &Policy,
    lambda: f64,
    v: &DVector<f64>,
) -> DVector<f64> {
    let (n, m) = (mdp.n_states(), mdp.n_actions());
    let mut out = DVector::zeros(n);
    for s in 0..n {
        let mut zmax = f64::NEG_INFINITY;
        let mut zs = Vec::with_capacity(m);
        for a in 0..m {
            let mut pv = 0.0;
            for (sp, &p) in mdp.successors(s, a).iter().enumerate() {
                pv += p * v[sp];
            }
            let z = pi_ref.prob(s, a).ln() + eta * (mdp.reward(s, a) - lambda + pv);
            zs.push(z);
            zmax = zmax.max(z);
        }
        let total: f64 = zs.iter().map(|z| (z - zmax).exp()).sum();
        out[s] = (zmax + total.ln()) / eta;
    }
    out
}

/// Damped relative soft value iteration at offset `lambda`, anchored at
/// state 0. Returns the relative fixed point and its drift
/// `T_lambda(V)(s0)`; the drift is zero exactly at the optimal offset.
fn inner_fixed_point(
    mdp: &TabularMdp,
    eta: f64,
    pi_ref: &Policy,
    lambda: f64,
    v0: &DVector<f64>,
    opts: &SolverOptions,
) -> Result<(DVector<f64>, f64)> {
    let mut v = v0.clone();
    let cap = opts.max_iters.max(1000);
    for _ in 0..cap {
        let tv = soft_backup(mdp, eta, pi_ref, lambda, &v);
        let drift = tv[0];
        let relative = tv.map(|x| x - drift);
        let displacement = (&relative - &v).amax();
        // averaged update keeps periodic chains convergent
        v = 0.5 * &v + 0.5 * relative;
        if displacement <= opts.inner_tol {
            return Ok((v, drift));
        }
    }
    Err(Error::NonConvergence(
        "inner soft value iteration did not reach tolerance".into(),
    ))
}

/// Policy of the exponential-family form
/// `pi(a|s) ~ pi_ref(a|s) exp(eta (R(s,a) - lambda + P V - V))`, rows
/// normalized with a max shift. Strictly positive wherever the reference
/// is; invariant under constant shifts of `V` (the per-row constants
/// cancel in the normalization, so `lambda` only conditions the scale).
pub fn conditional_policy(
    v: &DVector<f64>,
    lambda: f64,
    mdp: &TabularMdp,
    eta: f64,
    reg: &Regularizer,
) -> Policy {
    let (n, m) = (mdp.n_states(), mdp.n_actions());
    let pi_ref = reg.reference_policy();
    let mut probs = DMatrix::zeros(n, m);
    for s in 0..n {
        let mut zmax = f64::NEG_INFINITY;
        let mut zs = Vec::with_capacity(m);
        for a in 0..m {
            let mut pv = 0.0;
            for (sp, &p) in mdp.successors(s, a).iter().enumerate() {
                pv += p * v[sp];
            }
            let z = pi_ref.prob(s, a).ln() + eta * (mdp.reward(s, a) - lambda + pv - v[s]);
            zs.push(z);
            zmax = zmax.max(z);
        }
        let total: f64 = zs.iter().map(|z| (z - zmax).exp()).sum();
        for a in 0..m {
            probs[(s, a)] = (zs[a] - zmax).exp() / total;
        }
    }
    Policy::new(probs).expect("normalized rows")
}

/// Solves the conditional-entropy dual. The trace records one row per
/// bisection step: `(iter, lambda, drift, bracket width)`.
pub fn solve_conditional_dual(
    mdp: &TabularMdp,
    eta: f64,
    reg: &Regularizer,
    opts: &SolverOptions,
) -> Result<(RegularizedSolution, SolveTrace)> {
    if !(eta > 0.0) {
        return Err(Error::InvalidInput(format!("eta {eta} must be positive")));
    }
    let pi_ref = reg.reference_policy().clone();
    let span = mdp.max_reward() - mdp.min_reward();
    let pad = 1e-9 * (1.0 + span.abs()) + 1e-12;
    let mut lo = mdp.min_reward() - pad;
    let mut hi = mdp.max_reward() + pad;
    let mut v = DVector::zeros(mdp.n_states());
    let (v_lo, drift_lo) = inner_fixed_point(mdp, eta, &pi_ref, lo, &v, opts)?;
    v = v_lo;
    let (v_hi, drift_hi) = inner_fixed_point(mdp, eta, &pi_ref, hi, &v, opts)?;
    v = v_hi;
    if drift_lo < 0.0 || drift_hi > 0.0 {
        return Err(Error::BisectionBracketFailure {
            lo,
            hi,
            lo_drift: drift_lo,
            hi_drift: drift_hi,
        });
    }
    let mut trace = SolveTrace::new();
    let mut iter = 0usize;
    while hi - lo > opts.bisect_tol * (1.0 + lo.abs().max(hi.abs())) && iter < 200 {
        if opts.cancelled() {
            trace.finish(false, "cancelled");
            return Err(Error::IterationLimit { trace });
        }
        let mid = 0.5 * (lo + hi);
        let (v_mid, drift) = inner_fixed_point(mdp, eta, &pi_ref, mid, &v, opts)?;
        v = v_mid;
        trace.push(iter, mid, drift, hi - lo);
        if drift > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        iter += 1;
    }
    let lambda = 0.5 * (lo + hi);
    let (v_final, _) = inner_fixed_point(mdp, eta, &pi_ref, lambda, &v, opts)?;
    let shift = v_final[0];
    let v_final = v_final.map(|x| x - shift);
    // direct residual of the fixed-point equations at the returned pair
    let residual = (&soft_backup(mdp, eta, &pi_ref, lambda, &v_final) - &v_final).amax();
    if residual > 1e-8 {
        trace.finish(false, format!("fixed-point residual {residual} above 1e-8"));
        return Err(Error::IterationLimit { trace });
    }
    trace.finish(true, "bisection bracket closed");

    let policy = conditional_policy(&v_final, lambda, mdp, eta, reg);
    let mu = occupancy_from_policy(&policy, mdp)?;
    let avg = average_reward(&mu, mdp)?;
    let primal_objective = avg - bregman_divergence(reg, &mu)? / eta;
    let value = ValueSolution {
        v: v_final,
        avg_reward: avg,
        residual,
    };
    Ok((
        RegularizedSolution {
            mu,
            value,
            eta,
            primal_objective,
            dual_objective: lambda,
            gap: (primal_objective - lambda).abs(),
        },
        trace,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generate::{generate_mdp, GeneratorSpec};
    use crate::reg::BregmanKind;

    fn one_state_mdp(rewards: &[f64]) -> TabularMdp {
        let m = rewards.len();
        TabularMdp::new(
            1,
            m,
            vec![1.0; m],
            DMatrix::from_row_slice(1, m, rewards),
            None,
        )
        .unwrap()
    }

    #[test]
    fn single_state_closed_form() {
        // lambda* = log((1 + e)/2), pi*(a1) = e/(1 + e)
        let mdp = one_state_mdp(&[0.0, 1.0]);
        let reg = Regularizer::uniform(BregmanKind::Conditional, &mdp);
        let (sol, trace) =
            solve_conditional_dual(&mdp, 1.0, &reg, &SolverOptions::default()).unwrap();
        assert!(trace.converged);
        let e = std::f64::consts::E;
        assert!(
            (sol.dual_objective - ((1.0 + e) / 2.0).ln()).abs() < 1e-10,
            "lambda {}",
            sol.dual_objective
        );
        let pi = crate::mdp::policy_from_occupancy(&sol.mu);
        assert!((pi.prob(0, 1) - e / (1.0 + e)).abs() < 1e-10);
    }

    #[test]
    fn large_eta_toggle_approaches_lp() {
        let mdp = generate_mdp(&GeneratorSpec::Chain { n: 2 }, 0).unwrap();
        let reg = Regularizer::uniform(BregmanKind::Conditional, &mdp);
        let (sol, _) =
            solve_conditional_dual(&mdp, 1000.0, &reg, &SolverOptions::default()).unwrap();
        assert!(
            (sol.dual_objective - 1.0).abs() < 1e-2,
            "lambda {}",
            sol.dual_objective
        );
        let pi = crate::mdp::policy_from_occupancy(&sol.mu);
        assert!(pi.prob(0, 1) > 0.99);
        assert!(pi.prob(1, 1) > 0.99);
    }

    #[test]
    fn constant_rewards_return_reference() {
        let c = 0.7;
        let mdp = generate_mdp(
            &GeneratorSpec::Garnet {
                states: 4,
                actions: 3,
                branching: 2,
            },
            3,
        )
        .unwrap();
        let mdp = mdp
            .with_rewards(DMatrix::from_element(4, 3, c))
            .unwrap();
        let reg = Regularizer::uniform(BregmanKind::Conditional, &mdp);
        let (sol, _) =
            solve_conditional_dual(&mdp, 2.0, &reg, &SolverOptions::default()).unwrap();
        assert!((sol.dual_objective - c).abs() < 1e-10);
        assert!(sol.value.v.amax() < 1e-9, "V should vanish");
        let pi = crate::mdp::policy_from_occupancy(&sol.mu);
        assert!(pi.linf_distance(reg.reference_policy()) < 1e-9);
    }

    #[test]
    fn residual_meets_contract_on_random_suite() {
        for seed in [1u64, 2, 3] {
            let mdp = generate_mdp(
                &GeneratorSpec::Garnet {
                    states: 5,
                    actions: 3,
                    branching: 2,
                },
                seed,
            )
            .unwrap();
            let reg = Regularizer::uniform(BregmanKind::Conditional, &mdp);
            for eta in [0.1, 1.0, 10.0, 100.0] {
                let (sol, _) =
                    solve_conditional_dual(&mdp, eta, &reg, &SolverOptions::default()).unwrap();
                assert!(
                    sol.value.residual <= 1e-8,
                    "seed {seed} eta {eta}: residual {}",
                    sol.value.residual
                );
            }
        }
    }

    #[test]
    fn policy_reduces_to_reference_without_signal() {
        let mdp = one_state_mdp(&[0.0, 0.0, 0.0]);
        let reg = Regularizer::uniform(BregmanKind::Conditional, &mdp);
        let v = DVector::zeros(1);
        let pi = conditional_policy(&v, 0.0, &mdp, 1.0, &reg);
        for a in 0..3 {
            assert!((pi.prob(0, a) - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn policy_approaches_reference_as_eta_vanishes() {
        let mdp = one_state_mdp(&[0.0, 1.0]);
        let reg = Regularizer::uniform(BregmanKind::Conditional, &mdp);
        let v = DVector::zeros(1);
        let pi = conditional_policy(&v, 0.0, &mdp, 1e-9, &reg);
        assert!((pi.prob(0, 0) - 0.5).abs() < 1e-8);
    }

    #[test]
    fn policy_invariant_under_value_shift() {
        let mdp = generate_mdp(
            &GeneratorSpec::Garnet {
                states: 4,
                actions: 2,
                branching: 2,
            },
            8,
        )
        .unwrap();
        let reg = Regularizer::uniform(BregmanKind::Conditional, &mdp);
        let v = DVector::from_row_slice(&[0.2, -0.6, 1.1, 0.0]);
        let shifted = v.map(|x| x + 42.0);
        let p1 = conditional_policy(&v, 0.3, &mdp, 3.0, &reg);
        let p2 = conditional_policy(&shifted, 0.3, &mdp, 3.0, &reg);
        assert!(p1.linf_distance(&p2) < 1e-12);
    }
}
