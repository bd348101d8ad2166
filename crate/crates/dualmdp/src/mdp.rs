//! Tabular MDP data model and the dynamic-programming machinery shared by
//! every solver: Bellman backups, stationary distributions, occupancy
//! measures, average-reward policy evaluation, and a brute-force optimizer
//! over deterministic policies used as a test oracle.

use nalgebra::{DMatrix, DVector, SVD};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-sum tolerance enforced on stored transition and policy matrices.
pub const ROW_SUM_TOL: f64 = 1e-12;
/// Tolerance accepted on raw input rows before normalization.
pub const INPUT_ROW_TOL: f64 = 1e-9;
/// Stationarity defect allowed on a computed stationary distribution.
pub const STATIONARY_TOL: f64 = 1e-10;
/// Flow-constraint defect allowed on an occupancy measure.
pub const FLOW_TOL: f64 = 1e-8;

/// A finite MDP: `n_states` states, `n_actions` actions, transition tensor
/// `P(s,a,s')` stored row-major, reward matrix `R(s,a)`, and an optional
/// discount. When `gamma` is absent the average-reward setting applies.
#[derive(Debug, Clone)]
pub struct TabularMdp {
    n_states: usize,
    n_actions: usize,
    transition: Vec<f64>,
    rewards: DMatrix<f64>,
    gamma: Option<f64>,
}

/// On-disk description of an MDP. Unlisted transition triples and rewards
/// are zero.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MdpFile {
    pub n_states: usize,
    pub n_actions: usize,
    pub transitions: Vec<(usize, usize, usize, f64)>,
    pub rewards: Vec<(usize, usize, f64)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
}

impl TabularMdp {
    /// Validates and normalizes a dense description. Rows must sum to 1
    /// within `INPUT_ROW_TOL`; they are renormalized exactly on storage.
    pub fn new(
        n_states: usize,
        n_actions: usize,
        transition: Vec<f64>,
        rewards: DMatrix<f64>,
        gamma: Option<f64>,
    ) -> Result<Self> {
        if n_states == 0 || n_actions == 0 {
            return Err(Error::DimensionMismatch(
                "n_states and n_actions must be positive".into(),
            ));
        }
        if transition.len() != n_states * n_actions * n_states {
            return Err(Error::DimensionMismatch(format!(
                "transition tensor has {} entries, expected {}",
                transition.len(),
                n_states * n_actions * n_states
            )));
        }
        if rewards.nrows() != n_states || rewards.ncols() != n_actions {
            return Err(Error::DimensionMismatch(format!(
                "reward matrix is {}x{}, expected {}x{}",
                rewards.nrows(),
                rewards.ncols(),
                n_states,
                n_actions
            )));
        }
        if let Some(g) = gamma {
            if !(0.0..=1.0).contains(&g) {
                return Err(Error::InvalidInput(format!("gamma {g} outside [0,1]")));
            }
        }
        if rewards.iter().any(|r| !r.is_finite()) {
            return Err(Error::NonFinite("reward matrix".into()));
        }
        let mut transition = transition;
        for s in 0..n_states {
            for a in 0..n_actions {
                let base = (s * n_actions + a) * n_states;
                let row = &mut transition[base..base + n_states];
                let mut sum = 0.0;
                for (sp, &p) in row.iter().enumerate() {
                    if !p.is_finite() || p < 0.0 {
                        return Err(Error::NegativeProbability {
                            state: s,
                            action: a,
                            next: sp,
                            value: p,
                        });
                    }
                    sum += p;
                }
                if (sum - 1.0).abs() > INPUT_ROW_TOL {
                    return Err(Error::NonStochasticRow {
                        state: s,
                        action: a,
                        sum,
                    });
                }
                for p in row.iter_mut() {
                    *p /= sum;
                }
            }
        }
        Ok(TabularMdp {
            n_states,
            n_actions,
            transition,
            rewards,
            gamma,
        })
    }

    /// Validates a sparse file description (missing entries are zero).
    pub fn from_file(raw: &MdpFile) -> Result<Self> {
        let (n, m) = (raw.n_states, raw.n_actions);
        if n == 0 || m == 0 {
            return Err(Error::DimensionMismatch(
                "n_states and n_actions must be positive".into(),
            ));
        }
        let mut transition = vec![0.0; n * m * n];
        for &(s, a, sp, p) in &raw.transitions {
            if s >= n || a >= m || sp >= n {
                return Err(Error::DimensionMismatch(format!(
                    "transition entry ({s},{a},{sp}) out of range for {n} states, {m} actions"
                )));
            }
            transition[(s * m + a) * n + sp] += p;
        }
        let mut rewards = DMatrix::zeros(n, m);
        for &(s, a, r) in &raw.rewards {
            if s >= n || a >= m {
                return Err(Error::DimensionMismatch(format!(
                    "reward entry ({s},{a}) out of range for {n} states, {m} actions"
                )));
            }
            rewards[(s, a)] = r;
        }
        TabularMdp::new(n, m, transition, rewards, raw.gamma)
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let raw: MdpFile = serde_json::from_str(text)?;
        TabularMdp::from_file(&raw)
    }

    pub fn to_file(&self) -> MdpFile {
        let mut transitions = Vec::new();
        let mut rewards = Vec::new();
        for s in 0..self.n_states {
            for a in 0..self.n_actions {
                for sp in 0..self.n_states {
                    let p = self.prob(s, a, sp);
                    if p != 0.0 {
                        transitions.push((s, a, sp, p));
                    }
                }
                let r = self.rewards[(s, a)];
                if r != 0.0 {
                    rewards.push((s, a, r));
                }
            }
        }
        MdpFile {
            n_states: self.n_states,
            n_actions: self.n_actions,
            transitions,
            rewards,
            gamma: self.gamma,
        }
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn gamma(&self) -> Option<f64> {
        self.gamma
    }

    pub fn prob(&self, s: usize, a: usize, sp: usize) -> f64 {
        self.transition[(s * self.n_actions + a) * self.n_states + sp]
    }

    /// Successor distribution of the pair `(s, a)`.
    pub fn successors(&self, s: usize, a: usize) -> &[f64] {
        let base = (s * self.n_actions + a) * self.n_states;
        &self.transition[base..base + self.n_states]
    }

    pub fn reward(&self, s: usize, a: usize) -> f64 {
        self.rewards[(s, a)]
    }

    pub fn rewards(&self) -> &DMatrix<f64> {
        &self.rewards
    }

    pub fn min_reward(&self) -> f64 {
        self.rewards.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn max_reward(&self) -> f64 {
        self.rewards
            .iter()
            .cloned()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Same dynamics with a replaced reward matrix.
    pub fn with_rewards(&self, rewards: DMatrix<f64>) -> Result<Self> {
        TabularMdp::new(
            self.n_states,
            self.n_actions,
            self.transition.clone(),
            rewards,
            self.gamma,
        )
    }

    /// State-to-state chain `P_pi(s,s') = sum_a pi(a|s) P(s,a,s')`.
    pub fn induced_chain(&self, pi: &Policy) -> Result<DMatrix<f64>> {
        self.check_policy_shape(pi)?;
        let n = self.n_states;
        let mut chain = DMatrix::zeros(n, n);
        for s in 0..n {
            for a in 0..self.n_actions {
                let w = pi.prob(s, a);
                if w == 0.0 {
                    continue;
                }
                for (sp, &p) in self.successors(s, a).iter().enumerate() {
                    chain[(s, sp)] += w * p;
                }
            }
        }
        Ok(chain)
    }

    /// Expected one-step reward per state under `pi`.
    pub fn expected_rewards(&self, pi: &Policy) -> Result<DVector<f64>> {
        self.check_policy_shape(pi)?;
        let n = self.n_states;
        let mut r = DVector::zeros(n);
        for s in 0..n {
            for a in 0..self.n_actions {
                r[s] += pi.prob(s, a) * self.rewards[(s, a)];
            }
        }
        Ok(r)
    }

    /// `(P V)(s,a) = sum_{s'} P(s,a,s') V(s')` for every pair.
    pub fn transition_values(&self, v: &DVector<f64>) -> DMatrix<f64> {
        let mut pv = DMatrix::zeros(self.n_states, self.n_actions);
        for s in 0..self.n_states {
            for a in 0..self.n_actions {
                let mut acc = 0.0;
                for (sp, &p) in self.successors(s, a).iter().enumerate() {
                    acc += p * v[sp];
                }
                pv[(s, a)] = acc;
            }
        }
        pv
    }

    fn check_policy_shape(&self, pi: &Policy) -> Result<()> {
        if pi.n_states() != self.n_states || pi.n_actions() != self.n_actions {
            return Err(Error::ShapeMismatch(format!(
                "policy is {}x{}, MDP is {}x{}",
                pi.n_states(),
                pi.n_actions(),
                self.n_states,
                self.n_actions
            )));
        }
        Ok(())
    }
}

/// Row-stochastic state-to-action distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    probs: DMatrix<f64>,
}

impl Policy {
    pub fn new(probs: DMatrix<f64>) -> Result<Self> {
        let mut probs = probs;
        for s in 0..probs.nrows() {
            let mut sum = 0.0;
            for a in 0..probs.ncols() {
                let p = probs[(s, a)];
                if !p.is_finite() || p < -ROW_SUM_TOL {
                    return Err(Error::InvalidInput(format!(
                        "policy entry ({s},{a}) = {p} is negative or non-finite"
                    )));
                }
                sum += p.max(0.0);
            }
            if (sum - 1.0).abs() > INPUT_ROW_TOL {
                return Err(Error::NonStochasticRow {
                    state: s,
                    action: 0,
                    sum,
                });
            }
            for a in 0..probs.ncols() {
                probs[(s, a)] = probs[(s, a)].max(0.0) / sum;
            }
        }
        Ok(Policy { probs })
    }

    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        Policy {
            probs: DMatrix::from_element(n_states, n_actions, 1.0 / n_actions as f64),
        }
    }

    /// Deterministic policy taking `actions[s]` in state `s`.
    pub fn deterministic(n_actions: usize, actions: &[usize]) -> Self {
        let mut probs = DMatrix::zeros(actions.len(), n_actions);
        for (s, &a) in actions.iter().enumerate() {
            probs[(s, a)] = 1.0;
        }
        Policy { probs }
    }

    pub fn n_states(&self) -> usize {
        self.probs.nrows()
    }

    pub fn n_actions(&self) -> usize {
        self.probs.ncols()
    }

    pub fn prob(&self, s: usize, a: usize) -> f64 {
        self.probs[(s, a)]
    }

    pub fn probs(&self) -> &DMatrix<f64> {
        &self.probs
    }

    /// Largest entrywise difference to another policy.
    pub fn linf_distance(&self, other: &Policy) -> f64 {
        (&self.probs - &other.probs).abs().max()
    }
}

/// Stationary state-action distribution with flow (stationarity) structure.
#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyMeasure {
    mu: DMatrix<f64>,
}

impl OccupancyMeasure {
    /// Accepts a nonnegative matrix summing to 1 within `1e-10` and stores
    /// it exactly normalized. Entries below `-1e-12` are rejected; tiny
    /// negative round-off is clamped to zero.
    pub fn new(mu: DMatrix<f64>) -> Result<Self> {
        let mut mu = mu;
        let mut total = 0.0;
        for v in mu.iter_mut() {
            if !v.is_finite() || *v < -ROW_SUM_TOL {
                return Err(Error::InvalidInput(format!(
                    "occupancy entry {v} is negative or non-finite"
                )));
            }
            *v = v.max(0.0);
            total += *v;
        }
        if (total - 1.0).abs() > STATIONARY_TOL {
            return Err(Error::InvalidInput(format!(
                "occupancy mass {total} differs from 1 beyond 1e-10"
            )));
        }
        mu /= total;
        Ok(OccupancyMeasure { mu })
    }

    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        OccupancyMeasure {
            mu: DMatrix::from_element(
                n_states,
                n_actions,
                1.0 / (n_states * n_actions) as f64,
            ),
        }
    }

    pub fn n_states(&self) -> usize {
        self.mu.nrows()
    }

    pub fn n_actions(&self) -> usize {
        self.mu.ncols()
    }

    pub fn get(&self, s: usize, a: usize) -> f64 {
        self.mu[(s, a)]
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.mu
    }

    /// State marginal `nu(s) = sum_a mu(s,a)`.
    pub fn state_marginal(&self) -> DVector<f64> {
        DVector::from_iterator(self.mu.nrows(), self.mu.row_iter().map(|r| r.sum()))
    }

    /// Largest violation of the stationarity constraints
    /// `sum_a mu(s',a) = sum_{s,a} mu(s,a) P(s,a,s')`.
    pub fn flow_residual(&self, mdp: &TabularMdp) -> Result<f64> {
        if self.n_states() != mdp.n_states() || self.n_actions() != mdp.n_actions() {
            return Err(Error::ShapeMismatch("occupancy vs mdp".into()));
        }
        let mut worst: f64 = 0.0;
        for sp in 0..mdp.n_states() {
            let mut inflow = 0.0;
            for s in 0..mdp.n_states() {
                for a in 0..mdp.n_actions() {
                    inflow += self.mu[(s, a)] * mdp.prob(s, a, sp);
                }
            }
            let outflow: f64 = self.mu.row(sp).sum();
            worst = worst.max((outflow - inflow).abs());
        }
        Ok(worst)
    }

    pub fn l1_distance(&self, other: &OccupancyMeasure) -> f64 {
        (&self.mu - &other.mu).abs().sum()
    }
}

/// Value vector with its average reward and Bellman residual.
#[derive(Debug, Clone)]
pub struct ValueSolution {
    pub v: DVector<f64>,
    pub avg_reward: f64,
    pub residual: f64,
}

/// State-action value table.
#[derive(Debug, Clone, PartialEq)]
pub struct QFunction {
    pub q: DMatrix<f64>,
}

impl QFunction {
    pub fn new(q: DMatrix<f64>) -> Result<Self> {
        if q.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("Q table".into()));
        }
        Ok(QFunction { q })
    }

    pub fn zeros(n_states: usize, n_actions: usize) -> Self {
        QFunction {
            q: DMatrix::zeros(n_states, n_actions),
        }
    }
}

/// One application of the policy-weighted Bellman operator:
/// `Q'(s,a) = R(s,a) + gamma * sum_{s'} P(s,a,s') sum_{a'} pi(a'|s') Q(s',a')`
/// with `gamma = 1` in the average-reward setting.
pub fn bellman_backup(q: &QFunction, pi: &Policy, mdp: &TabularMdp) -> Result<QFunction> {
    let (n, m) = (mdp.n_states(), mdp.n_actions());
    if q.q.nrows() != n || q.q.ncols() != m || pi.n_states() != n || pi.n_actions() != m {
        return Err(Error::ShapeMismatch("bellman_backup operands".into()));
    }
    let gamma = mdp.gamma().unwrap_or(1.0);
    // state values under pi: sum_a pi(a|s) Q(s,a)
    let mut vpi: DVector<f64> = DVector::zeros(n);
    for s in 0..n {
        for a in 0..m {
            vpi[s] += pi.prob(s, a) * q.q[(s, a)];
        }
    }
    let mut out = DMatrix::zeros(n, m);
    for s in 0..n {
        for a in 0..m {
            let mut future = 0.0;
            for (sp, &p) in mdp.successors(s, a).iter().enumerate() {
                future += p * vpi[sp];
            }
            out[(s, a)] = mdp.reward(s, a) + gamma * future;
        }
    }
    Ok(QFunction { q: out })
}

/// Rank test for uniqueness of the stationary distribution: the chain has a
/// single recurrent class iff `[P_pi^T - I; 1^T]` has full column rank.
fn unichain_svd(chain: &DMatrix<f64>) -> (SVD<f64, nalgebra::Dyn, nalgebra::Dyn>, bool, usize) {
    let n = chain.nrows();
    let mut m = DMatrix::zeros(n + 1, n);
    for i in 0..n {
        for j in 0..n {
            m[(i, j)] = chain[(j, i)] - if i == j { 1.0 } else { 0.0 };
        }
    }
    for j in 0..n {
        m[(n, j)] = 1.0;
    }
    let svd = SVD::new(m, true, true);
    let max_sv = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let eps = 1e-9 * max_sv.max(1.0);
    let rank = svd.singular_values.iter().filter(|&&sv| sv > eps).count();
    (svd, rank == n, n)
}

/// Whether the chain induced by `pi` has a unique stationary distribution.
pub fn is_unichain(pi: &Policy, mdp: &TabularMdp) -> Result<bool> {
    let chain = mdp.induced_chain(pi)?;
    let (_, unichain, _) = unichain_svd(&chain);
    Ok(unichain)
}

/// Stationary state distribution of the chain induced by `pi`, by direct
/// linear solve of `nu^T P_pi = nu^T, sum nu = 1`.
pub fn stationary_distribution(pi: &Policy, mdp: &TabularMdp) -> Result<DVector<f64>> {
    let chain = mdp.induced_chain(pi)?;
    let n = chain.nrows();
    let (svd, unichain, _) = unichain_svd(&chain);
    if !unichain {
        return Err(Error::Multichain);
    }
    let mut b = DVector::zeros(n + 1);
    b[n] = 1.0;
    let nu = svd
        .solve(&b, 1e-13)
        .map_err(|_| Error::SingularSystem)?;
    let mut nu = DVector::from_iterator(n, nu.iter().take(n).cloned());
    for v in nu.iter_mut() {
        if *v < 0.0 {
            if *v < -1e-9 {
                return Err(Error::NonConvergence(format!(
                    "stationary solve produced negative mass {v}"
                )));
            }
            *v = 0.0;
        }
    }
    let total: f64 = nu.sum();
    if total <= 0.0 {
        return Err(Error::NonConvergence("stationary solve lost all mass".into()));
    }
    nu /= total;
    let defect = (&chain.transpose() * &nu - &nu).abs().max();
    if defect > STATIONARY_TOL {
        return Err(Error::NonConvergence(format!(
            "stationarity defect {defect} exceeds 1e-10"
        )));
    }
    Ok(nu)
}

/// Occupancy measure `mu(s,a) = nu_pi(s) pi(a|s)`.
pub fn occupancy_from_policy(pi: &Policy, mdp: &TabularMdp) -> Result<OccupancyMeasure> {
    let nu = stationary_distribution(pi, mdp)?;
    let (n, m) = (mdp.n_states(), mdp.n_actions());
    let mut mu = DMatrix::zeros(n, m);
    for s in 0..n {
        for a in 0..m {
            mu[(s, a)] = nu[s] * pi.prob(s, a);
        }
    }
    OccupancyMeasure::new(mu)
}

/// Conditional policy of an occupancy measure; states with zero mass get a
/// uniform row.
pub fn policy_from_occupancy(mu: &OccupancyMeasure) -> Policy {
    let (n, m) = (mu.n_states(), mu.n_actions());
    let mut probs = DMatrix::zeros(n, m);
    for s in 0..n {
        let mass: f64 = mu.matrix().row(s).sum();
        if mass > 0.0 {
            for a in 0..m {
                probs[(s, a)] = mu.get(s, a) / mass;
            }
        } else {
            for a in 0..m {
                probs[(s, a)] = 1.0 / m as f64;
            }
        }
    }
    Policy { probs }
}

/// Average reward `sum_{s,a} mu(s,a) R(s,a)`.
pub fn average_reward(mu: &OccupancyMeasure, mdp: &TabularMdp) -> Result<f64> {
    if mu.n_states() != mdp.n_states() || mu.n_actions() != mdp.n_actions() {
        return Err(Error::ShapeMismatch("occupancy vs mdp".into()));
    }
    let mut total = 0.0;
    for s in 0..mdp.n_states() {
        for a in 0..mdp.n_actions() {
            total += mu.get(s, a) * mdp.reward(s, a);
        }
    }
    Ok(total)
}

/// Solves the average-reward evaluation equations
/// `V(s) = sum_a pi(a|s) [R(s,a) - rbar + sum_{s'} P(s,a,s') V(s')]`
/// for `(V, rbar)` with the anchor `V(0) = 0`.
pub fn policy_bias_values(pi: &Policy, mdp: &TabularMdp) -> Result<ValueSolution> {
    let chain = mdp.induced_chain(pi)?;
    let n = chain.nrows();
    let (_, unichain, _) = unichain_svd(&chain);
    if !unichain {
        return Err(Error::Multichain);
    }
    let r_pi = mdp.expected_rewards(pi)?;
    // Unknowns x = (V(0..n), rbar); rows: n evaluation equations + anchor.
    let mut a = DMatrix::zeros(n + 1, n + 1);
    let mut b = DVector::zeros(n + 1);
    for s in 0..n {
        for sp in 0..n {
            a[(s, sp)] = if s == sp { 1.0 } else { 0.0 } - chain[(s, sp)];
        }
        a[(s, n)] = 1.0;
        b[s] = r_pi[s];
    }
    a[(n, 0)] = 1.0;
    b[n] = 0.0;
    let lu = a.lu();
    let x = lu.solve(&b).ok_or(Error::SingularSystem)?;
    let v = DVector::from_iterator(n, x.iter().take(n).cloned());
    let avg_reward = x[n];
    // residual: max violation of the evaluation equations
    let mut residual: f64 = 0.0;
    for s in 0..n {
        let mut rhs = 0.0;
        for a_idx in 0..mdp.n_actions() {
            let mut future = 0.0;
            for (sp, &p) in mdp.successors(s, a_idx).iter().enumerate() {
                future += p * v[sp];
            }
            rhs += pi.prob(s, a_idx) * (mdp.reward(s, a_idx) - avg_reward + future);
        }
        residual = residual.max((v[s] - rhs).abs());
    }
    Ok(ValueSolution {
        v,
        avg_reward,
        residual,
    })
}

/// Guard on the deterministic-policy enumeration.
pub const BRUTE_FORCE_LIMIT: f64 = 1e6;

/// Enumerates every deterministic policy, evaluates each by
/// `policy_bias_values`, and returns the argmax by average reward. Ties keep
/// the lexicographically smallest action assignment. Deterministic policies
/// whose induced chain has several recurrent classes (no unique gain) are
/// skipped; at least one policy must be evaluable.
pub fn brute_force_optimal(mdp: &TabularMdp) -> Result<(Policy, f64)> {
    let (n, m) = (mdp.n_states(), mdp.n_actions());
    let count = (m as f64).powi(n as i32);
    if count > BRUTE_FORCE_LIMIT {
        return Err(Error::TooLarge {
            count,
            limit: BRUTE_FORCE_LIMIT,
        });
    }
    let mut actions = vec![0usize; n];
    let mut best: Option<(Vec<usize>, f64)> = None;
    loop {
        let pi = Policy::deterministic(m, &actions);
        match policy_bias_values(&pi, mdp) {
            Ok(vs) => {
                let better = match &best {
                    None => true,
                    Some((_, best_r)) => vs.avg_reward > *best_r,
                };
                if better {
                    best = Some((actions.clone(), vs.avg_reward));
                }
            }
            Err(Error::Multichain) | Err(Error::SingularSystem) => {}
            Err(e) => return Err(e),
        }
        // advance odometer, state 0 most significant for lexicographic order
        let mut pos = n;
        loop {
            if pos == 0 {
                break;
            }
            pos -= 1;
            actions[pos] += 1;
            if actions[pos] < m {
                break;
            }
            actions[pos] = 0;
        }
        if actions.iter().all(|&a| a == 0) {
            break;
        }
    }
    let (actions, avg) = best.ok_or(Error::Multichain)?;
    Ok((Policy::deterministic(m, &actions), avg))
}
