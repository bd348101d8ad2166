//! Deterministic MDP generators: cyclic chains, slippery torus gridworlds,
//! and random Garnet instances.
//!
//! All randomness comes from the documented SplitMix64 stream in
//! [`crate::rng`], so a `(kind, params, seed)` triple always yields the
//! same MDP. Garnet generation retries with the stream for attempt `t+1`
//! until the instance is unichain under every deterministic policy, which
//! the LP/brute-force cross-checks require.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::mdp::{Policy, TabularMdp};
use crate::rng::SplitMix64;

#[derive(Debug, Clone, PartialEq)]
pub enum GeneratorSpec {
    /// `chain(n)`: states on a cycle; action 0 ("stay") self-loops with
    /// reward 0, action 1 ("go") advances with reward 1. `chain(2)` is the
    /// canonical toggle MDP.
    Chain { n: usize },
    /// `gridworld(w,h,slip)`: torus grid, four move actions (up, right,
    /// down, left); the intended move happens with probability `1-slip`,
    /// each other move with `slip/3`. Reward of a pair is the probability
    /// of landing on the goal cell (state 0).
    Gridworld { width: usize, height: usize, slip: f64 },
    /// `garnet(S,A,b)`: each pair draws `b` distinct successors with
    /// positive normalized weights; rewards uniform on (0,1).
    Garnet {
        states: usize,
        actions: usize,
        branching: usize,
    },
}

impl GeneratorSpec {
    /// Parses `kind:params`, e.g. `chain:2`, `gridworld:3,3,0.1`,
    /// `garnet:5,3,2`.
    pub fn parse(text: &str) -> Result<Self> {
        let (kind, rest) = text
            .split_once(':')
            .ok_or_else(|| Error::InvalidInput(format!("generator spec '{text}' lacks ':'")))?;
        let parts: Vec<&str> = rest.split(',').collect();
        let parse_usize = |p: &str| -> Result<usize> {
            p.trim()
                .parse()
                .map_err(|_| Error::InvalidInput(format!("bad integer '{p}' in '{text}'")))
        };
        match kind {
            "chain" => {
                if parts.len() != 1 {
                    return Err(Error::InvalidInput("chain takes one parameter".into()));
                }
                Ok(GeneratorSpec::Chain {
                    n: parse_usize(parts[0])?,
                })
            }
            "gridworld" => {
                if parts.len() != 3 {
                    return Err(Error::InvalidInput(
                        "gridworld takes width,height,slip".into(),
                    ));
                }
                let slip: f64 = parts[2].trim().parse().map_err(|_| {
                    Error::InvalidInput(format!("bad slip '{}' in '{text}'", parts[2]))
                })?;
                Ok(GeneratorSpec::Gridworld {
                    width: parse_usize(parts[0])?,
                    height: parse_usize(parts[1])?,
                    slip,
                })
            }
            "garnet" => {
                if parts.len() != 3 {
                    return Err(Error::InvalidInput(
                        "garnet takes states,actions,branching".into(),
                    ));
                }
                Ok(GeneratorSpec::Garnet {
                    states: parse_usize(parts[0])?,
                    actions: parse_usize(parts[1])?,
                    branching: parse_usize(parts[2])?,
                })
            }
            other => Err(Error::InvalidInput(format!("unknown generator '{other}'"))),
        }
    }
}

impl std::fmt::Display for GeneratorSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            GeneratorSpec::Chain { n } => write!(f, "chain:{n}"),
            GeneratorSpec::Gridworld {
                width,
                height,
                slip,
            } => write!(f, "gridworld:{width},{height},{slip}"),
            GeneratorSpec::Garnet {
                states,
                actions,
                branching,
            } => write!(f, "garnet:{states},{actions},{branching}"),
        }
    }
}

const GARNET_RETRIES: usize = 100;

/// Builds the MDP for `spec`. The seed only matters for `garnet`.
pub fn generate_mdp(spec: &GeneratorSpec, seed: u64) -> Result<TabularMdp> {
    match *spec {
        GeneratorSpec::Chain { n } => chain(n),
        GeneratorSpec::Gridworld {
            width,
            height,
            slip,
        } => gridworld(width, height, slip),
        GeneratorSpec::Garnet {
            states,
            actions,
            branching,
        } => garnet(states, actions, branching, seed),
    }
}

fn chain(n: usize) -> Result<TabularMdp> {
    if n < 1 {
        return Err(Error::InvalidInput("chain needs at least one state".into()));
    }
    let m = 2;
    let mut p = vec![0.0; n * m * n];
    let mut r = DMatrix::zeros(n, m);
    for s in 0..n {
        p[(s * m) * n + s] = 1.0;
        p[(s * m + 1) * n + (s + 1) % n] = 1.0;
        r[(s, 1)] = 1.0;
    }
    let mdp = TabularMdp::new(n, m, p, r, None)?;
    check_uniform_unichain(&mdp)?;
    Ok(mdp)
}

fn gridworld(width: usize, height: usize, slip: f64) -> Result<TabularMdp> {
    if width < 2 || height < 2 {
        return Err(Error::InvalidInput("gridworld needs width,height >= 2".into()));
    }
    if !(0.0..=1.0).contains(&slip) {
        return Err(Error::InvalidInput(format!("slip {slip} outside [0,1]")));
    }
    let n = width * height;
    let m = 4; // up, right, down, left
    let goal = 0usize;
    let step = |s: usize, dir: usize| -> usize {
        let (x, y) = (s % width, s / width);
        let (nx, ny) = match dir {
            0 => (x, (y + height - 1) % height),
            1 => ((x + 1) % width, y),
            2 => (x, (y + 1) % height),
            _ => ((x + width - 1) % width, y),
        };
        ny * width + nx
    };
    let mut p = vec![0.0; n * m * n];
    let mut r = DMatrix::zeros(n, m);
    for s in 0..n {
        for a in 0..m {
            for dir in 0..m {
                let weight = if dir == a { 1.0 - slip } else { slip / 3.0 };
                if weight == 0.0 {
                    continue;
                }
                let sp = step(s, dir);
                p[(s * m + a) * n + sp] += weight;
                if sp == goal {
                    r[(s, a)] += weight;
                }
            }
        }
    }
    let mdp = TabularMdp::new(n, m, p, r, None)?;
    check_uniform_unichain(&mdp)?;
    Ok(mdp)
}

fn garnet(states: usize, actions: usize, branching: usize, seed: u64) -> Result<TabularMdp> {
    if states == 0 || actions == 0 || branching == 0 || branching > states {
        return Err(Error::InvalidInput(
            "garnet needs 1 <= branching <= states and actions >= 1".into(),
        ));
    }
    for attempt in 0..GARNET_RETRIES {
        let mut rng = SplitMix64::for_attempt(seed, attempt as u64);
        let mut p = vec![0.0; states * actions * states];
        let mut r = DMatrix::zeros(states, actions);
        for s in 0..states {
            for a in 0..actions {
                let succ = rng.choose_distinct(states, branching);
                let mut weights = Vec::with_capacity(branching);
                let mut total = 0.0;
                for _ in 0..branching {
                    let w = rng.next_open01();
                    weights.push(w);
                    total += w;
                }
                for (i, &sp) in succ.iter().enumerate() {
                    p[(s * actions + a) * states + sp] = weights[i] / total;
                }
                r[(s, a)] = rng.next_f64();
            }
        }
        let mdp = TabularMdp::new(states, actions, p, r, None)?;
        if is_unichain_all_deterministic(&mdp) {
            return Ok(mdp);
        }
    }
    Err(Error::GenerationFailed {
        attempts: GARNET_RETRIES,
    })
}

fn check_uniform_unichain(mdp: &TabularMdp) -> Result<()> {
    let uniform = Policy::uniform(mdp.n_states(), mdp.n_actions());
    if crate::mdp::is_unichain(&uniform, mdp)? {
        Ok(())
    } else {
        Err(Error::Multichain)
    }
}

/// Structural unichain test over every deterministic policy: the support
/// graph of each induced chain must have exactly one closed communicating
/// class. Exact (no tolerances); exponential in the state count, so meant
/// for desk-scale instances.
pub fn is_unichain_all_deterministic(mdp: &TabularMdp) -> bool {
    let (n, m) = (mdp.n_states(), mdp.n_actions());
    let mut actions = vec![0usize; n];
    loop {
        if !single_closed_class(mdp, &actions) {
            return false;
        }
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
            return true;
        }
    }
}

/// Whether the chain picking `actions[s]` in state `s` has a single closed
/// communicating class: all recurrent states (those in every cycle they can
/// reach back from) must be mutually reachable.
fn single_closed_class(mdp: &TabularMdp, actions: &[usize]) -> bool {
    let n = mdp.n_states();
    // reach[s][t]: t reachable from s in >= 0 steps through support edges
    let mut reach = vec![vec![false; n]; n];
    for s in 0..n {
        reach[s][s] = true;
        for (sp, &p) in mdp.successors(s, actions[s]).iter().enumerate() {
            if p > 0.0 {
                reach[s][sp] = true;
            }
        }
    }
    for k in 0..n {
        for i in 0..n {
            if reach[i][k] {
                for j in 0..n {
                    if reach[k][j] {
                        reach[i][j] = true;
                    }
                }
            }
        }
    }
    // s is recurrent iff it can return from everything it reaches
    let recurrent: Vec<usize> = (0..n)
        .filter(|&s| (0..n).all(|t| !reach[s][t] || reach[t][s]))
        .collect();
    if recurrent.is_empty() {
        return false;
    }
    recurrent
        .iter()
        .all(|&r1| recurrent.iter().all(|&r2| reach[r1][r2]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::brute_force_optimal;

    #[test]
    fn chain2_is_toggle() {
        let mdp = generate_mdp(&GeneratorSpec::Chain { n: 2 }, 0).unwrap();
        assert_eq!(mdp.n_states(), 2);
        assert_eq!(mdp.n_actions(), 2);
        assert_eq!(mdp.prob(0, 0, 0), 1.0);
        assert_eq!(mdp.prob(0, 1, 1), 1.0);
        assert_eq!(mdp.reward(0, 0), 0.0);
        assert_eq!(mdp.reward(0, 1), 1.0);
        let (_, rbar) = brute_force_optimal(&mdp).unwrap();
        assert!((rbar - 1.0).abs() < 1e-12);
    }

    #[test]
    fn garnet_is_deterministic() {
        let spec = GeneratorSpec::Garnet {
            states: 5,
            actions: 3,
            branching: 2,
        };
        let a = generate_mdp(&spec, 7).unwrap();
        let b = generate_mdp(&spec, 7).unwrap();
        for s in 0..5 {
            for act in 0..3 {
                assert_eq!(a.reward(s, act), b.reward(s, act));
                for sp in 0..5 {
                    assert_eq!(a.prob(s, act, sp), b.prob(s, act, sp));
                }
            }
        }
    }

    #[test]
    fn garnet_rows_normalized() {
        let spec = GeneratorSpec::Garnet {
            states: 5,
            actions: 3,
            branching: 2,
        };
        let mdp = generate_mdp(&spec, 7).unwrap();
        for s in 0..5 {
            for a in 0..3 {
                let sum: f64 = mdp.successors(s, a).iter().sum();
                assert!((sum - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn garnet_unichain_for_all_deterministic_policies() {
        for seed in 0..10 {
            let mdp = generate_mdp(
                &GeneratorSpec::Garnet {
                    states: 4,
                    actions: 2,
                    branching: 2,
                },
                seed,
            )
            .unwrap();
            assert!(is_unichain_all_deterministic(&mdp));
        }
    }

    #[test]
    fn gridworld_2x2_shortest_cycle_optimum() {
        // With no slip, the best behavior revisits the goal every second
        // step, so the optimal average reward is 1/2.
        let mdp = generate_mdp(
            &GeneratorSpec::Gridworld {
                width: 2,
                height: 2,
                slip: 0.0,
            },
            0,
        )
        .unwrap();
        let (_, rbar) = brute_force_optimal(&mdp).unwrap();
        assert!((rbar - 0.5).abs() < 1e-10, "rbar {rbar}");
    }

    #[test]
    fn spec_parsing_round_trip() {
        for text in ["chain:2", "gridworld:3,3,0.1", "garnet:5,3,2"] {
            let spec = GeneratorSpec::parse(text).unwrap();
            assert_eq!(spec.to_string(), text);
        }
        assert!(GeneratorSpec::parse("foo:1").is_err());
        assert!(GeneratorSpec::parse("chain").is_err());
    }
}
