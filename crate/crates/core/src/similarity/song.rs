//! Song et al.'s `d'` distance between the states of two MDPs with a
//! one-to-one action correspondence:
//!
//! ```text
//! d'(s, s') = max_a ( |E r_s^a - E r_s'^a| + C EMD(P_s^a, P_s'^a; d') )
//! ```
//!
//! iterated from zero. Two absorbing states are at distance 0, an absorbing and
//! a non-absorbing state at distance 1.

use std::collections::BTreeMap;

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::MdpGraph;
use crate::metrics::{transport, DistanceMatrix};

use super::{DEFAULT_ABS_TOL, DEFAULT_MAX_ITERATIONS, DEFAULT_REL_TOL};

/// Sign in front of the transport term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SongSign {
    #[default]
    Plus,
    /// Subtract the transport term instead; can go negative and need not converge.
    Minus,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SongConfig {
    pub c: f64,
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_iterations: usize,
    pub sign: SongSign,
}

impl Default for SongConfig {
    fn default() -> Self {
        SongConfig {
            c: 0.5,
            abs_tol: DEFAULT_ABS_TOL,
            rel_tol: DEFAULT_REL_TOL,
            max_iterations: DEFAULT_MAX_ITERATIONS,
            sign: SongSign::Plus,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SongResult {
    pub d: Array2<f64>,
    pub iterations: usize,
    pub converged: bool,
}

impl SongResult {
    pub fn distances(&self) -> Result<DistanceMatrix> {
        DistanceMatrix::new(self.d.clone())
    }
}

/// Expected reward and successor distribution of one action.
type ActionModel = (f64, Vec<(usize, f64)>);

struct SongSide {
    /// label -> (expected reward, successor distribution), per state.
    actions: Vec<BTreeMap<String, ActionModel>>,
}

impl SongSide {
    fn new(g: &MdpGraph) -> Self {
        let actions = (0..g.state_count())
            .map(|s| {
                g.out_actions(s)
                    .iter()
                    .map(|&a| {
                        (
                            g.labels()[g.action(a).label].clone(),
                            (g.action_reward(a), g.successor_distribution(a)),
                        )
                    })
                    .collect()
            })
            .collect();
        SongSide { actions }
    }
}

fn emd(p: &[(usize, f64)], q: &[(usize, f64)], d: &Array2<f64>) -> f64 {
    if p.len() == 1 && q.len() == 1 {
        return d[[p[0].0, q[0].0]];
    }
    let supply: Vec<f64> = p.iter().map(|&(_, w)| w).collect();
    let demand: Vec<f64> = q.iter().map(|&(_, w)| w).collect();
    let mut cost = Vec::with_capacity(p.len() * q.len());
    for &(u, _) in p {
        for &(v, _) in q {
            cost.push(d[[u, v]]);
        }
    }
    transport::solve_dense(&supply, &demand, &cost).cost
}

/// Iterate `d'` from the zero matrix until the shared stopping rule holds.
pub fn song_dprime(gm: &MdpGraph, gn: &MdpGraph, cfg: SongConfig) -> Result<SongResult> {
    if !(cfg.c > 0.0 && cfg.c < 1.0) {
        return Err(Error::InvalidConfig(format!("C = {} must lie in (0, 1)", cfg.c)));
    }
    for g in [gm, gn] {
        if !g.rewards_in_unit_interval() {
            return Err(Error::InvalidConfig(format!(
                "rewards of `{}` must lie in [0, 1]; normalise them first",
                g.name
            )));
        }
    }
    let rows = SongSide::new(gm);
    let cols = SongSide::new(gn);
    let (nm, nn) = (gm.state_count(), gn.state_count());

    for u in 0..nm {
        for v in 0..nn {
            let (a, b) = (&rows.actions[u], &cols.actions[v]);
            if !a.is_empty() && !b.is_empty() && !a.keys().eq(b.keys()) {
                return Err(Error::MisalignedActions {
                    left: gm.state_ids()[u].clone(),
                    right: gn.state_ids()[v].clone(),
                });
            }
        }
    }

    let sign = match cfg.sign {
        SongSign::Plus => 1.0,
        SongSign::Minus => -1.0,
    };
    let mut d = Array2::from_shape_fn((nm, nn), |(u, v)| {
        match (rows.actions[u].is_empty(), cols.actions[v].is_empty()) {
            (true, false) | (false, true) => 1.0,
            _ => 0.0,
        }
    });
    let mut iterations = 0;
    let mut converged = false;
    while iterations < cfg.max_iterations {
        let next_rows: Vec<Vec<f64>> = (0..nm)
            .into_par_iter()
            .map(|u| {
                (0..nn)
                    .map(|v| {
                        let (a, b) = (&rows.actions[u], &cols.actions[v]);
                        if a.is_empty() || b.is_empty() {
                            return d[[u, v]];
                        }
                        a.iter()
                            .zip(b.iter())
                            .map(|((_, (ra, pa)), (_, (rb, pb)))| {
                                (ra - rb).abs() + sign * cfg.c * emd(pa, pb, &d)
                            })
                            .fold(f64::NEG_INFINITY, f64::max)
                    })
                    .collect()
            })
            .collect();
        let next = Array2::from_shape_fn((nm, nn), |(u, v)| next_rows[u][v]);
        iterations += 1;
        converged = super::converged(&d, &next, cfg.abs_tol, cfg.rel_tol)?;
        d = next;
        if converged {
            break;
        }
    }
    Ok(SongResult {
        d,
        iterations,
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{MdpSpec, Outcome, Transition};

    fn chain(reward: f64, label: &str) -> MdpGraph {
        MdpGraph::build(&MdpSpec {
            name: "c".into(),
            states: vec!["start".into(), "goal".into()],
            actions: vec![label.into()],
            transitions: vec![Transition {
                state: "start".into(),
                action: label.into(),
                outcomes: vec![Outcome {
                    next: "goal".into(),
                    prob: 1.0,
                    reward,
                }],
            }],
        })
        .unwrap()
    }

    #[test]
    fn identical_chains_have_zero_diagonal() {
        let r = song_dprime(&chain(1.0, "go"), &chain(1.0, "go"), SongConfig::default()).unwrap();
        assert_eq!(r.d[[0, 0]], 0.0);
        assert_eq!(r.d[[1, 1]], 0.0);
        assert_eq!(r.d[[0, 1]], 1.0);
        assert!(r.converged);
    }

    // start/start: |1 - 0| + C * d(goal, goal) = 1 + 0.5 * 0 = 1 at the first
    // iterate, and the goal pair never changes, so 1 is also the fixed point.
    #[test]
    fn reward_mismatch_chain() {
        let r = song_dprime(&chain(1.0, "go"), &chain(0.0, "go"), SongConfig::default()).unwrap();
        assert_eq!(r.d[[0, 0]], 1.0);
        assert_eq!(r.iterations, 2);
    }

    #[test]
    fn absorbing_singletons_are_identical() {
        let g = MdpGraph::build(&MdpSpec {
            name: "x".into(),
            states: vec!["only".into()],
            actions: vec![],
            transitions: vec![],
        })
        .unwrap();
        let r = song_dprime(&g, &g, SongConfig::default()).unwrap();
        assert_eq!(r.d, ndarray::array![[0.0]]);
    }

    #[test]
    fn misaligned_actions_rejected() {
        let err = song_dprime(&chain(1.0, "go"), &chain(1.0, "jump"), SongConfig::default());
        assert!(matches!(err, Err(Error::MisalignedActions { .. })));
    }
}
