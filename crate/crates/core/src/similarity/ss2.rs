//! The SS2 fixed-point iteration.
//!
//! Each sweep first recomputes every action pair from the previous state
//! matrix,
//!
//! ```text
//! A[α, β] = 1 - (1 - C_A) |E r_α - E r_β| - C_A EMD(p_α, p_β; 1 - S)
//! ```
//!
//! and then every non-frozen state pair from the new action matrix,
//!
//! ```text
//! S[u, v] = C_S (1 - Haus(N_u, N_v; 1 - A))
//! ```
//!
//! Pairs involving an absorbing state keep their initial value: `ω` when both
//! are absorbing, `0` when exactly one is. In the full (disjoint-union) form the
//! diagonal is pinned at 1 and both matrices are symmetric, so only the upper
//! triangle is computed.

use ndarray::Array2;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::mdp::{MdpGraph, NodeKind, NodeRef};
use crate::metrics::{hausdorff_by, transport};

use super::{CrossInit, SimilarityResult, Ss2Config};

/// Per-graph data the recursion needs, detached from the graph itself.
#[derive(Debug, Clone)]
struct Side {
    out: Vec<Vec<usize>>,
    successors: Vec<Vec<(usize, f64)>>,
    rewards: Vec<f64>,
}

impl Side {
    fn new(graph: &MdpGraph) -> Self {
        Side {
            out: (0..graph.state_count())
                .map(|s| graph.out_actions(s).to_vec())
                .collect(),
            successors: (0..graph.action_count())
                .map(|a| graph.successor_distribution(a))
                .collect(),
            rewards: (0..graph.action_count())
                .map(|a| graph.action_reward(a))
                .collect(),
        }
    }

    fn states(&self) -> usize {
        self.out.len()
    }

    fn actions(&self) -> usize {
        self.rewards.len()
    }

    fn absorbing(&self, s: usize) -> bool {
        self.out[s].is_empty()
    }
}

fn action_value(rows: &Side, cols: &Side, s: &Array2<f64>, alpha: usize, beta: usize, c_a: f64) -> f64 {
    let reward = (rows.rewards[alpha] - cols.rewards[beta]).abs();
    let p = &rows.successors[alpha];
    let q = &cols.successors[beta];
    let emd = if p.len() == 1 && q.len() == 1 {
        1.0 - s[[p[0].0, q[0].0]]
    } else {
        let supply: Vec<f64> = p.iter().map(|&(_, w)| w).collect();
        let demand: Vec<f64> = q.iter().map(|&(_, w)| w).collect();
        let mut cost = Vec::with_capacity(p.len() * q.len());
        for &(u, _) in p {
            for &(v, _) in q {
                cost.push(1.0 - s[[u, v]]);
            }
        }
        transport::solve_dense(&supply, &demand, &cost).cost
    };
    1.0 - (1.0 - c_a) * reward - c_a * emd
}

fn state_value(rows: &Side, cols: &Side, a: &Array2<f64>, u: usize, v: usize, c_s: f64) -> f64 {
    let haus = hausdorff_by(&rows.out[u], &cols.out[v], |x, y| 1.0 - a[[x, y]]);
    c_s * (1.0 - haus)
}

/// Statistics of one sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepStats {
    pub max_change: f64,
    pub converged: bool,
}

/// Stepwise driver for the SS2 recursion.
///
/// [`Ss2Solver::sweep`] advances one iteration so callers can observe every
/// intermediate matrix; [`Ss2Solver::run`] iterates to convergence.
#[derive(Debug, Clone)]
pub struct Ss2Solver {
    rows: Side,
    cols: Side,
    symmetric: bool,
    cfg: Ss2Config,
    s: Array2<f64>,
    a: Array2<f64>,
    iterations: usize,
    converged: bool,
    history: Vec<f64>,
}

fn check_inputs(graphs: &[&MdpGraph], cfg: &Ss2Config) -> Result<()> {
    cfg.validate()?;
    for g in graphs {
        if !g.rewards_in_unit_interval() {
            return Err(Error::InvalidConfig(format!(
                "rewards of `{}` must lie in [0, 1]; normalise them first",
                g.name
            )));
        }
    }
    Ok(())
}

impl Ss2Solver {
    /// Recursion over all node pairs of `gm ⊔ gn`.
    pub fn full(gm: &MdpGraph, gn: &MdpGraph, cfg: Ss2Config) -> Result<Self> {
        check_inputs(&[gm, gn], &cfg)?;
        Ok(Self::on_graph(&gm.disjoint_union(gn), cfg))
    }

    /// Recursion over all node pairs of a single graph (typically a union).
    pub fn on_graph(graph: &MdpGraph, cfg: Ss2Config) -> Self {
        let side = Side::new(graph);
        Self::with_sides(side.clone(), side, true, cfg)
    }

    /// Recursion restricted to pairs `(u, v)` with `u` in `gm` and `v` in `gn`.
    pub fn cross(gm: &MdpGraph, gn: &MdpGraph, cfg: Ss2Config) -> Result<Self> {
        check_inputs(&[gm, gn], &cfg)?;
        Ok(Self::with_sides(Side::new(gm), Side::new(gn), false, cfg))
    }

    fn with_sides(rows: Side, cols: Side, symmetric: bool, cfg: Ss2Config) -> Self {
        let (nr, nc) = (rows.states(), cols.states());
        let identity = !symmetric && cfg.cross_init == CrossInit::CsIdentity;
        let s = Array2::from_shape_fn((nr, nc), |(u, v)| {
            if symmetric && u == v {
                return 1.0;
            }
            match (rows.absorbing(u), cols.absorbing(v)) {
                (true, true) => cfg.omega,
                (true, false) | (false, true) => 0.0,
                (false, false) if identity && u == v => cfg.c_s,
                (false, false) => 0.0,
            }
        });
        let a = Array2::from_shape_fn((rows.actions(), cols.actions()), |(x, y)| {
            if x == y && symmetric {
                1.0
            } else if x == y && identity {
                cfg.c_s
            } else {
                0.0
            }
        });
        Ss2Solver {
            rows,
            cols,
            symmetric,
            cfg,
            s,
            a,
            iterations: 0,
            converged: false,
            history: Vec::new(),
        }
    }

    pub fn s(&self) -> &Array2<f64> {
        &self.s
    }

    pub fn a(&self) -> &Array2<f64> {
        &self.a
    }

    pub fn iterations(&self) -> usize {
        self.iterations
    }

    pub fn is_converged(&self) -> bool {
        self.converged
    }

    fn state_frozen(&self, u: usize, v: usize) -> bool {
        (self.symmetric && u == v) || self.rows.absorbing(u) || self.cols.absorbing(v)
    }

    fn next_actions(&self) -> Array2<f64> {
        let (na, nb) = self.a.dim();
        let c_a = self.cfg.c_a;
        let symmetric = self.symmetric;
        let rows: Vec<Vec<f64>> = (0..na)
            .into_par_iter()
            .map(|x| {
                let start = if symmetric { x + 1 } else { 0 };
                (start..nb)
                    .map(|y| action_value(&self.rows, &self.cols, &self.s, x, y, c_a))
                    .collect()
            })
            .collect();
        let mut a = Array2::zeros((na, nb));
        for (x, row) in rows.into_iter().enumerate() {
            let start = if symmetric { x + 1 } else { 0 };
            for (k, val) in row.into_iter().enumerate() {
                a[[x, start + k]] = val;
                if symmetric {
                    a[[start + k, x]] = val;
                }
            }
            if symmetric {
                a[[x, x]] = 1.0;
            }
        }
        a
    }

    fn next_states(&self, a: &Array2<f64>) -> Array2<f64> {
        let (nu, nv) = self.s.dim();
        let c_s = self.cfg.c_s;
        let symmetric = self.symmetric;
        let rows: Vec<Vec<f64>> = (0..nu)
            .into_par_iter()
            .map(|u| {
                let start = if symmetric { u } else { 0 };
                (start..nv)
                    .map(|v| {
                        if self.state_frozen(u, v) {
                            self.s[[u, v]]
                        } else {
                            state_value(&self.rows, &self.cols, a, u, v, c_s)
                        }
                    })
                    .collect()
            })
            .collect();
        let mut s = Array2::zeros((nu, nv));
        for (u, row) in rows.into_iter().enumerate() {
            let start = if symmetric { u } else { 0 };
            for (k, val) in row.into_iter().enumerate() {
                s[[u, start + k]] = val;
                if symmetric {
                    s[[start + k, u]] = val;
                }
            }
        }
        s
    }

    /// One sweep: all action pairs from the previous `S`, then all state pairs
    /// from the new `A`.
    pub fn sweep(&mut self) -> SweepStats {
        let a = self.next_actions();
        let s = self.next_states(&a);

        let tol = |prev: &Array2<f64>, cur: &Array2<f64>| {
            // Criterion is stated on distances d = 1 - similarity.
            prev.iter().zip(cur.iter()).all(|(&p, &c)| {
                (c - p).abs() <= self.cfg.abs_tol + self.cfg.rel_tol * (1.0 - p).abs()
            })
        };
        let max_change = |prev: &Array2<f64>, cur: &Array2<f64>| {
            prev.iter()
                .zip(cur.iter())
                .map(|(p, c)| (c - p).abs())
                .fold(0.0, f64::max)
        };
        let converged = tol(&self.s, &s) && tol(&self.a, &a);
        let change = max_change(&self.s, &s).max(max_change(&self.a, &a));

        self.s = s;
        self.a = a;
        self.iterations += 1;
        self.converged = converged;
        self.history.push(change);
        SweepStats {
            max_change: change,
            converged,
        }
    }

    /// Sweep until the stopping rule holds or `max_iterations` is reached.
    pub fn run(mut self) -> SimilarityResult {
        while self.iterations < self.cfg.max_iterations {
            if self.sweep().converged {
                break;
            }
        }
        if !self.converged {
            log::warn!(
                "SS2 did not converge within {} sweeps (last change {:e})",
                self.iterations,
                self.history.last().copied().unwrap_or(f64::NAN)
            );
        }
        SimilarityResult {
            s: self.s,
            a: self.a,
            iterations: self.iterations,
            converged: self.converged,
            history: self.history,
        }
    }
}

/// SS2 over `gm ⊔ gn`. Node order is all of `gm` followed by all of `gn`.
pub fn ss2_full(gm: &MdpGraph, gn: &MdpGraph, cfg: Ss2Config) -> Result<SimilarityResult> {
    Ok(Ss2Solver::full(gm, gn, cfg)?.run())
}

/// SS2 restricted to the `|V_M| × |V_N|` cross block.
pub fn ss2_cross(gm: &MdpGraph, gn: &MdpGraph, cfg: Ss2Config) -> Result<SimilarityResult> {
    Ok(Ss2Solver::cross(gm, gn, cfg)?.run())
}

/// Initial `(S⁰, A⁰)` over all node pairs of `graph`.
pub fn init_base_cases(graph: &MdpGraph, cfg: &Ss2Config) -> (Array2<f64>, Array2<f64>) {
    let solver = Ss2Solver::on_graph(graph, *cfg);
    (solver.s, solver.a)
}

/// Initial `(S⁰, A⁰)` for the cross form.
pub fn init_cross_base_cases(
    gm: &MdpGraph,
    gn: &MdpGraph,
    cfg: &Ss2Config,
) -> (Array2<f64>, Array2<f64>) {
    let solver = Ss2Solver::with_sides(Side::new(gm), Side::new(gn), false, *cfg);
    (solver.s, solver.a)
}

/// Action-pair update of a single entry, for nodes of one graph.
pub fn action_update(
    graph: &MdpGraph,
    s_prev: &Array2<f64>,
    alpha: NodeRef,
    beta: NodeRef,
    cfg: &Ss2Config,
) -> Result<f64> {
    let x = graph.check_action(alpha)?;
    let y = graph.check_action(beta)?;
    let side = Side::new(graph);
    Ok(action_value(&side, &side, s_prev, x, y, cfg.c_a))
}

/// State-pair update of a single entry, for non-absorbing nodes of one graph.
pub fn state_update(
    graph: &MdpGraph,
    a_cur: &Array2<f64>,
    u: NodeRef,
    v: NodeRef,
    cfg: &Ss2Config,
) -> Result<f64> {
    for node in [u, v] {
        if node.kind != NodeKind::State {
            return Err(Error::InvalidConfig(format!("{node} is not a state node")));
        }
        if graph.is_absorbing(node.index) {
            return Err(Error::InvalidConfig(format!(
                "{node} is absorbing; its pairs keep their base-case value"
            )));
        }
    }
    let side = Side::new(graph);
    Ok(state_value(&side, &side, a_cur, u.index, v.index, cfg.c_s))
}

/// `1 - (1 - C_A) δ_rwd - C_A δ_EMD`.
pub fn action_similarity(reward_distance: f64, emd: f64, c_a: f64) -> f64 {
    1.0 - (1.0 - c_a) * reward_distance - c_a * emd
}

/// `C_S (1 - δ_Haus)`.
pub fn state_similarity(hausdorff: f64, c_s: f64) -> f64 {
    c_s * (1.0 - hausdorff)
}
