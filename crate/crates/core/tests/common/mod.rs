//! Shared fixtures for the integration tests.
#![allow(dead_code)]

use mdpsim_core::mdp::{MdpSpec, Outcome, Transition};
use mdpsim_core::MdpGraph;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Random MDP with 1..=`max_states` states and up to `max_actions` labels.
/// About a fifth of the states are absorbing; every other state offers a
/// non-empty subset of the labels, each with one to three outcomes. Rewards
/// lie in [0, 1].
pub fn random_mdp(seed: u64, max_states: usize, max_actions: usize) -> MdpSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(1..=max_states);
    let k = rng.gen_range(1..=max_actions);
    let states: Vec<String> = (0..n).map(|i| format!("s{i}")).collect();
    let actions: Vec<String> = (0..k).map(|i| format!("a{i}")).collect();
    let mut transitions = Vec::new();
    for s in &states {
        if rng.gen_bool(0.2) {
            continue;
        }
        let mut labels = actions.clone();
        labels.shuffle(&mut rng);
        labels.truncate(rng.gen_range(1..=k));
        labels.sort();
        for a in labels {
            let m = rng.gen_range(1..=3.min(n));
            let mut next: Vec<&String> = states.iter().collect();
            next.shuffle(&mut rng);
            let weights: Vec<f64> = (0..m).map(|_| rng.gen_range(0.1..1.0)).collect();
            let total: f64 = weights.iter().sum();
            let outcomes = next[..m]
                .iter()
                .zip(&weights)
                .map(|(t, w)| Outcome {
                    next: (*t).clone(),
                    prob: w / total,
                    reward: (rng.gen_range(0.0..1.0f64) * 8.0).round() / 8.0,
                })
                .collect();
            transitions.push(Transition {
                state: s.clone(),
                action: a,
                outcomes,
            });
        }
    }
    MdpSpec {
        name: format!("random{seed}"),
        states,
        actions,
        transitions,
    }
}

/// [`random_mdp`] where every non-absorbing state offers every label; missing
/// labels become zero-reward self-loops.
pub fn random_mdp_all_labels(seed: u64, max_states: usize, max_actions: usize) -> MdpSpec {
    let mut spec = random_mdp(seed, max_states, max_actions);
    let active: std::collections::BTreeSet<String> = spec.transitions.iter().map(|t| t.state.clone()).collect();
    for s in &active {
        for a in &spec.actions {
            if !spec.transitions.iter().any(|t| &t.state == s && &t.action == a) {
                spec.transitions.push(Transition {
                    state: s.clone(),
                    action: a.clone(),
                    outcomes: vec![Outcome {
                        next: s.clone(),
                        prob: 1.0,
                        reward: 0.0,
                    }],
                });
            }
        }
    }
    spec
}

pub fn random_graph(seed: u64, max_states: usize, max_actions: usize) -> MdpGraph {
    MdpGraph::build(&random_mdp(seed, max_states, max_actions)).expect("generator emits valid MDPs")
}

/// Triangle, symmetry and zero-diagonal violations of a square distance matrix.
pub fn metric_violations(d: &ndarray::Array2<f64>, tol: f64) -> Vec<String> {
    let n = d.nrows();
    let mut out = Vec::new();
    for i in 0..n {
        if d[[i, i]].abs() > tol {
            out.push(format!("d[{i},{i}] = {}", d[[i, i]]));
        }
        for j in 0..n {
            if (d[[i, j]] - d[[j, i]]).abs() > tol {
                out.push(format!("asymmetric at ({i},{j})"));
            }
            for k in 0..n {
                if d[[i, k]] > d[[i, j]] + d[[j, k]] + tol {
                    out.push(format!("triangle ({i},{j},{k}) off by {}", d[[i, k]] - d[[i, j]] - d[[j, k]]));
                }
            }
        }
    }
    out
}

/// Exhaustive transport oracle for small instances: the optimum of a
/// transportation LP is attained at a basic feasible solution, whose basis is
/// a spanning forest of at most `m + n - 1` cells. Enumerate those cell
/// subsets, solve each basis by peeling leaves, and keep the cheapest
/// non-negative solution.
pub fn transport_oracle(supply: &[f64], demand: &[f64], cost: &[Vec<f64>]) -> f64 {
    let (m, n) = (supply.len(), demand.len());
    let cells: Vec<(usize, usize)> = (0..m).flat_map(|i| (0..n).map(move |j| (i, j))).collect();
    let size = m + n - 1;
    let mut best = f64::INFINITY;
    let mut chosen = Vec::with_capacity(size);
    subsets(&cells, size, 0, &mut chosen, &mut |basis| {
        if let Some(flow) = solve_basis(supply, demand, basis) {
            let c: f64 = basis.iter().zip(&flow).map(|(&(i, j), f)| cost[i][j] * f).sum();
            best = best.min(c);
        }
    });
    best
}

fn subsets(
    cells: &[(usize, usize)],
    size: usize,
    from: usize,
    chosen: &mut Vec<(usize, usize)>,
    visit: &mut dyn FnMut(&[(usize, usize)]),
) {
    if chosen.len() == size {
        visit(chosen);
        return;
    }
    for idx in from..cells.len() {
        if cells.len() - idx < size - chosen.len() {
            break;
        }
        chosen.push(cells[idx]);
        subsets(cells, size, idx + 1, chosen, visit);
        chosen.pop();
    }
}

/// Flows on a candidate basis by repeatedly fixing rows or columns with a
/// single unfixed basic cell; `None` if the cells do not form a tree or the
/// solution is infeasible.
fn solve_basis(supply: &[f64], demand: &[f64], basis: &[(usize, usize)]) -> Option<Vec<f64>> {
    let mut rs = supply.to_vec();
    let mut cs = demand.to_vec();
    let mut flow = vec![f64::NAN; basis.len()];
    let mut open = basis.len();
    while open > 0 {
        let mut progressed = false;
        for i in 0..supply.len() {
            let idx: Vec<usize> = (0..basis.len()).filter(|&b| basis[b].0 == i && flow[b].is_nan()).collect();
            if idx.len() == 1 {
                let b = idx[0];
                flow[b] = rs[i];
                rs[i] = 0.0;
                cs[basis[b].1] -= flow[b];
                open -= 1;
                progressed = true;
            }
        }
        for j in 0..demand.len() {
            let idx: Vec<usize> = (0..basis.len()).filter(|&b| basis[b].1 == j && flow[b].is_nan()).collect();
            if idx.len() == 1 {
                let b = idx[0];
                flow[b] = cs[j];
                cs[j] = 0.0;
                rs[basis[b].0] -= flow[b];
                open -= 1;
                progressed = true;
            }
        }
        if !progressed {
            return None;
        }
    }
    let feasible = flow.iter().all(|&f| f >= -1e-12)
        && rs.iter().all(|r| r.abs() < 1e-9)
        && cs.iter().all(|c| c.abs() < 1e-9);
    feasible.then_some(flow)
}
