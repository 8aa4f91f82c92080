//! Exact solver for the discrete transportation problem.
//!
//! Successive shortest paths on the complete bipartite residual network, with
//! Dijkstra over reduced costs. Every augmentation exhausts a supply, a demand
//! or the flow on a backward arc, and the potentials certify optimality of the
//! flow shipped so far, so the final plan is an exact optimum up to floating
//! point rounding. Node selection breaks ties on the lowest index, which makes
//! the returned plan a deterministic function of the input.

/// Residual supply/demand at or below this is treated as exhausted.
const MASS_EPS: f64 = 1e-14;
const NONE: usize = usize::MAX;

#[derive(Debug, Clone, PartialEq)]
pub struct DenseSolution {
    /// Row-major `supply.len() × demand.len()` flow.
    pub flow: Vec<f64>,
    pub cost: f64,
}

/// Optimal plan for `supply` (rows) to `demand` (columns) under the row-major
/// `cost` matrix. Weights must be non-negative; totals are expected to agree.
pub fn solve_dense(supply: &[f64], demand: &[f64], cost: &[f64]) -> DenseSolution {
    let m = supply.len();
    let n = demand.len();
    debug_assert_eq!(cost.len(), m * n);

    if m == 1 || n == 1 {
        // Single row or column: the plan is forced.
        let flow: Vec<f64> = if m == 1 {
            demand.to_vec()
        } else {
            supply.to_vec()
        };
        let total = flow.iter().zip(cost).map(|(f, c)| f * c).sum();
        return DenseSolution { flow, cost: total };
    }

    let src = m + n;
    let snk = m + n + 1;
    let nodes = m + n + 2;

    let mut flow = vec![0.0; m * n];
    let mut rs = supply.to_vec();
    let mut rd = demand.to_vec();
    let mut pi = vec![0.0_f64; nodes];
    let mut dist = vec![f64::INFINITY; nodes];
    let mut prev = vec![NONE; nodes];
    let mut done = vec![false; nodes];

    loop {
        if !rs.iter().any(|&x| x > MASS_EPS) || !rd.iter().any(|&x| x > MASS_EPS) {
            break;
        }
        dist.fill(f64::INFINITY);
        prev.fill(NONE);
        done.fill(false);
        dist[src] = 0.0;

        loop {
            let mut u = NONE;
            let mut best = f64::INFINITY;
            for (v, &d) in dist.iter().enumerate() {
                if !done[v] && d < best {
                    best = d;
                    u = v;
                }
            }
            if u == NONE || u == snk {
                break;
            }
            done[u] = true;

            let relax = |v: usize, rc: f64, dist: &mut [f64], prev: &mut [usize]| {
                let nd = best + rc.max(0.0);
                if nd < dist[v] {
                    dist[v] = nd;
                    prev[v] = u;
                }
            };

            if u == src {
                for i in 0..m {
                    if rs[i] > MASS_EPS && !done[i] {
                        relax(i, pi[src] - pi[i], &mut dist, &mut prev);
                    }
                }
            } else if u < m {
                let row = &cost[u * n..(u + 1) * n];
                for (j, &c) in row.iter().enumerate() {
                    let v = m + j;
                    if !done[v] {
                        relax(v, c + pi[u] - pi[v], &mut dist, &mut prev);
                    }
                }
            } else {
                let j = u - m;
                for i in 0..m {
                    if !done[i] && flow[i * n + j] > 0.0 {
                        relax(i, -cost[i * n + j] + pi[u] - pi[i], &mut dist, &mut prev);
                    }
                }
                if rd[j] > MASS_EPS && !done[snk] {
                    relax(snk, pi[u] - pi[snk], &mut dist, &mut prev);
                }
            }
        }

        let dt = dist[snk];
        if !dt.is_finite() {
            break;
        }
        for v in 0..nodes {
            pi[v] += dist[v].min(dt);
        }

        // Bottleneck along snk <- sink <- ... <- source <- src.
        let last_sink = prev[snk];
        let mut delta = rd[last_sink - m];
        let mut v = last_sink;
        loop {
            let u = prev[v];
            if u == src {
                delta = delta.min(rs[v]);
                break;
            }
            if v < m {
                // Backward arc sink u -> source v.
                delta = delta.min(flow[v * n + (u - m)]);
            }
            v = u;
        }

        let mut v = last_sink;
        loop {
            let u = prev[v];
            if u == src {
                rs[v] = if rs[v] == delta { 0.0 } else { rs[v] - delta };
                break;
            }
            if v < m {
                let f = &mut flow[v * n + (u - m)];
                *f = if *f == delta { 0.0 } else { *f - delta };
            } else {
                flow[u * n + (v - m)] += delta;
            }
            v = u;
        }
        let j = last_sink - m;
        rd[j] = if rd[j] == delta { 0.0 } else { rd[j] - delta };
    }

    let total = flow.iter().zip(cost).map(|(f, c)| f * c).sum();
    DenseSolution { flow, cost: total }
}
