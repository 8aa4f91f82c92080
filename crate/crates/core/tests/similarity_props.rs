mod common;

use mdpsim_core::similarity::{song_dprime, ss2_cross, ss2_full, SongConfig, Ss2Config, Ss2Solver};
use mdpsim_core::MdpGraph;
use ndarray::{s, Array2};
use proptest::prelude::*;

fn expected_reward(g: &MdpGraph, a: usize) -> f64 {
    g.action(a).edges.iter().map(|e| e.prob * e.reward).sum()
}

/// One sweep of the recursion written out directly: action pairs from the
/// previous state matrix, then state pairs from the new action matrix.
fn direct_sweep(gm: &MdpGraph, gn: &MdpGraph, s_prev: &Array2<f64>, cfg: &Ss2Config) -> (Array2<f64>, Array2<f64>) {
    let a = Array2::from_shape_fn((gm.action_count(), gn.action_count()), |(x, y)| {
        let dr = (expected_reward(gm, x) - expected_reward(gn, y)).abs();
        let p = gm.successor_distribution(x);
        let q = gn.successor_distribution(y);
        let supply: Vec<f64> = p.iter().map(|e| e.1).collect();
        let demand: Vec<f64> = q.iter().map(|e| e.1).collect();
        let cost: Vec<Vec<f64>> = p
            .iter()
            .map(|&(u, _)| q.iter().map(|&(v, _)| 1.0 - s_prev[[u, v]]).collect())
            .collect();
        let emd = common::transport_oracle(&supply, &demand, &cost);
        1.0 - (1.0 - cfg.c_a) * dr - cfg.c_a * emd
    });
    let s = Array2::from_shape_fn((gm.state_count(), gn.state_count()), |(u, v)| {
        match (gm.is_absorbing(u), gn.is_absorbing(v)) {
            (true, true) => cfg.omega,
            (true, false) | (false, true) => 0.0,
            (false, false) => {
                let (nu, nv) = (gm.out_actions(u), gn.out_actions(v));
                let mut h: f64 = 0.0;
                for &x in nu {
                    h = h.max(nv.iter().map(|&y| 1.0 - a[[x, y]]).fold(f64::INFINITY, f64::min));
                }
                for &y in nv {
                    h = h.max(nu.iter().map(|&x| 1.0 - a[[x, y]]).fold(f64::INFINITY, f64::min));
                }
                cfg.c_s * (1.0 - h)
            }
        }
    });
    (s, a)
}

fn max_gap(x: &Array2<f64>, y: &Array2<f64>) -> f64 {
    x.iter().zip(y.iter()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
}

fn pair(seed: u64) -> (MdpGraph, MdpGraph) {
    (
        common::random_graph(seed, 5, 3),
        common::random_graph(seed.wrapping_mul(31).wrapping_add(7), 5, 3),
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn sweeps_match_direct_recursion(seed in any::<u64>()) {
        let (gm, gn) = pair(seed);
        let cfg = Ss2Config::default();
        let mut solver = Ss2Solver::cross(&gm, &gn, cfg).unwrap();
        let mut s_prev = solver.s().clone();
        for _ in 0..4 {
            solver.sweep();
            let (s, a) = direct_sweep(&gm, &gn, &s_prev, &cfg);
            prop_assert!(max_gap(solver.a(), &a) < 1e-12);
            prop_assert!(max_gap(solver.s(), &s) < 1e-12);
            s_prev = s;
        }
    }

    #[test]
    fn converged_result_is_a_fixed_point(seed in any::<u64>()) {
        let (gm, gn) = pair(seed);
        let cfg = Ss2Config { abs_tol: 1e-13, rel_tol: 1e-13, ..Ss2Config::default() };
        let r = ss2_cross(&gm, &gn, cfg).unwrap();
        prop_assert!(r.converged);
        let (s, a) = direct_sweep(&gm, &gn, &r.s, &cfg);
        prop_assert!(max_gap(&s, &r.s) < 1e-9);
        prop_assert!(max_gap(&a, &r.a) < 1e-9);
    }

    #[test]
    fn iterates_are_bounded_and_non_decreasing(seed in any::<u64>()) {
        let (gm, gn) = pair(seed);
        let mut solver = Ss2Solver::cross(&gm, &gn, Ss2Config::default()).unwrap();
        while !solver.is_converged() && solver.iterations() < 1000 {
            let (s0, a0) = (solver.s().clone(), solver.a().clone());
            solver.sweep();
            prop_assert!(solver.s().iter().zip(s0.iter()).all(|(n, o)| *n >= *o - 1e-12));
            prop_assert!(solver.a().iter().zip(a0.iter()).all(|(n, o)| *n >= *o - 1e-12));
            prop_assert!(solver.s().iter().chain(solver.a().iter()).all(|v| (0.0..=1.0).contains(v)));
        }
        prop_assert!(solver.is_converged());
    }

    #[test]
    fn swapping_the_mdps_transposes_the_result(seed in any::<u64>()) {
        let (gm, gn) = pair(seed);
        let mn = ss2_cross(&gm, &gn, Ss2Config::default()).unwrap();
        let nm = ss2_cross(&gn, &gm, Ss2Config::default()).unwrap();
        prop_assert_eq!(mn.iterations, nm.iterations);
        prop_assert!(max_gap(&mn.s, &nm.s.t().to_owned()) < 1e-12);
        prop_assert!(max_gap(&mn.a, &nm.a.t().to_owned()) < 1e-12);
    }

    #[test]
    fn full_mode_distances_form_a_metric(seed in any::<u64>()) {
        let (gm, gn) = pair(seed);
        let r = ss2_full(&gm, &gn, Ss2Config::default()).unwrap();
        let d = r.s.mapv(|v| 1.0 - v);
        let violations = common::metric_violations(&d, 1e-9);
        prop_assert!(violations.is_empty(), "{:?}", violations);
        let nm = gm.state_count();
        let cross = ss2_cross(&gm, &gn, Ss2Config { abs_tol: 1e-13, rel_tol: 1e-13, ..Ss2Config::default() }).unwrap();
        let tight = ss2_full(&gm, &gn, Ss2Config { abs_tol: 1e-13, rel_tol: 1e-13, ..Ss2Config::default() }).unwrap();
        prop_assert!(max_gap(&tight.s.slice(s![..nm, nm..]).to_owned(), &cross.s) < 1e-9);
    }

    #[test]
    fn song_self_distance_is_a_pseudometric(seed in any::<u64>()) {
        let g = MdpGraph::build(&common::random_mdp_all_labels(seed, 5, 3)).unwrap();
        let r = song_dprime(&g, &g, SongConfig::default()).unwrap();
        prop_assert!(r.converged);
        let violations = common::metric_violations(&r.d, 1e-6);
        prop_assert!(violations.is_empty(), "{:?}", violations);
        prop_assert!(r.d.iter().all(|&v| (0.0..=2.0 + 1e-9).contains(&v)));
    }
}

#[test]
fn larger_state_discount_never_lowers_similarity() {
    for seed in 0..20 {
        let (gm, gn) = pair(seed);
        let lo = ss2_cross(&gm, &gn, Ss2Config::with_constants(0.8, 0.5)).unwrap();
        let hi = ss2_cross(&gm, &gn, Ss2Config::with_constants(0.95, 0.5)).unwrap();
        for (a, b) in lo.s.iter().zip(hi.s.iter()) {
            assert!(*b >= *a - 1e-6, "seed {seed}: {a} > {b}");
        }
    }
}
