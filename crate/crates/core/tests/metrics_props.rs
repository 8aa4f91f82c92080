mod common;

use mdpsim_core::metrics::{hausdorff, solve_emd, DiscreteDistribution, DistanceMatrix};
use ndarray::Array2;
use proptest::prelude::*;

fn weights(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(1u32..=20, n).prop_map(|w| {
        let total: u32 = w.iter().sum();
        w.into_iter().map(|x| x as f64 / total as f64).collect()
    })
}

fn distribution(w: Vec<f64>) -> DiscreteDistribution {
    DiscreteDistribution::new((0..w.len()).collect(), w).unwrap()
}

/// Points on a line with the ground distance `|x - y|`.
fn line_metric(xs: &[f64]) -> DistanceMatrix {
    DistanceMatrix::new(Array2::from_shape_fn((xs.len(), xs.len()), |(i, j)| (xs[i] - xs[j]).abs())).unwrap()
}

/// On the line, the optimal cost is the area between the two CDFs.
fn cdf_gap(xs: &[f64], p: &[f64], q: &[f64]) -> f64 {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let (mut fp, mut fq, mut area) = (0.0, 0.0, 0.0);
    for w in idx.windows(2) {
        fp += p[w[0]];
        fq += q[w[0]];
        area += (fp - fq).abs() * (xs[w[1]] - xs[w[0]]);
    }
    area
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn emd_matches_basis_enumeration(
        (p, q, cost) in (1usize..=4, 1usize..=4).prop_flat_map(|(m, n)| (
            weights(m),
            weights(n),
            prop::collection::vec(prop::collection::vec(0.0f64..1.0, n), m),
        ))
    ) {
        let (m, n) = (p.len(), q.len());
        let ground = DistanceMatrix::new(Array2::from_shape_fn((m, n), |(i, j)| cost[i][j])).unwrap();
        let plan = solve_emd(&distribution(p.clone()), &distribution(q.clone()), &ground).unwrap();
        let oracle = common::transport_oracle(&p, &q, &cost);
        prop_assert!((plan.cost - oracle).abs() < 1e-9, "{} vs {}", plan.cost, oracle);
        for (i, s) in plan.row_sums().iter().enumerate() {
            prop_assert!((s - p[i]).abs() < 1e-9);
        }
        for (j, s) in plan.col_sums().iter().enumerate() {
            prop_assert!((s - q[j]).abs() < 1e-9);
        }
        prop_assert!(plan.flow.iter().all(|&f| f >= -1e-12));
    }

    #[test]
    fn emd_on_a_line_is_the_cdf_area(
        (xs, p, q) in (1usize..=6).prop_flat_map(|n| (
            prop::collection::vec(0.0f64..10.0, n),
            weights(n),
            weights(n),
        ))
    ) {
        let d = line_metric(&xs);
        let cost = solve_emd(&distribution(p.clone()), &distribution(q.clone()), &d).unwrap().cost;
        prop_assert!((cost - cdf_gap(&xs, &p, &q)).abs() < 1e-9);
    }

    #[test]
    fn emd_is_a_metric_over_a_metric_ground(
        (xs, p, q, r) in (1usize..=5).prop_flat_map(|n| (
            prop::collection::vec(0.0f64..10.0, n),
            weights(n),
            weights(n),
            weights(n),
        ))
    ) {
        let d = line_metric(&xs);
        let emd = |a: &[f64], b: &[f64]| solve_emd(&distribution(a.to_vec()), &distribution(b.to_vec()), &d).unwrap().cost;
        let (pq, qp, qr, pr) = (emd(&p, &q), emd(&q, &p), emd(&q, &r), emd(&p, &r));
        prop_assert!((pq - qp).abs() < 1e-9);
        prop_assert!(pr <= pq + qr + 1e-9);
        prop_assert!(emd(&p, &p).abs() < 1e-12);
    }

    #[test]
    fn hausdorff_matches_brute_force_and_is_symmetric(
        (values, a, b) in (1usize..=5, 1usize..=5).prop_flat_map(|(m, n)| (
            prop::collection::vec(prop::collection::vec(0.0f64..1.0, n), m),
            prop::collection::btree_set(0..m, 1..=m),
            prop::collection::btree_set(0..n, 1..=n),
        ))
    ) {
        let (m, n) = (values.len(), values[0].len());
        let d = DistanceMatrix::new(Array2::from_shape_fn((m, n), |(i, j)| values[i][j])).unwrap();
        let dt = DistanceMatrix::new(d.values().t().to_owned()).unwrap();
        let a: Vec<usize> = a.into_iter().collect();
        let b: Vec<usize> = b.into_iter().collect();
        let h = hausdorff(&a, &b, &d).unwrap();
        prop_assert_eq!(h, hausdorff(&b, &a, &dt).unwrap());

        let mut oracle: f64 = 0.0;
        for &i in &a {
            oracle = oracle.max(b.iter().map(|&j| values[i][j]).fold(f64::INFINITY, f64::min));
        }
        for &j in &b {
            oracle = oracle.max(a.iter().map(|&i| values[i][j]).fold(f64::INFINITY, f64::min));
        }
        prop_assert_eq!(h, oracle);
    }
}

#[test]
fn hausdorff_rejects_empty_sets() {
    let d = DistanceMatrix::constant(2, 2, 0.5).unwrap();
    assert!(hausdorff(&[], &[0], &d).is_err());
    assert!(hausdorff(&[0], &[], &d).is_err());
}
