use mdpsim_core::metrics::{DistanceMatrix, TransportPlan};
use mdpsim_core::transfer::{
    t_avg_with_plan, t_state, transfer, uniform_plan, ActionDistances, ActionLayout, Alg2Mode, QTable,
    TransferInputs, TransferMethod,
};
use ndarray::Array2;
use proptest::prelude::*;

const LABELS: usize = 3;

fn qtable(rows: usize, values: &[f64]) -> QTable {
    let mut q = QTable::zeros(
        (0..rows).map(|i| format!("s{i}")).collect(),
        (0..LABELS).map(|i| format!("a{i}")).collect(),
    );
    q.values = Array2::from_shape_vec((rows, LABELS), values.to_vec()).unwrap();
    q
}

fn targets(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("t{i}")).collect()
}

/// Every state offers every label; action node of `(s, l)` is `s * LABELS + l`.
fn full_layout(states: usize) -> ActionLayout {
    ActionLayout::new(
        (0..states)
            .map(|s| (0..LABELS).map(|l| (s * LABELS + l, l)).collect())
            .collect(),
    )
}

fn instance() -> impl Strategy<Value = (usize, usize, Vec<f64>, Vec<f64>)> {
    (1usize..=5, 1usize..=5).prop_flat_map(|(m, n)| {
        (
            Just(m),
            Just(n),
            prop::collection::vec(0.0f64..1.0, m * n),
            prop::collection::vec(-10.0f64..10.0, m * LABELS),
        )
    })
}

fn plan_column_weights(plan: &TransportPlan, col: usize) -> Vec<f64> {
    let column = plan.flow.column(col);
    let total: f64 = column.sum();
    column.iter().map(|w| w / total).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn t_state_copies_the_nearest_row((m, n, d, q) in instance()) {
        let dist = DistanceMatrix::new(Array2::from_shape_vec((m, n), d.clone()).unwrap()).unwrap();
        let q_in = qtable(m, &q);
        let names = targets(n);
        let inputs = TransferInputs { state_distances: &dist, action_distances: None, q_in: &q_in, target_states: &names };
        let out = t_state(&inputs).unwrap();
        for so in 0..n {
            let best = (0..m).min_by(|&a, &b| d[a * n + so].total_cmp(&d[b * n + so]).then(a.cmp(&b))).unwrap();
            prop_assert_eq!(out.values.row(so), q_in.values.row(best));
        }
    }

    #[test]
    fn t_avg_is_a_column_weighted_mean((m, n, d, q) in instance()) {
        let dist = DistanceMatrix::new(Array2::from_shape_vec((m, n), d).unwrap()).unwrap();
        let q_in = qtable(m, &q);
        let names = targets(n);
        let inputs = TransferInputs { state_distances: &dist, action_distances: None, q_in: &q_in, target_states: &names };
        let plan = uniform_plan(&dist).unwrap();
        for (i, s) in plan.row_sums().iter().enumerate() {
            prop_assert!((s - 1.0 / m as f64).abs() < 1e-9, "row {} sums to {}", i, s);
        }
        let out = t_avg_with_plan(&inputs, &plan).unwrap();
        for so in 0..n {
            let w = plan_column_weights(&plan, so);
            for l in 0..LABELS {
                let expected: f64 = (0..m).map(|si| w[si] * q_in.values[[si, l]]).sum();
                prop_assert!((out.values[[so, l]] - expected).abs() < 1e-9);
                let col = q_in.values.column(l);
                let (lo, hi) = col.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
                prop_assert!(out.values[[so, l]] >= lo - 1e-9 && out.values[[so, l]] <= hi + 1e-9);
            }
        }
    }

    #[test]
    fn all_methods_reproduce_q_when_states_are_distinct(
        (n, off, q) in (1usize..=5).prop_flat_map(|n| (
            Just(n),
            prop::collection::vec(0.01f64..1.0, n * n),
            prop::collection::vec(-10.0f64..10.0, n * LABELS),
        ))
    ) {
        let d = Array2::from_shape_fn((n, n), |(i, j)| if i == j { 0.0 } else { off[i * n + j] });
        let dist = DistanceMatrix::new(d).unwrap();
        let na = n * LABELS;
        let a = Array2::from_shape_fn((na, na), |(x, y)| if x == y { 0.0 } else { 0.5 + off[(x + y) % (n * n)] / 2.0 });
        let adist = DistanceMatrix::new(a).unwrap();
        let layout = full_layout(n);
        let q_in = qtable(n, &q);
        let names = targets(n);
        let inputs = TransferInputs {
            state_distances: &dist,
            action_distances: Some(ActionDistances { matrix: &adist, source: &layout, target: &layout }),
            q_in: &q_in,
            target_states: &names,
        };
        for method in TransferMethod::ALL {
            let out = transfer(method, &inputs, None, Alg2Mode::Accumulate).unwrap();
            let gap = (&out.values - &q_in.values).iter().fold(0.0f64, |g, v| g.max(v.abs()));
            prop_assert!(gap < 1e-12, "{}: gap {}", method, gap);
        }
    }
}

#[test]
fn act_methods_reject_missing_action_distances() {
    let dist = DistanceMatrix::constant(2, 2, 0.5).unwrap();
    let q_in = qtable(2, &[0.0; 6]);
    let names = targets(2);
    let inputs = TransferInputs {
        state_distances: &dist,
        action_distances: None,
        q_in: &q_in,
        target_states: &names,
    };
    for method in [TransferMethod::TStateAct, TransferMethod::TAvgAct] {
        assert!(transfer(method, &inputs, None, Alg2Mode::Accumulate).is_err());
    }
}
