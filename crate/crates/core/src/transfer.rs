//! Q-table initialisation of a target task from a trained source task.
//!
//! All methods read a state distance matrix `δ_S` with source states as rows
//! and target states as columns. The action-aware variants additionally use the
//! SS2 action distance matrix, addressed through per-state blocks
//! `δ_A[N_{s_i}, N_{s_o}]`. Every argmin breaks ties on the lowest index.

use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::MdpGraph;
use crate::metrics::{solve_emd, DiscreteDistribution, DistanceMatrix, TransportPlan};

/// Tabular action-value function; columns follow the MDP's global action labels.
#[derive(Debug, Clone, PartialEq)]
pub struct QTable {
    pub states: Vec<String>,
    pub actions: Vec<String>,
    pub values: Array2<f64>,
}

impl QTable {
    pub fn zeros(states: Vec<String>, actions: Vec<String>) -> Self {
        let values = Array2::zeros((states.len(), actions.len()));
        QTable {
            states,
            actions,
            values,
        }
    }

    pub fn for_graph(graph: &MdpGraph) -> Self {
        Self::zeros(graph.state_ids().to_vec(), graph.labels().to_vec())
    }

    pub fn shape(&self) -> (usize, usize) {
        self.values.dim()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TransferMethod {
    #[serde(rename = "t-state")]
    TState,
    #[serde(rename = "t-avg")]
    TAvg,
    #[serde(rename = "t-state-act")]
    TStateAct,
    #[serde(rename = "t-avg-act")]
    TAvgAct,
}

impl TransferMethod {
    pub const ALL: [TransferMethod; 4] = [
        TransferMethod::TState,
        TransferMethod::TAvg,
        TransferMethod::TStateAct,
        TransferMethod::TAvgAct,
    ];

    pub fn needs_action_distances(self) -> bool {
        matches!(self, TransferMethod::TStateAct | TransferMethod::TAvgAct)
    }

    pub fn name(self) -> &'static str {
        match self {
            TransferMethod::TState => "t-state",
            TransferMethod::TAvg => "t-avg",
            TransferMethod::TStateAct => "t-state-act",
            TransferMethod::TAvgAct => "t-avg-act",
        }
    }

    /// Column label used in result tables ("STATE", "AVG-ACT", ...).
    pub fn table_label(self) -> &'static str {
        match self {
            TransferMethod::TState => "STATE",
            TransferMethod::TAvg => "AVG",
            TransferMethod::TStateAct => "STATE-ACT",
            TransferMethod::TAvgAct => "AVG-ACT",
        }
    }
}

impl fmt::Display for TransferMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TransferMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        TransferMethod::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::parse("transfer method", format!("unknown method `{s}`")))
    }
}

/// How T-AVG-ACT combines the per-source contributions for one target entry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Alg2Mode {
    /// Weighted sum over all source states.
    #[default]
    Accumulate,
    /// Plain assignment inside the (source, target) loop; the last source wins.
    Literal,
}

/// Action nodes of each state as `(row/column in δ_A, Q-table column)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActionLayout {
    per_state: Vec<Vec<(usize, usize)>>,
}

impl ActionLayout {
    pub fn from_graph(graph: &MdpGraph) -> Self {
        ActionLayout {
            per_state: (0..graph.state_count())
                .map(|s| {
                    graph
                        .out_actions(s)
                        .iter()
                        .map(|&a| (a, graph.action(a).label))
                        .collect()
                })
                .collect(),
        }
    }

    pub fn new(per_state: Vec<Vec<(usize, usize)>>) -> Self {
        ActionLayout { per_state }
    }

    pub fn state_count(&self) -> usize {
        self.per_state.len()
    }

    pub fn actions_of(&self, state: usize) -> &[(usize, usize)] {
        &self.per_state[state]
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ActionDistances<'a> {
    /// `|Λ_in| × |Λ_out|` action distance matrix.
    pub matrix: &'a DistanceMatrix,
    pub source: &'a ActionLayout,
    pub target: &'a ActionLayout,
}

#[derive(Debug, Clone, Copy)]
pub struct TransferInputs<'a> {
    /// `|S_in| × |S_out|` state distances.
    pub state_distances: &'a DistanceMatrix,
    pub action_distances: Option<ActionDistances<'a>>,
    pub q_in: &'a QTable,
    pub target_states: &'a [String],
}

impl<'a> TransferInputs<'a> {
    fn check(&self) -> Result<()> {
        let d = self.state_distances;
        if d.rows() == 0 {
            return Err(Error::EmptySet("transfer source states"));
        }
        if d.rows() != self.q_in.values.nrows() || d.cols() != self.target_states.len() {
            return Err(Error::DimensionMismatch(format!(
                "state distances are {}x{}, Q_in has {} rows and the target {} states",
                d.rows(),
                d.cols(),
                self.q_in.values.nrows(),
                self.target_states.len()
            )));
        }
        Ok(())
    }

    fn output(&self) -> QTable {
        QTable::zeros(self.target_states.to_vec(), self.q_in.actions.clone())
    }

    fn actions(&self, method: TransferMethod) -> Result<ActionDistances<'a>> {
        let ad = self
            .action_distances
            .ok_or_else(|| Error::MissingActionDistances(method.name().into()))?;
        if ad.source.state_count() != self.state_distances.rows()
            || ad.target.state_count() != self.state_distances.cols()
        {
            return Err(Error::DimensionMismatch(
                "action layouts do not match the state distance matrix".into(),
            ));
        }
        Ok(ad)
    }
}

/// Lowest-index argmin of column `col`.
fn column_argmin(d: &DistanceMatrix, col: usize) -> usize {
    let mut best = 0;
    for row in 1..d.rows() {
        if d.get(row, col) < d.get(best, col) {
            best = row;
        }
    }
    best
}

/// Uniform-marginal transport plan on `δ_S` (rows = source states).
pub fn uniform_plan(state_distances: &DistanceMatrix) -> Result<TransportPlan> {
    let p = DiscreteDistribution::uniform(state_distances.rows())?;
    let q = DiscreteDistribution::uniform(state_distances.cols())?;
    solve_emd(&p, &q, state_distances)
}

/// Copy each target state's row from its nearest source state.
pub fn t_state(inputs: &TransferInputs) -> Result<QTable> {
    inputs.check()?;
    let mut out = inputs.output();
    for so in 0..inputs.target_states.len() {
        let si = column_argmin(inputs.state_distances, so);
        out.values.row_mut(so).assign(&inputs.q_in.values.row(si));
    }
    Ok(out)
}

/// Convex combination of source rows weighted by the column of the uniform
/// transport plan.
pub fn t_avg(inputs: &TransferInputs) -> Result<QTable> {
    inputs.check()?;
    let plan = uniform_plan(inputs.state_distances)?;
    t_avg_with_plan(inputs, &plan)
}

pub fn t_avg_with_plan(inputs: &TransferInputs, plan: &TransportPlan) -> Result<QTable> {
    inputs.check()?;
    check_plan(inputs, plan)?;
    let mut out = inputs.output();
    for so in 0..inputs.target_states.len() {
        let column = plan.flow.column(so);
        let total = column.sum();
        if total <= 0.0 {
            continue;
        }
        let mut row = out.values.row_mut(so);
        for (si, &k) in column.iter().enumerate() {
            if k > 0.0 {
                row.scaled_add(k / total, &inputs.q_in.values.row(si));
            }
        }
    }
    Ok(out)
}

fn check_plan(inputs: &TransferInputs, plan: &TransportPlan) -> Result<()> {
    let d = inputs.state_distances;
    if plan.flow.dim() != (d.rows(), d.cols()) {
        return Err(Error::DimensionMismatch(format!(
            "plan is {:?}, distances are {}x{}",
            plan.flow.dim(),
            d.rows(),
            d.cols()
        )));
    }
    Ok(())
}

/// Source action to read for each target action of the pair `(si, so)`,
/// as Q-table columns `(target column, source column)`. `None` when the source
/// state is absorbing and so has no actions to read.
fn action_mapping(
    ad: &ActionDistances,
    si: usize,
    so: usize,
    source_names: &[String],
    target_names: &[String],
) -> Result<Option<Vec<(usize, usize)>>> {
    let src = ad.source.actions_of(si);
    let dst = ad.target.actions_of(so);
    if dst.is_empty() {
        return Ok(Some(Vec::new()));
    }
    if src.is_empty() {
        return Ok(None);
    }
    let aligned = src.len() == dst.len() && src.iter().zip(dst).all(|(a, b)| a.1 == b.1);
    if !aligned {
        return Err(Error::MisalignedActions {
            left: source_names[si].clone(),
            right: target_names[so].clone(),
        });
    }
    let sub = |i: usize, j: usize| ad.matrix.get(src[i].0, dst[j].0);
    let mapping = (0..dst.len())
        .map(|j| {
            let mut best = 0;
            for i in 1..src.len() {
                if sub(i, j) < sub(best, j) {
                    best = i;
                }
            }
            let chosen = if sub(j, j) == sub(best, j) { j } else { best };
            (dst[j].1, src[chosen].1)
        })
        .collect();
    Ok(Some(mapping))
}

/// Nearest source state per target state, with target actions remapped to the
/// closest source action (the aligned action wins ties).
pub fn t_state_act(inputs: &TransferInputs) -> Result<QTable> {
    inputs.check()?;
    let ad = inputs.actions(TransferMethod::TStateAct)?;
    let mut out = inputs.output();
    for so in 0..inputs.target_states.len() {
        let si = column_argmin(inputs.state_distances, so);
        if let Some(map) = action_mapping(&ad, si, so, &inputs.q_in.states, inputs.target_states)? {
            for (col_out, col_in) in map {
                out.values[[so, col_out]] = inputs.q_in.values[[si, col_in]];
            }
        }
    }
    Ok(out)
}

/// Transport-weighted transfer with action remapping. Weights are the plan
/// entries normalised over each source row.
pub fn t_avg_act(inputs: &TransferInputs, mode: Alg2Mode) -> Result<QTable> {
    inputs.check()?;
    let plan = uniform_plan(inputs.state_distances)?;
    t_avg_act_with_plan(inputs, &plan, mode)
}

pub fn t_avg_act_with_plan(
    inputs: &TransferInputs,
    plan: &TransportPlan,
    mode: Alg2Mode,
) -> Result<QTable> {
    inputs.check()?;
    check_plan(inputs, plan)?;
    let ad = inputs.actions(TransferMethod::TAvgAct)?;
    let mut out = inputs.output();
    for si in 0..inputs.state_distances.rows() {
        let row_total = plan.flow.row(si).sum();
        for so in 0..inputs.target_states.len() {
            let w = if row_total > 0.0 {
                plan.flow[[si, so]] / row_total
            } else {
                0.0
            };
            if mode == Alg2Mode::Accumulate && w == 0.0 {
                continue;
            }
            let Some(map) = action_mapping(&ad, si, so, &inputs.q_in.states, inputs.target_states)?
            else {
                continue;
            };
            for (col_out, col_in) in map {
                let value = w * inputs.q_in.values[[si, col_in]];
                match mode {
                    Alg2Mode::Accumulate => out.values[[so, col_out]] += value,
                    Alg2Mode::Literal => out.values[[so, col_out]] = value,
                }
            }
        }
    }
    Ok(out)
}

/// Dispatch on `method`; `plan` is reused by the transport-based methods when given.
pub fn transfer(
    method: TransferMethod,
    inputs: &TransferInputs,
    plan: Option<&TransportPlan>,
    mode: Alg2Mode,
) -> Result<QTable> {
    let owned;
    let plan = match (plan, method) {
        (Some(p), _) => Some(p),
        (None, TransferMethod::TAvg | TransferMethod::TAvgAct) => {
            inputs.check()?;
            owned = uniform_plan(inputs.state_distances)?;
            Some(&owned)
        }
        (None, _) => None,
    };
    match method {
        TransferMethod::TState => t_state(inputs),
        TransferMethod::TStateAct => t_state_act(inputs),
        TransferMethod::TAvg => t_avg_with_plan(inputs, plan.expect("plan computed above")),
        TransferMethod::TAvgAct => {
            t_avg_act_with_plan(inputs, plan.expect("plan computed above"), mode)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn names(prefix: &str, n: usize) -> Vec<String> {
        (0..n).map(|i| format!("{prefix}{i}")).collect()
    }

    fn q(values: Array2<f64>) -> QTable {
        QTable {
            states: names("s", values.nrows()),
            actions: names("a", values.ncols()),
            values,
        }
    }

    #[test]
    fn t_state_picks_column_argmin() {
        let d = DistanceMatrix::new(array![[0.1, 0.9], [0.8, 0.2]]).unwrap();
        let q_in = q(array![[1.0, 2.0], [3.0, 4.0]]);
        let targets = names("t", 2);
        let inputs = TransferInputs {
            state_distances: &d,
            action_distances: None,
            q_in: &q_in,
            target_states: &targets,
        };
        assert_eq!(t_state(&inputs).unwrap().values, q_in.values);

        let uniform = DistanceMatrix::constant(2, 3, 0.5).unwrap();
        let targets = names("t", 3);
        let inputs = TransferInputs {
            state_distances: &uniform,
            target_states: &targets,
            ..inputs
        };
        let out = t_state(&inputs).unwrap();
        for row in out.values.rows() {
            assert_eq!(row, q_in.values.row(0));
        }
    }

    #[test]
    fn t_avg_examples() {
        let d = DistanceMatrix::new(array![[0.0, 1.0], [1.0, 0.0]]).unwrap();
        let q_in = q(array![[1.0, 2.0], [3.0, 4.0]]);
        let targets = names("t", 2);
        let inputs = TransferInputs {
            state_distances: &d,
            action_distances: None,
            q_in: &q_in,
            target_states: &targets,
        };
        assert_eq!(t_avg(&inputs).unwrap().values, q_in.values);

        // Two sources sharing one target: K column (0.5, 0.5).
        let d = DistanceMatrix::new(array![[0.3], [0.6]]).unwrap();
        let q_in = q(array![[0.0], [1.0]]);
        let targets = names("t", 1);
        let inputs = TransferInputs {
            state_distances: &d,
            action_distances: None,
            q_in: &q_in,
            target_states: &targets,
        };
        assert_eq!(t_avg(&inputs).unwrap().values, array![[0.5]]);
    }

    fn two_action_layout(states: usize) -> ActionLayout {
        ActionLayout::new(
            (0..states)
                .map(|s| vec![(2 * s, 0), (2 * s + 1, 1)])
                .collect(),
        )
    }

    #[test]
    fn t_state_act_remaps_strictly_closer_action() {
        // One source and one target state with actions (left, up).
        // Target `up` is strictly closer to source `left`.
        let d = DistanceMatrix::new(array![[0.2]]).unwrap();
        let a = DistanceMatrix::new(array![[0.1, 0.05], [0.9, 0.3]]).unwrap();
        let layout = two_action_layout(1);
        let q_in = q(array![[7.0, -1.0]]);
        let targets = names("t", 1);
        let inputs = TransferInputs {
            state_distances: &d,
            action_distances: Some(ActionDistances {
                matrix: &a,
                source: &layout,
                target: &layout,
            }),
            q_in: &q_in,
            target_states: &targets,
        };
        let out = t_state_act(&inputs).unwrap();
        assert_eq!(out.values, array![[7.0, 7.0]]);
    }

    #[test]
    fn t_state_act_keeps_aligned_action_on_ties() {
        let d = DistanceMatrix::new(array![[0.2]]).unwrap();
        let a = DistanceMatrix::new(array![[0.1, 0.1], [0.1, 0.1]]).unwrap();
        let layout = two_action_layout(1);
        let q_in = q(array![[7.0, -1.0]]);
        let targets = names("t", 1);
        let inputs = TransferInputs {
            state_distances: &d,
            action_distances: Some(ActionDistances {
                matrix: &a,
                source: &layout,
                target: &layout,
            }),
            q_in: &q_in,
            target_states: &targets,
        };
        assert_eq!(t_state_act(&inputs).unwrap().values, q_in.values);
    }

    #[test]
    fn act_methods_require_action_distances() {
        let d = DistanceMatrix::new(array![[0.2]]).unwrap();
        let q_in = q(array![[1.0]]);
        let targets = names("t", 1);
        let inputs = TransferInputs {
            state_distances: &d,
            action_distances: None,
            q_in: &q_in,
            target_states: &targets,
        };
        assert!(matches!(
            t_state_act(&inputs),
            Err(Error::MissingActionDistances(_))
        ));
        assert!(matches!(
            t_avg_act(&inputs, Alg2Mode::Accumulate),
            Err(Error::MissingActionDistances(_))
        ));
    }

    #[test]
    fn t_avg_act_weighted_sum() {
        // Two sources, one target; plan column (0.5, 0.5), rows each carry their
        // whole mass to the single target so w = 1 for both. Row normalisation
        // then sums both sources' values.
        let d = DistanceMatrix::new(array![[0.3], [0.3]]).unwrap();
        let a = DistanceMatrix::new(array![[0.0, 1.0], [1.0, 0.0], [0.0, 1.0], [1.0, 0.0]]).unwrap();
        let source = two_action_layout(2);
        let target = two_action_layout(1);
        let q_in = q(array![[0.0, 2.0], [1.0, 4.0]]);
        let targets = names("t", 1);
        let inputs = TransferInputs {
            state_distances: &d,
            action_distances: Some(ActionDistances {
                matrix: &a,
                source: &source,
                target: &target,
            }),
            q_in: &q_in,
            target_states: &targets,
        };
        let out = t_avg_act(&inputs, Alg2Mode::Accumulate).unwrap();
        assert_eq!(out.values, array![[1.0, 6.0]]);
        let literal = t_avg_act(&inputs, Alg2Mode::Literal).unwrap();
        assert_eq!(literal.values, array![[1.0, 4.0]]);
    }

    #[test]
    fn t_avg_act_single_state_identity() {
        let d = DistanceMatrix::new(array![[0.0005]]).unwrap();
        let a = DistanceMatrix::new(array![[0.0]]).unwrap();
        let layout = ActionLayout::new(vec![vec![(0, 0)]]);
        let q_in = q(array![[3.5]]);
        let targets = names("t", 1);
        let inputs = TransferInputs {
            state_distances: &d,
            action_distances: Some(ActionDistances {
                matrix: &a,
                source: &layout,
                target: &layout,
            }),
            q_in: &q_in,
            target_states: &targets,
        };
        assert_eq!(t_avg_act(&inputs, Alg2Mode::Accumulate).unwrap().values, q_in.values);
    }

    #[test]
    fn misaligned_layouts_error() {
        let d = DistanceMatrix::new(array![[0.2]]).unwrap();
        let a = DistanceMatrix::new(array![[0.1, 0.1]]).unwrap();
        let source = ActionLayout::new(vec![vec![(0, 0)]]);
        let target = two_action_layout(1);
        let q_in = q(array![[1.0, 2.0]]);
        let targets = names("t", 1);
        let inputs = TransferInputs {
            state_distances: &d,
            action_distances: Some(ActionDistances {
                matrix: &a,
                source: &source,
                target: &target,
            }),
            q_in: &q_in,
            target_states: &targets,
        };
        assert!(matches!(
            t_state_act(&inputs),
            Err(Error::MisalignedActions { .. })
        ));
    }

    #[test]
    fn method_names_round_trip() {
        for m in TransferMethod::ALL {
            assert_eq!(m.name().parse::<TransferMethod>().unwrap(), m);
        }
        assert!("t-magic".parse::<TransferMethod>().is_err());
    }
}
