//! Finite MDPs and their bipartite graph form.
//!
//! An [`MdpSpec`] is the declarative, serialisable description; an [`MdpGraph`]
//! is the indexed form used by the similarity computations. State nodes keep the
//! declaration order of the spec and action nodes are ordered by
//! `(state index, action label index)`, so every matrix built on top of a graph
//! has a reproducible layout.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on per-action probability sums.
pub const PROB_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Outcome {
    pub next: String,
    pub prob: f64,
    pub reward: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub state: String,
    pub action: String,
    pub outcomes: Vec<Outcome>,
}

/// Declarative finite MDP. States that never appear as the `state` of a
/// transition entry are absorbing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MdpSpec {
    pub name: String,
    pub states: Vec<String>,
    pub actions: Vec<String>,
    #[serde(default)]
    pub transitions: Vec<Transition>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ViolationKind {
    DuplicateState,
    DuplicateAction,
    UnknownSourceState,
    UnknownAction,
    DuplicateEntry,
    EmptyOutcomes,
    InvalidProbability,
    ProbabilitySum,
    UnknownState,
    NonFiniteReward,
}

/// One failed invariant together with where it was found.
#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub kind: ViolationKind,
    pub location: String,
    pub detail: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.location, self.detail)
    }
}

impl MdpSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    /// Every invariant violation in the spec; empty iff the spec is valid.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let mut push = |kind, location: String, detail: String| {
            out.push(Violation {
                kind,
                location,
                detail,
            })
        };

        let mut seen = HashSet::new();
        for s in &self.states {
            if !seen.insert(s.as_str()) {
                push(
                    ViolationKind::DuplicateState,
                    format!("states[{s}]"),
                    "duplicate state".into(),
                );
            }
        }
        let mut seen_actions = HashSet::new();
        for a in &self.actions {
            if !seen_actions.insert(a.as_str()) {
                push(
                    ViolationKind::DuplicateAction,
                    format!("actions[{a}]"),
                    "duplicate action".into(),
                );
            }
        }

        let mut entries = HashSet::new();
        for (i, t) in self.transitions.iter().enumerate() {
            let loc = format!("transitions[{i}] ({}, {})", t.state, t.action);
            if !seen.contains(t.state.as_str()) {
                push(
                    ViolationKind::UnknownSourceState,
                    loc.clone(),
                    format!("unknown state `{}`", t.state),
                );
            }
            if !seen_actions.contains(t.action.as_str()) {
                push(
                    ViolationKind::UnknownAction,
                    loc.clone(),
                    format!("unknown action `{}`", t.action),
                );
            }
            if !entries.insert((t.state.as_str(), t.action.as_str())) {
                push(
                    ViolationKind::DuplicateEntry,
                    loc.clone(),
                    "duplicate (state, action) entry".into(),
                );
            }
            if t.outcomes.is_empty() {
                push(
                    ViolationKind::EmptyOutcomes,
                    loc.clone(),
                    "no outcomes".into(),
                );
                continue;
            }
            let mut sum = 0.0;
            for (j, o) in t.outcomes.iter().enumerate() {
                let oloc = format!("{loc} outcome {j}");
                if !o.prob.is_finite() || !(0.0..=1.0).contains(&o.prob) {
                    push(
                        ViolationKind::InvalidProbability,
                        oloc.clone(),
                        format!("probability {} outside [0,1]", o.prob),
                    );
                }
                if !o.reward.is_finite() {
                    push(
                        ViolationKind::NonFiniteReward,
                        oloc.clone(),
                        format!("reward {} is not finite", o.reward),
                    );
                }
                if !seen.contains(o.next.as_str()) {
                    push(
                        ViolationKind::UnknownState,
                        oloc,
                        format!("unknown state `{}`", o.next),
                    );
                }
                sum += o.prob;
            }
            if (sum - 1.0).abs() > PROB_TOLERANCE {
                push(
                    ViolationKind::ProbabilitySum,
                    loc,
                    format!("probabilities sum to {sum} ≠ 1"),
                );
            }
        }
        out
    }

    pub fn ensure_valid(&self) -> Result<()> {
        let violations = self.validate();
        if violations.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidMdp {
                name: self.name.clone(),
                violations: violations.iter().map(ToString::to_string).collect(),
            })
        }
    }

    /// `(min, max)` over all outcome rewards, `None` if there are no outcomes.
    pub fn reward_range(&self) -> Option<(f64, f64)> {
        self.transitions
            .iter()
            .flat_map(|t| t.outcomes.iter().map(|o| o.reward))
            .fold(None, |acc, r| match acc {
                None => Some((r, r)),
                Some((lo, hi)) => Some((lo.min(r), hi.max(r))),
            })
    }

    /// Map rewards onto `[0, 1]`.
    ///
    /// Rewards already inside the unit interval are left alone. Otherwise the
    /// affine min-max map `(r - min) / (max - min)` is applied; a constant reward
    /// is clamped into the interval instead.
    pub fn normalize_rewards(&self) -> MdpSpec {
        let Some((lo, hi)) = self.reward_range() else {
            return self.clone();
        };
        if lo >= 0.0 && hi <= 1.0 {
            return self.clone();
        }
        let map = |r: f64| {
            if hi > lo {
                (r - lo) / (hi - lo)
            } else {
                r.clamp(0.0, 1.0)
            }
        };
        let mut out = self.clone();
        for t in &mut out.transitions {
            for o in &mut t.outcomes {
                o.reward = map(o.reward);
            }
        }
        out
    }

    /// Same MDP with transition entries sorted by (state, action) declaration order.
    pub fn canonical(&self) -> MdpSpec {
        let si: HashMap<&str, usize> = index_of(&self.states);
        let ai: HashMap<&str, usize> = index_of(&self.actions);
        let mut out = self.clone();
        out.transitions.sort_by_key(|t| {
            (
                si.get(t.state.as_str()).copied().unwrap_or(usize::MAX),
                ai.get(t.action.as_str()).copied().unwrap_or(usize::MAX),
            )
        });
        out
    }
}

fn index_of(items: &[String]) -> HashMap<&str, usize> {
    items
        .iter()
        .enumerate()
        .map(|(i, s)| (s.as_str(), i))
        .collect()
}

/// Which operand of a disjoint union a node belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Component {
    M,
    N,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum NodeKind {
    State,
    Action,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeRef {
    pub kind: NodeKind,
    pub index: usize,
    pub component: Component,
}

impl NodeRef {
    pub fn state(index: usize) -> Self {
        NodeRef {
            kind: NodeKind::State,
            index,
            component: Component::M,
        }
    }

    pub fn action(index: usize) -> Self {
        NodeRef {
            kind: NodeKind::Action,
            index,
            component: Component::M,
        }
    }
}

impl fmt::Display for NodeRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}#{}({:?})", self.kind, self.index, self.component)
    }
}

/// Transition edge from an action node to a state node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub next: usize,
    pub prob: f64,
    pub reward: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActionNode {
    /// Owning state node (the tail of the single decision edge).
    pub state: usize,
    /// Index into the graph's action label list.
    pub label: usize,
    pub edges: Vec<Edge>,
}

/// Heterogeneous bipartite graph: state nodes, action nodes, decision edges
/// (state → action) and probability/reward-weighted transition edges
/// (action → state).
#[derive(Debug, Clone, PartialEq)]
pub struct MdpGraph {
    pub name: String,
    state_ids: Vec<String>,
    state_components: Vec<Component>,
    labels: Vec<String>,
    actions: Vec<ActionNode>,
    action_components: Vec<Component>,
    /// Out-neighbours (action nodes) of each state node.
    out: Vec<Vec<usize>>,
    lookup: HashMap<String, usize>,
}

impl MdpGraph {
    pub fn build(spec: &MdpSpec) -> Result<Self> {
        spec.ensure_valid()?;
        let si = index_of(&spec.states);
        let ai = index_of(&spec.actions);

        let mut keyed: BTreeMap<(usize, usize), Vec<Edge>> = BTreeMap::new();
        for t in &spec.transitions {
            let edges = t
                .outcomes
                .iter()
                .map(|o| Edge {
                    next: si[o.next.as_str()],
                    prob: o.prob,
                    reward: o.reward,
                })
                .collect();
            keyed.insert((si[t.state.as_str()], ai[t.action.as_str()]), edges);
        }

        let n = spec.states.len();
        let mut out = vec![Vec::new(); n];
        let mut actions = Vec::with_capacity(keyed.len());
        for ((state, label), edges) in keyed {
            out[state].push(actions.len());
            actions.push(ActionNode {
                state,
                label,
                edges,
            });
        }
        let action_count = actions.len();
        Ok(MdpGraph {
            name: spec.name.clone(),
            lookup: spec
                .states
                .iter()
                .enumerate()
                .map(|(i, s)| (s.clone(), i))
                .collect(),
            state_ids: spec.states.clone(),
            state_components: vec![Component::M; n],
            labels: spec.actions.clone(),
            actions,
            action_components: vec![Component::M; action_count],
            out,
        })
    }

    /// Inverse of [`MdpGraph::build`]; yields the canonical form of the spec.
    pub fn to_spec(&self) -> MdpSpec {
        MdpSpec {
            name: self.name.clone(),
            states: self.state_ids.clone(),
            actions: self.labels.clone(),
            transitions: self
                .actions
                .iter()
                .map(|a| Transition {
                    state: self.state_ids[a.state].clone(),
                    action: self.labels[a.label].clone(),
                    outcomes: a
                        .edges
                        .iter()
                        .map(|e| Outcome {
                            next: self.state_ids[e.next].clone(),
                            prob: e.prob,
                            reward: e.reward,
                        })
                        .collect(),
                })
                .collect(),
        }
    }

    pub fn state_count(&self) -> usize {
        self.state_ids.len()
    }

    pub fn action_count(&self) -> usize {
        self.actions.len()
    }

    pub fn state_ids(&self) -> &[String] {
        &self.state_ids
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn action(&self, index: usize) -> &ActionNode {
        &self.actions[index]
    }

    pub fn actions(&self) -> &[ActionNode] {
        &self.actions
    }

    /// Out-neighbour set `N_u` of a state node.
    pub fn out_actions(&self, state: usize) -> &[usize] {
        &self.out[state]
    }

    pub fn is_absorbing(&self, state: usize) -> bool {
        self.out[state].is_empty()
    }

    pub fn state_index(&self, id: &str) -> Option<usize> {
        self.lookup.get(id).copied()
    }

    pub fn state_component(&self, state: usize) -> Component {
        self.state_components[state]
    }

    pub fn action_component(&self, action: usize) -> Component {
        self.action_components[action]
    }

    /// Display identifier of an action node, `state:label`.
    pub fn action_id(&self, action: usize) -> String {
        let a = &self.actions[action];
        format!("{}:{}", self.state_ids[a.state], self.labels[a.label])
    }

    pub fn state_ref(&self, index: usize) -> NodeRef {
        NodeRef {
            kind: NodeKind::State,
            index,
            component: self.state_components[index],
        }
    }

    pub fn action_ref(&self, index: usize) -> NodeRef {
        NodeRef {
            kind: NodeKind::Action,
            index,
            component: self.action_components[index],
        }
    }

    pub(crate) fn check_action(&self, node: NodeRef) -> Result<usize> {
        if node.kind != NodeKind::Action {
            return Err(Error::NotAnActionNode(node.to_string()));
        }
        if node.index >= self.actions.len() {
            return Err(Error::NodeOutOfBounds {
                index: node.index,
                len: self.actions.len(),
            });
        }
        Ok(node.index)
    }

    /// `E[r_α] = Σ p(α, s') r(α, s')`.
    pub fn expected_reward(&self, node: NodeRef) -> Result<f64> {
        let idx = self.check_action(node)?;
        Ok(self.action_reward(idx))
    }

    pub(crate) fn action_reward(&self, action: usize) -> f64 {
        self.actions[action]
            .edges
            .iter()
            .map(|e| e.prob * e.reward)
            .sum()
    }

    /// Successor distribution of an action node with duplicate successors merged
    /// and zero-probability successors dropped, sorted by state index.
    pub fn successor_distribution(&self, action: usize) -> Vec<(usize, f64)> {
        let mut merged: BTreeMap<usize, f64> = BTreeMap::new();
        for e in &self.actions[action].edges {
            *merged.entry(e.next).or_insert(0.0) += e.prob;
        }
        merged.into_iter().filter(|&(_, p)| p > 0.0).collect()
    }

    pub fn rewards_in_unit_interval(&self) -> bool {
        self.actions
            .iter()
            .flat_map(|a| a.edges.iter())
            .all(|e| (0.0..=1.0).contains(&e.reward))
    }

    /// Decision edges `(state, action)`.
    pub fn decision_edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.actions.iter().enumerate().map(|(i, a)| (a.state, i))
    }

    /// Disjoint union `self ⊔ other`; nodes of `other` follow those of `self`
    /// and are tagged [`Component::N`].
    pub fn disjoint_union(&self, other: &MdpGraph) -> MdpGraph {
        let n0 = self.state_count();
        let a0 = self.action_count();

        // Labels are merged by name so the union keeps one label list.
        let mut labels = self.labels.clone();
        let mut label_map = Vec::with_capacity(other.labels.len());
        for l in &other.labels {
            let idx = match labels.iter().position(|x| x == l) {
                Some(i) => i,
                None => {
                    labels.push(l.clone());
                    labels.len() - 1
                }
            };
            label_map.push(idx);
        }

        let mut actions = self.actions.clone();
        actions.extend(other.actions.iter().map(|a| ActionNode {
            state: a.state + n0,
            label: label_map[a.label],
            edges: a
                .edges
                .iter()
                .map(|e| Edge {
                    next: e.next + n0,
                    ..*e
                })
                .collect(),
        }));

        let mut out = self.out.clone();
        out.extend(
            other
                .out
                .iter()
                .map(|o| o.iter().map(|&a| a + a0).collect::<Vec<_>>()),
        );

        let mut state_ids = self.state_ids.clone();
        state_ids.extend(other.state_ids.iter().cloned());
        let mut lookup = self.lookup.clone();
        for (i, s) in other.state_ids.iter().enumerate() {
            lookup.entry(s.clone()).or_insert(i + n0);
        }

        MdpGraph {
            name: format!("{}+{}", self.name, other.name),
            state_ids,
            state_components: vec![Component::M; n0]
                .into_iter()
                .chain(std::iter::repeat_n(Component::N, other.state_count()))
                .collect(),
            labels,
            action_components: vec![Component::M; a0]
                .into_iter()
                .chain(std::iter::repeat_n(Component::N, other.action_count()))
                .collect(),
            actions,
            out,
            lookup,
        }
    }

    /// Short human-readable summary used by `graph-info`.
    pub fn summary(&self) -> GraphSummary {
        GraphSummary {
            name: self.name.clone(),
            states: self.state_count(),
            action_nodes: self.action_count(),
            labels: self.labels.len(),
            absorbing: (0..self.state_count())
                .filter(|&s| self.is_absorbing(s))
                .count(),
            transition_edges: self.actions.iter().map(|a| a.edges.len()).sum(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct GraphSummary {
    pub name: String,
    pub states: usize,
    pub action_nodes: usize,
    pub labels: usize,
    pub absorbing: usize,
    pub transition_edges: usize,
}
