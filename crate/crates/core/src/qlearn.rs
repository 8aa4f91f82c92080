//! Tabular ε-greedy Q-learning: source training to a near-optimal criterion and
//! fixed-budget evaluation of an initial Q-table.

use std::collections::VecDeque;
use std::path::Path;

use ndarray::{Array2, ArrayView1};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gridworld::GridSpec;
use crate::mdp::{MdpGraph, MdpSpec};
use crate::transfer::QTable;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub alpha: f64,
    pub gamma: f64,
    pub epsilon_start: f64,
    pub epsilon_min: f64,
    pub epsilon_decay: f64,
    pub criterion_window: usize,
    pub criterion_ratio: f64,
    pub max_steps: u64,
    /// Steps before an unfinished episode is abandoned; `None` means `10·|S|`.
    pub episode_step_cap: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            alpha: 0.1,
            gamma: 0.9,
            epsilon_start: 0.9,
            epsilon_min: 0.1,
            epsilon_decay: 1e-6,
            criterion_window: 20,
            criterion_ratio: 0.9,
            max_steps: 2_000_000,
            episode_step_cap: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |name: &str, v: f64| {
            if v > 0.0 && v <= 1.0 {
                Ok(())
            } else {
                Err(Error::InvalidConfig(format!("{name} = {v} must lie in (0, 1]")))
            }
        };
        unit("alpha", self.alpha)?;
        unit("gamma", self.gamma)?;
        unit("epsilon_start", self.epsilon_start)?;
        unit("epsilon_min", self.epsilon_min)?;
        unit("criterion_ratio", self.criterion_ratio)?;
        if self.epsilon_decay < 0.0 || !self.epsilon_decay.is_finite() {
            return Err(Error::InvalidConfig("epsilon_decay must be non-negative".into()));
        }
        if self.criterion_window == 0 {
            return Err(Error::InvalidConfig("criterion_window must be at least 1".into()));
        }
        if self.episode_step_cap == Some(0) {
            return Err(Error::InvalidConfig("episode_step_cap must be positive".into()));
        }
        Ok(())
    }

    pub fn epsilon_at(&self, step: u64) -> f64 {
        (self.epsilon_start - self.epsilon_decay * step as f64).max(self.epsilon_min)
    }
}

/// An episodic environment over an MDP graph with a fixed start state.
/// Episodes end on reaching an absorbing state.
#[derive(Debug, Clone)]
pub struct TabularEnv {
    graph: MdpGraph,
    start: usize,
    /// Available global action labels per state, ascending.
    available: Vec<Vec<usize>>,
    /// Action node per (state, label).
    node: Vec<Vec<Option<usize>>>,
}

impl TabularEnv {
    pub fn new(graph: MdpGraph, start: usize) -> Result<Self> {
        if start >= graph.state_count() {
            return Err(Error::NodeOutOfBounds {
                index: start,
                len: graph.state_count(),
            });
        }
        if graph.is_absorbing(start) {
            return Err(Error::Degenerate("start state is absorbing".into()));
        }
        let labels = graph.labels().len();
        let mut node = vec![vec![None; labels]; graph.state_count()];
        for (s, row) in node.iter_mut().enumerate() {
            for &a in graph.out_actions(s) {
                row[graph.action(a).label] = Some(a);
            }
        }
        let available = node
            .iter()
            .map(|row| (0..labels).filter(|&l| row[l].is_some()).collect())
            .collect();
        Ok(TabularEnv {
            graph,
            start,
            available,
            node,
        })
    }

    pub fn from_spec(spec: &MdpSpec, start: &str) -> Result<Self> {
        let graph = MdpGraph::build(spec)?;
        let start = graph
            .state_index(start)
            .ok_or_else(|| Error::parse("start state", format!("unknown state `{start}`")))?;
        Self::new(graph, start)
    }

    /// Environment with the grid's raw rewards.
    pub fn from_grid(grid: &GridSpec) -> Result<Self> {
        grid.validate()?;
        Self::from_spec(&grid.to_mdp(), &GridSpec::state_id(grid.start))
    }

    pub fn graph(&self) -> &MdpGraph {
        &self.graph
    }

    pub fn start(&self) -> usize {
        self.start
    }

    pub fn state_count(&self) -> usize {
        self.graph.state_count()
    }

    pub fn action_count(&self) -> usize {
        self.graph.labels().len()
    }

    pub fn is_terminal(&self, state: usize) -> bool {
        self.graph.is_absorbing(state)
    }

    pub fn available(&self, state: usize) -> &[usize] {
        &self.available[state]
    }

    /// Sample the outcome of global action `label` in `state`. Deterministic
    /// actions consume no randomness.
    pub fn step<R: Rng>(&self, state: usize, label: usize, rng: &mut R) -> (usize, f64) {
        let a = self.node[state][label].expect("action available in state");
        let edges = &self.graph.action(a).edges;
        if edges.len() == 1 {
            return (edges[0].next, edges[0].reward);
        }
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        for e in edges {
            acc += e.prob;
            if u < acc {
                return (e.next, e.reward);
            }
        }
        let last = edges.last().expect("validated action has outcomes");
        (last.next, last.reward)
    }

    pub fn zero_q(&self) -> QTable {
        QTable::for_graph(&self.graph)
    }

    pub fn check_q(&self, q: &QTable) -> Result<()> {
        if q.states.as_slice() != self.graph.state_ids() || q.actions.as_slice() != self.graph.labels()
        {
            return Err(Error::DimensionMismatch(format!(
                "Q-table is {}x{} over different labels than the {}x{} environment",
                q.states.len(),
                q.actions.len(),
                self.state_count(),
                self.action_count()
            )));
        }
        Ok(())
    }
}

/// One Q-learning update; returns the new value of `Q[s, a]`.
pub fn q_update(
    q: &mut Array2<f64>,
    s: usize,
    a: usize,
    reward: f64,
    next: usize,
    next_actions: &[usize],
    alpha: f64,
    gamma: f64,
) -> f64 {
    let future = next_actions
        .iter()
        .map(|&b| q[[next, b]])
        .fold(None, |m: Option<f64>, v| Some(m.map_or(v, |m| m.max(v))))
        .unwrap_or(0.0);
    let entry = &mut q[[s, a]];
    *entry += alpha * (reward + gamma * future - *entry);
    *entry
}

/// Highest-valued available action; ties go to the lowest label index.
pub fn greedy(row: ArrayView1<f64>, available: &[usize]) -> usize {
    let mut best = available[0];
    for &a in &available[1..] {
        if row[a] > row[best] {
            best = a;
        }
    }
    best
}

fn choose<R: Rng>(q: &Array2<f64>, env: &TabularEnv, s: usize, epsilon: f64, rng: &mut R) -> usize {
    let available = env.available(s);
    let u: f64 = rng.gen();
    if u < epsilon {
        available[rng.gen_range(0..available.len())]
    } else {
        greedy(q.row(s), available)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub q: QTable,
    pub steps: u64,
    pub episodes: usize,
    pub converged: bool,
}

/// Train from a zero Q-table until the mean length of the last
/// `criterion_window` completed episodes is at most `optimal / criterion_ratio`,
/// or `max_steps` is exhausted.
pub fn train_to_criterion<R: Rng>(
    env: &TabularEnv,
    optimal: usize,
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if optimal == 0 {
        return Err(Error::InvalidConfig("optimal length must be positive".into()));
    }
    let cap = cfg.episode_step_cap.unwrap_or(10 * env.state_count());
    let threshold = optimal as f64 / cfg.criterion_ratio;
    let mut q = env.zero_q();
    let mut window: VecDeque<usize> = VecDeque::with_capacity(cfg.criterion_window);
    let mut window_sum = 0usize;
    let mut steps = 0u64;
    let mut episodes = 0usize;
    let mut s = env.start();
    let mut length = 0usize;
    while steps < cfg.max_steps {
        let a = choose(&q.values, env, s, cfg.epsilon_at(steps), rng);
        let (next, r) = env.step(s, a, rng);
        q_update(&mut q.values, s, a, r, next, env.available(next), cfg.alpha, cfg.gamma);
        steps += 1;
        length += 1;
        if env.is_terminal(next) {
            episodes += 1;
            if window.len() == cfg.criterion_window {
                window_sum -= window.pop_front().expect("full window");
            }
            window.push_back(length);
            window_sum += length;
            s = env.start();
            length = 0;
            if window.len() == cfg.criterion_window
                && window_sum as f64 / cfg.criterion_window as f64 <= threshold
            {
                return Ok(TrainOutcome {
                    q,
                    steps,
                    episodes,
                    converged: true,
                });
            }
        } else if length >= cap {
            s = env.start();
            length = 0;
        } else {
            s = next;
        }
    }
    Ok(TrainOutcome {
        q,
        steps,
        episodes,
        converged: false,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepRecord {
    pub episode: usize,
    pub step_in_episode: usize,
    /// 1-based count of steps taken so far.
    pub step: usize,
    pub completed: bool,
}

/// Per-step trace of an evaluation run.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct StepLog {
    pub records: Vec<StepRecord>,
}

impl StepLog {
    /// Cumulative episodes completed after each step.
    pub fn episodes_completed(&self) -> Vec<usize> {
        self.records
            .iter()
            .scan(0, |done, r| {
                *done += usize::from(r.completed);
                Some(*done)
            })
            .collect()
    }

    pub fn total_episodes(&self) -> usize {
        self.records.iter().filter(|r| r.completed).count()
    }

    pub fn steps(&self) -> usize {
        self.records.len()
    }
}

/// Run `n_steps` of ε-greedy Q-learning from `q_init` at a fixed ε,
/// restarting whenever the goal is reached.
pub fn evaluate_transfer<R: Rng>(
    env: &TabularEnv,
    q_init: &QTable,
    n_steps: usize,
    epsilon: f64,
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<StepLog> {
    cfg.validate()?;
    env.check_q(q_init)?;
    if !(0.0..=1.0).contains(&epsilon) {
        return Err(Error::InvalidConfig(format!("epsilon = {epsilon} must lie in [0, 1]")));
    }
    let mut q = q_init.values.clone();
    let mut records = Vec::with_capacity(n_steps);
    let mut s = env.start();
    let mut episode = 0;
    let mut in_episode = 0;
    for step in 1..=n_steps {
        let a = choose(&q, env, s, epsilon, rng);
        let (next, r) = env.step(s, a, rng);
        q_update(&mut q, s, a, r, next, env.available(next), cfg.alpha, cfg.gamma);
        in_episode += 1;
        let completed = env.is_terminal(next);
        records.push(StepRecord {
            episode,
            step_in_episode: in_episode,
            step,
            completed,
        });
        if completed {
            episode += 1;
            in_episode = 0;
            s = env.start();
        } else {
            s = next;
        }
    }
    Ok(StepLog { records })
}

/// Write `trial,step,episodes_completed`, keeping every `stride`-th step and the last.
pub fn write_step_logs(path: impl AsRef<Path>, logs: &[StepLog], stride: usize) -> Result<()> {
    let stride = stride.max(1);
    let mut w = csv::Writer::from_path(path.as_ref())?;
    w.write_record(["trial", "step", "episodes_completed"])?;
    for (trial, log) in logs.iter().enumerate() {
        let done = log.episodes_completed();
        for (i, &count) in done.iter().enumerate() {
            let step = i + 1;
            if step % stride == 0 || step == done.len() {
                w.write_record([trial.to_string(), step.to_string(), count.to_string()])?;
            }
        }
    }
    w.flush().map_err(|e| Error::io(path.as_ref(), e))?;
    Ok(())
}
