//! Random gridworld navigation tasks.
//!
//! Cells are `(row, col)` with `(0, 0)` at the top-left. States are the free
//! cells in row-major order, named `r{row}c{col}`. The four global actions are
//! `up`, `down`, `left` and `right`; the goal is absorbing and entering it pays
//! `goal_reward`.

use std::collections::{BTreeSet, VecDeque};
use std::fmt;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::fmt_sig;
use crate::mdp::{MdpSpec, Outcome, Transition};
use crate::seed;

pub type Cell = (usize, usize);

pub const ACTIONS: [&str; 4] = ["up", "down", "left", "right"];
const MOVES: [(isize, isize); 4] = [(-1, 0), (1, 0), (0, -1), (0, 1)];

pub const DEFAULT_DENSITY: f64 = 0.25;
const MAX_GENERATION_ATTEMPTS: usize = 10_000;

/// What happens to moves that would leave the grid or enter an obstacle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum ModelingMode {
    /// The action exists and returns to the current cell with probability 1.
    #[default]
    #[serde(rename = "self-loop")]
    SelfLoop,
    /// The action node is left out.
    #[serde(rename = "omit")]
    Omit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub width: usize,
    pub height: usize,
    pub obstacles: Vec<Cell>,
    pub start: Cell,
    pub goal: Cell,
    pub goal_reward: f64,
    #[serde(default)]
    pub modeling_mode: ModelingMode,
}

impl GridSpec {
    /// Obstacle-free grid from the top-left to the bottom-right corner.
    pub fn empty(width: usize, height: usize, goal_reward: f64) -> Self {
        GridSpec {
            width,
            height,
            obstacles: Vec::new(),
            start: (0, 0),
            goal: (height.saturating_sub(1), width.saturating_sub(1)),
            goal_reward,
            modeling_mode: ModelingMode::SelfLoop,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let grid: GridSpec = serde_json::from_str(text)?;
        grid.validate()?;
        Ok(grid)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        crate::io::write_json(path, self)
    }

    pub fn in_bounds(&self, cell: Cell) -> bool {
        cell.0 < self.height && cell.1 < self.width
    }

    pub fn is_obstacle(&self, cell: Cell) -> bool {
        self.obstacles.contains(&cell)
    }

    fn obstacle_mask(&self) -> Vec<bool> {
        let mut mask = vec![false; self.width * self.height];
        for &(r, c) in &self.obstacles {
            if r < self.height && c < self.width {
                mask[r * self.width + c] = true;
            }
        }
        mask
    }

    /// Free cells in row-major order; their positions are the MDP state indices.
    pub fn free_cells(&self) -> Vec<Cell> {
        let mask = self.obstacle_mask();
        (0..self.height)
            .flat_map(|r| (0..self.width).map(move |c| (r, c)))
            .filter(|&(r, c)| !mask[r * self.width + c])
            .collect()
    }

    pub fn state_id(cell: Cell) -> String {
        format!("r{}c{}", cell.0, cell.1)
    }

    pub fn state_index(&self, cell: Cell) -> Option<usize> {
        self.free_cells().iter().position(|&c| c == cell)
    }

    /// Neighbour reached by `action` (index into [`ACTIONS`]), if it is a free cell.
    pub fn step(&self, cell: Cell, action: usize) -> Option<Cell> {
        let (dr, dc) = MOVES[action];
        let r = cell.0.checked_add_signed(dr)?;
        let c = cell.1.checked_add_signed(dc)?;
        let next = (r, c);
        (self.in_bounds(next) && !self.is_obstacle(next)).then_some(next)
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.width == 0 || self.height == 0 {
            problems.push("width and height must be positive".to_string());
        }
        for (name, cell) in [("start", self.start), ("goal", self.goal)] {
            if !self.in_bounds(cell) {
                problems.push(format!("{name} {cell:?} is outside the grid"));
            } else if self.is_obstacle(cell) {
                problems.push(format!("{name} {cell:?} is an obstacle"));
            }
        }
        if self.start == self.goal {
            problems.push("start and goal coincide".into());
        }
        for &cell in &self.obstacles {
            if !self.in_bounds(cell) {
                problems.push(format!("obstacle {cell:?} is outside the grid"));
            }
        }
        if !self.goal_reward.is_finite() {
            problems.push("goal_reward must be finite".into());
        }
        if problems.is_empty() && self.optimal_length().is_err() {
            problems.push("no path from start to goal".into());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidMdp {
                name: format!("grid {}x{}", self.width, self.height),
                violations: problems,
            })
        }
    }

    /// Shortest start-to-goal path length by breadth-first search.
    pub fn optimal_length(&self) -> Result<usize> {
        if !self.in_bounds(self.start) || !self.in_bounds(self.goal) {
            return Err(Error::Unreachable);
        }
        let mask = self.obstacle_mask();
        let idx = |(r, c): Cell| r * self.width + c;
        if mask[idx(self.start)] || mask[idx(self.goal)] {
            return Err(Error::Unreachable);
        }
        let mut dist = vec![usize::MAX; self.width * self.height];
        dist[idx(self.start)] = 0;
        let mut queue = VecDeque::from([self.start]);
        while let Some(cell) = queue.pop_front() {
            if cell == self.goal {
                return Ok(dist[idx(cell)]);
            }
            for a in 0..MOVES.len() {
                if let Some(next) = self.step(cell, a) {
                    if dist[idx(next)] == usize::MAX {
                        dist[idx(next)] = dist[idx(cell)] + 1;
                        queue.push_back(next);
                    }
                }
            }
        }
        Err(Error::Unreachable)
    }

    pub fn to_mdp(&self) -> MdpSpec {
        let cells = self.free_cells();
        let mut transitions = Vec::new();
        for &cell in &cells {
            if cell == self.goal {
                continue;
            }
            for (a, label) in ACTIONS.iter().enumerate() {
                let next = match (self.step(cell, a), self.modeling_mode) {
                    (Some(next), _) => next,
                    (None, ModelingMode::SelfLoop) => cell,
                    (None, ModelingMode::Omit) => continue,
                };
                let reward = if next == self.goal && next != cell {
                    self.goal_reward
                } else {
                    0.0
                };
                transitions.push(Transition {
                    state: Self::state_id(cell),
                    action: (*label).into(),
                    outcomes: vec![Outcome {
                        next: Self::state_id(next),
                        prob: 1.0,
                        reward,
                    }],
                });
            }
        }
        MdpSpec {
            name: format!("grid{}x{}", self.width, self.height),
            states: cells.into_iter().map(Self::state_id).collect(),
            actions: ACTIONS.iter().map(|s| s.to_string()).collect(),
            transitions,
        }
    }

    /// The same grid turned a quarter clockwise.
    pub fn rotated_clockwise(&self) -> GridSpec {
        let turn = |(r, c): Cell| (c, self.height - 1 - r);
        let mut obstacles: Vec<Cell> = self.obstacles.iter().map(|&o| turn(o)).collect();
        obstacles.sort_unstable();
        GridSpec {
            width: self.height,
            height: self.width,
            obstacles,
            start: turn(self.start),
            goal: turn(self.goal),
            goal_reward: self.goal_reward,
            modeling_mode: self.modeling_mode,
        }
    }

    pub fn render(&self) -> String {
        let mask = self.obstacle_mask();
        let mut out = String::with_capacity((self.width + 1) * self.height);
        for r in 0..self.height {
            for c in 0..self.width {
                out.push(if (r, c) == self.start {
                    'S'
                } else if (r, c) == self.goal {
                    'G'
                } else if mask[r * self.width + c] {
                    '#'
                } else {
                    '.'
                });
            }
            out.push('\n');
        }
        out
    }
}

impl fmt::Display for GridSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridSize {
    Small,
    Large,
    Custom { width: usize, height: usize },
}

impl GridSize {
    pub fn dimensions(self) -> (usize, usize) {
        match self {
            GridSize::Small => (9, 9),
            GridSize::Large => (13, 13),
            GridSize::Custom { width, height } => (width, height),
        }
    }

    pub fn label(self) -> String {
        match self {
            GridSize::Small => "Sm".into(),
            GridSize::Large => "Lg".into(),
            GridSize::Custom { width, height } => format!("{width}x{height}"),
        }
    }
}

/// One experimental condition: grid size, rotations and goal reward.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionConfig {
    pub size: GridSize,
    pub rotations: bool,
    pub reward: f64,
    pub n_sources: usize,
    pub seed: u64,
    #[serde(default = "default_density")]
    pub density: f64,
    #[serde(default)]
    pub modeling_mode: ModelingMode,
}

fn default_density() -> f64 {
    DEFAULT_DENSITY
}

impl ConditionConfig {
    pub fn new(size: GridSize, rotations: bool, reward: f64, n_sources: usize, seed: u64) -> Self {
        ConditionConfig {
            size,
            rotations,
            reward,
            n_sources,
            seed,
            density: DEFAULT_DENSITY,
            modeling_mode: ModelingMode::SelfLoop,
        }
    }

    /// Table label such as `Sm, R100, Rot`.
    pub fn label(&self) -> String {
        let mut label = format!("{}, R{}", self.size.label(), fmt_sig(self.reward));
        if self.rotations {
            label.push_str(", Rot");
        }
        label
    }

    pub fn validate(&self) -> Result<()> {
        let (w, h) = self.size.dimensions();
        if w == 0 || h == 0 || w * h < 2 {
            return Err(Error::InvalidConfig(format!("grid {w}x{h} is too small")));
        }
        if !(0.0..1.0).contains(&self.density) {
            return Err(Error::InvalidConfig(format!(
                "obstacle density {} must lie in [0, 1)",
                self.density
            )));
        }
        if !self.reward.is_finite() {
            return Err(Error::InvalidConfig("reward must be finite".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratedCondition {
    pub target: GridSpec,
    pub sources: Vec<GridSpec>,
}

fn corners(width: usize, height: usize) -> [Cell; 4] {
    [(0, 0), (0, width - 1), (height - 1, 0), (height - 1, width - 1)]
}

/// Draw obstacles i.i.d. with probability `density` per cell (start and goal
/// excluded), redrawing the whole field until the goal is reachable.
pub fn random_grid<R: Rng>(
    rng: &mut R,
    width: usize,
    height: usize,
    start: Cell,
    goal: Cell,
    density: f64,
    goal_reward: f64,
    mode: ModelingMode,
) -> Result<GridSpec> {
    for _ in 0..MAX_GENERATION_ATTEMPTS {
        let mut obstacles = BTreeSet::new();
        for r in 0..height {
            for c in 0..width {
                let cell = (r, c);
                let draw: f64 = rng.gen();
                if cell != start && cell != goal && draw < density {
                    obstacles.insert(cell);
                }
            }
        }
        let grid = GridSpec {
            width,
            height,
            obstacles: obstacles.into_iter().collect(),
            start,
            goal,
            goal_reward,
            modeling_mode: mode,
        };
        if grid.optimal_length().is_ok() {
            return Ok(grid);
        }
    }
    Err(Error::Degenerate(format!(
        "no connected {width}x{height} grid found at density {density} after {MAX_GENERATION_ATTEMPTS} draws"
    )))
}

/// Target plus `n_sources` source grids. Every grid has its own stream derived
/// from `(seed, role, index)`, so any subset can be regenerated independently.
pub fn generate(cond: &ConditionConfig) -> Result<GeneratedCondition> {
    cond.validate()?;
    let (w, h) = cond.size.dimensions();
    let [top_left, _, _, bottom_right] = corners(w, h);
    let mut rng = seed::stream(cond.seed, &[seed::tag("target")]);
    let target = random_grid(
        &mut rng,
        w,
        h,
        top_left,
        bottom_right,
        cond.density,
        cond.reward,
        cond.modeling_mode,
    )?;
    let sources = (0..cond.n_sources)
        .map(|i| generate_source(cond, i))
        .collect::<Result<Vec<_>>>()?;
    Ok(GeneratedCondition { target, sources })
}

pub fn generate_source(cond: &ConditionConfig, index: usize) -> Result<GridSpec> {
    cond.validate()?;
    let (w, h) = cond.size.dimensions();
    let all = corners(w, h);
    let mut rng = seed::stream(cond.seed, &[seed::tag("source"), index as u64]);
    let (start, goal) = if cond.rotations {
        let k = rng.gen_range(0..4);
        (all[3 - k], all[k])
    } else {
        (all[0], all[3])
    };
    random_grid(&mut rng, w, h, start, goal, cond.density, cond.reward, cond.modeling_mode)
}
