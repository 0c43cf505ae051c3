use std::collections::{HashMap, VecDeque};

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use super::{
    Cell, EnvSpec, EnvTransition, Environment, ExpertDecision, Features, RobotState, SupervisorAction,
    ACTION_NAMES,
};
use crate::{Error, Result};

const SAMPLE_RETRIES: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridKind {
    Gridworld,
    Blockpush,
}

/// Distribution over grid cells used for start and goal sampling.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellDist {
    /// Uniform over the listed cells.
    Cells(Vec<Cell>),
    /// Uniform over every cell of the grid; violating draws are rejected.
    Uniform,
}

/// Deterministic 4-action grid environment.
///
/// Backs both the gridworld (an agent moving among hazard cells) and the
/// block-pushing task (a cube pushed on a discretized workspace whose edge band
/// and corners are violation regions).
#[derive(Debug, Clone)]
pub struct GridEnv {
    kind: GridKind,
    width: usize,
    height: usize,
    violation: Vec<bool>,
    starts: CellDist,
    goals: CellDist,
    spec: EnvSpec,
    fallback_action: usize,
    /// BFS distance-to-goal maps, keyed by goal cell.
    distances: HashMap<Cell, Vec<Option<u32>>>,
}

/// Builds a gridworld.
///
/// Moving into a hazard cell is a constraint violation; moving off the grid is
/// a no-op. The default horizon is `width * height` steps.
pub fn make_gridworld(
    width: usize,
    height: usize,
    hazards: &[Cell],
    starts: CellDist,
    goals: CellDist,
) -> Result<GridEnv> {
    if width == 0 || height == 0 {
        return Err(Error::Construction("grid must have positive width and height".into()));
    }
    let mut violation = vec![false; width * height];
    for h in hazards {
        if h.x >= width || h.y >= height {
            return Err(Error::Construction(format!("hazard {h} outside the {width}x{height} grid")));
        }
        violation[h.y * width + h.x] = true;
    }
    if violation.iter().all(|&v| v) {
        return Err(Error::Construction("grid has zero free cells".into()));
    }
    for (label, dist) in [("start", &starts), ("goal", &goals)] {
        if let CellDist::Cells(cells) = dist {
            if cells.is_empty() {
                return Err(Error::Construction(format!("empty {label} distribution")));
            }
            for c in cells {
                if c.x >= width || c.y >= height {
                    return Err(Error::Construction(format!("{label} cell {c} outside the grid")));
                }
                if violation[c.y * width + c.x] {
                    return Err(Error::Construction(format!("{label} cell {c} is a hazard")));
                }
            }
        }
    }
    GridEnv::build(GridKind::Gridworld, width, height, violation, starts, goals, Some((width * height) as u32))
}

/// Builds the block-pushing task on a `grid_k x grid_k` workspace.
///
/// Cells within `boundary_margin` of the edge are violating, as are square
/// `corner_exclusions`-wide regions just inside each corner of the band.
/// Goal draws inside the violation region are resampled.
pub fn make_blockpush(
    grid_k: usize,
    boundary_margin: usize,
    corner_exclusions: usize,
    goals: CellDist,
) -> Result<GridEnv> {
    if grid_k < 4 {
        return Err(Error::Construction(format!("blockpush needs grid_k >= 4, got {grid_k}")));
    }
    let k = grid_k;
    let m = boundary_margin;
    let c = corner_exclusions;
    let mut violation = vec![false; k * k];
    for y in 0..k {
        for x in 0..k {
            let in_band = x < m || y < m || x + m >= k || y + m >= k;
            let near_left = x < m + c;
            let near_right = x + m + c >= k;
            let near_top = y < m + c;
            let near_bottom = y + m + c >= k;
            let in_corner = c > 0 && (near_left || near_right) && (near_top || near_bottom);
            violation[y * k + x] = in_band || in_corner;
        }
    }
    if violation.iter().all(|&v| v) {
        return Err(Error::Construction("blockpush workspace has no free cells".into()));
    }
    if let CellDist::Cells(cells) = &goals {
        if cells.is_empty() {
            return Err(Error::Construction("empty goal distribution".into()));
        }
        if cells.iter().any(|g| g.x >= k || g.y >= k) {
            return Err(Error::Construction("goal cell outside the workspace".into()));
        }
        if cells.iter().all(|g| violation[g.y * k + g.x]) {
            return Err(Error::Construction("every goal cell lies in the violation region".into()));
        }
    }
    GridEnv::build(GridKind::Blockpush, k, k, violation, CellDist::Uniform, goals, Some((4 * k) as u32))
}

impl GridEnv {
    fn build(
        kind: GridKind,
        width: usize,
        height: usize,
        violation: Vec<bool>,
        starts: CellDist,
        goals: CellDist,
        horizon: Option<u32>,
    ) -> Result<Self> {
        let noun = match kind {
            GridKind::Gridworld => "grid",
            GridKind::Blockpush => "blockpush",
        };
        let spec = EnvSpec {
            state_descriptor: format!("{noun} {width}x{height}"),
            action_arity: ACTION_NAMES.len(),
            horizon,
            goal_conditioned: true,
        };
        spec.validate()?;
        let mut env = GridEnv {
            kind,
            width,
            height,
            violation,
            starts,
            goals,
            spec,
            fallback_action: 0,
            distances: HashMap::new(),
        };
        let goal_cells: Vec<Cell> = match &env.goals {
            CellDist::Cells(cells) => cells.clone(),
            CellDist::Uniform => env.cells().collect(),
        };
        for g in goal_cells {
            if !env.is_violation(g) {
                let d = env.bfs_from(g);
                env.distances.insert(g, d);
            }
        }
        Ok(env)
    }

    pub fn with_horizon(mut self, horizon: Option<u32>) -> Result<Self> {
        self.spec.horizon = horizon;
        self.spec.validate()?;
        Ok(self)
    }

    pub fn with_fallback_action(mut self, action: usize) -> Result<Self> {
        if action >= self.spec.action_arity {
            return Err(Error::Construction(format!("fallback action {action} out of range")));
        }
        self.fallback_action = action;
        Ok(self)
    }

    pub fn kind(&self) -> GridKind {
        self.kind
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn cells(&self) -> impl Iterator<Item = Cell> + '_ {
        (0..self.height).flat_map(move |y| (0..self.width).map(move |x| Cell::new(x, y)))
    }

    pub fn free_cells(&self) -> impl Iterator<Item = Cell> + '_ {
        self.cells().filter(|c| !self.is_violation(*c))
    }

    pub fn contains(&self, c: Cell) -> bool {
        c.x < self.width && c.y < self.height
    }

    pub fn is_violation(&self, c: Cell) -> bool {
        self.violation[self.cell_index(c)]
    }

    fn cell_index(&self, c: Cell) -> usize {
        c.y * self.width + c.x
    }

    /// Cell reached by `action`; off-grid moves leave the position unchanged.
    pub fn moved(&self, c: Cell, action: usize) -> Cell {
        match action {
            0 if c.y > 0 => Cell::new(c.x, c.y - 1),
            1 if c.y + 1 < self.height => Cell::new(c.x, c.y + 1),
            2 if c.x > 0 => Cell::new(c.x - 1, c.y),
            3 if c.x + 1 < self.width => Cell::new(c.x + 1, c.y),
            _ => c,
        }
    }

    fn bfs_from(&self, goal: Cell) -> Vec<Option<u32>> {
        let mut dist = vec![None; self.width * self.height];
        dist[self.cell_index(goal)] = Some(0);
        let mut queue = VecDeque::from([goal]);
        while let Some(c) = queue.pop_front() {
            let d = dist[self.cell_index(c)].unwrap();
            // Moves are reversible on a grid, so neighbours of c are exactly
            // the cells that can step into c.
            for a in 0..4 {
                let n = self.moved(c, a);
                if n == c || self.is_violation(n) {
                    continue;
                }
                let ni = self.cell_index(n);
                if dist[ni].is_none() {
                    dist[ni] = Some(d + 1);
                    queue.push_back(n);
                }
            }
        }
        dist
    }

    /// Shortest hazard-free path length from `from` to `goal`.
    pub fn distance(&self, from: Cell, goal: Cell) -> Option<u32> {
        match self.distances.get(&goal) {
            Some(d) => d[self.cell_index(from)],
            None => self.bfs_from(goal)[self.cell_index(from)],
        }
    }

    fn sample_cell(&self, dist: &CellDist, rng: &mut dyn RngCore, what: &str) -> Result<Cell> {
        for _ in 0..SAMPLE_RETRIES {
            let c = match dist {
                CellDist::Cells(cells) => cells[rng.gen_range(0..cells.len())],
                CellDist::Uniform => {
                    Cell::new(rng.gen_range(0..self.width), rng.gen_range(0..self.height))
                }
            };
            if !self.is_violation(c) {
                return Ok(c);
            }
        }
        Err(Error::Construction(format!("no non-violating {what} found after {SAMPLE_RETRIES} draws")))
    }

    fn check_state(&self, state: &RobotState) -> Result<()> {
        if !self.contains(state.pos) {
            return Err(Error::usage(format!("position {} outside the grid", state.pos)));
        }
        match state.goal {
            Some(g) if !self.contains(g) => Err(Error::usage(format!("goal {g} outside the grid"))),
            None => Err(Error::usage("grid states are goal-conditioned; goal missing")),
            _ => Ok(()),
        }
    }
}

impl Environment for GridEnv {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn constraint(&self, state: &RobotState) -> Result<bool> {
        if !self.contains(state.pos) {
            return Err(Error::usage(format!("position {} outside the grid", state.pos)));
        }
        Ok(self.is_violation(state.pos))
    }

    fn sample_initial(&self, rng: &mut dyn RngCore) -> Result<RobotState> {
        let goal = self.sample_cell(&self.goals, rng, "goal")?;
        for _ in 0..SAMPLE_RETRIES {
            let start = self.sample_cell(&self.starts, rng, "start")?;
            if start != goal {
                return Ok(RobotState::new(start, Some(goal)));
            }
        }
        Err(Error::Construction("start distribution only yields the goal cell".into()))
    }

    fn transition(&self, state: &RobotState, action: usize) -> Result<EnvTransition> {
        self.check_state(state)?;
        if action >= self.spec.action_arity {
            return Err(Error::usage(format!(
                "action {action} out of range for {} actions",
                self.spec.action_arity
            )));
        }
        let pos = self.moved(state.pos, action);
        let reached_goal = Some(pos) == state.goal && !self.is_violation(pos);
        let reward = if reached_goal { 1.0 } else { 0.0 };
        let next = RobotState {
            pos,
            episode_step: state.episode_step,
            goal: state.goal,
            episode_return: state.episode_return + reward,
        };
        Ok(EnvTransition { next, reward, reached_goal })
    }

    fn expert(&self, state: &RobotState) -> Result<ExpertDecision> {
        self.check_state(state)?;
        if self.is_violation(state.pos) {
            return Ok(ExpertDecision { action: SupervisorAction::HardReset, unreachable: false });
        }
        let goal = state.goal.expect("checked above");
        let fallback = |unreachable| ExpertDecision {
            action: SupervisorAction::Move(self.fallback_action),
            unreachable,
        };
        let Some(d) = self.distance(state.pos, goal) else {
            return Ok(fallback(true));
        };
        if d == 0 {
            return Ok(fallback(false));
        }
        for a in 0..self.spec.action_arity {
            let n = self.moved(state.pos, a);
            if n != state.pos && !self.is_violation(n) && self.distance(n, goal) == Some(d - 1) {
                return Ok(ExpertDecision { action: SupervisorAction::Move(a), unreachable: false });
            }
        }
        unreachable!("BFS distance {d} without a predecessor step")
    }

    fn feature_dim(&self) -> usize {
        2 * self.width * self.height
    }

    fn featurize(&self, state: &RobotState) -> Features {
        let cells = self.width * self.height;
        let mut f = vec![(self.cell_index(state.pos), 1.0)];
        if let Some(g) = state.goal {
            f.push((cells + self.cell_index(g), 1.0));
        }
        f
    }

    fn state_index(&self, state: &RobotState) -> usize {
        let cells = self.width * self.height;
        let goal = state.goal.map(|g| self.cell_index(g)).unwrap_or(0);
        goal * cells + self.cell_index(state.pos)
    }

    fn num_states(&self) -> usize {
        let cells = self.width * self.height;
        cells * cells
    }

    fn render(&self, state: &RobotState) -> Vec<String> {
        let agent = match self.kind {
            GridKind::Gridworld => 'R',
            GridKind::Blockpush => 'C',
        };
        (0..self.height)
            .map(|y| {
                (0..self.width)
                    .map(|x| {
                        let c = Cell::new(x, y);
                        if c == state.pos {
                            if self.is_violation(c) { 'X' } else { agent }
                        } else if Some(c) == state.goal {
                            'G'
                        } else if self.is_violation(c) {
                            '#'
                        } else {
                            '.'
                        }
                    })
                    .collect()
            })
            .collect()
    }
}
