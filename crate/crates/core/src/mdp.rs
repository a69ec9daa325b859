//! Finite MDPs and the gridworlds used throughout the toolkit.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on row sums of a transition kernel.
pub const ROW_SUM_TOL: f64 = 1e-12;

/// A finite MDP with a dense `(S, A, S)` kernel and arrival-dependent rewards.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularMdp {
    n_states: usize,
    n_actions: usize,
    kernel: Vec<f64>,
    reward: Vec<f64>,
    terminal: Vec<bool>,
    gamma: f64,
    start_state: usize,
}

impl TabularMdp {
    /// Builds an MDP after checking every structural invariant.
    ///
    /// `kernel` and `reward` are flattened in `(s, a, s')` order. Terminal
    /// states must self-loop with probability one and pay nothing.
    pub fn new(
        n_states: usize,
        n_actions: usize,
        kernel: Vec<f64>,
        reward: Vec<f64>,
        terminal: Vec<bool>,
        gamma: f64,
        start_state: usize,
    ) -> Result<Self> {
        if n_states == 0 || n_actions == 0 {
            return Err(Error::InvalidMdp("empty state or action set".into()));
        }
        let len = n_states * n_actions * n_states;
        if kernel.len() != len || reward.len() != len || terminal.len() != n_states {
            return Err(Error::InvalidMdp(format!(
                "shape mismatch: kernel {}, reward {}, terminal {} for (S={n_states}, A={n_actions})",
                kernel.len(),
                reward.len(),
                terminal.len()
            )));
        }
        if !(gamma > 0.0 && gamma < 1.0) {
            return Err(Error::InvalidMdp(format!("gamma {gamma} outside (0, 1)")));
        }
        if start_state >= n_states {
            return Err(Error::InvalidMdp(format!(
                "start state {start_state} out of range"
            )));
        }
        let mdp = Self {
            n_states,
            n_actions,
            kernel,
            reward,
            terminal,
            gamma,
            start_state,
        };
        for s in 0..n_states {
            for a in 0..n_actions {
                let row = mdp.row(s, a);
                if row.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
                    return Err(Error::InvalidMdp(format!(
                        "negative or non-finite entry in P(.|{s},{a})"
                    )));
                }
                let sum: f64 = row.iter().sum();
                if (sum - 1.0).abs() > ROW_SUM_TOL {
                    return Err(Error::InvalidMdp(format!("row ({s},{a}) sums to {sum}")));
                }
                if mdp.reward_row(s, a).iter().any(|r| !r.is_finite()) {
                    return Err(Error::InvalidMdp(format!(
                        "non-finite reward in row ({s},{a})"
                    )));
                }
                if mdp.terminal[s]
                    && (row[s] != 1.0 || mdp.reward_row(s, a).iter().any(|&r| r != 0.0))
                {
                    return Err(Error::InvalidMdp(format!(
                        "terminal state {s} must self-loop with zero reward"
                    )));
                }
            }
        }
        Ok(mdp)
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn start_state(&self) -> usize {
        self.start_state
    }

    pub fn is_terminal(&self, s: usize) -> bool {
        self.terminal[s]
    }

    pub fn terminal_flags(&self) -> &[bool] {
        &self.terminal
    }

    /// Nominal successor distribution `P(. | s, a)`.
    pub fn row(&self, s: usize, a: usize) -> &[f64] {
        let base = (s * self.n_actions + a) * self.n_states;
        &self.kernel[base..base + self.n_states]
    }

    /// Rewards `R(s, a, .)` indexed by successor.
    pub fn reward_row(&self, s: usize, a: usize) -> &[f64] {
        let base = (s * self.n_actions + a) * self.n_states;
        &self.reward[base..base + self.n_states]
    }

    pub fn reward(&self, s: usize, a: usize, next: usize) -> f64 {
        self.reward_row(s, a)[next]
    }

    /// Largest absolute reward, `Rmax`.
    pub fn max_abs_reward(&self) -> f64 {
        self.reward.iter().fold(0.0, |m, r| m.max(r.abs()))
    }

    /// Worst deviation of any kernel row sum from one.
    pub fn max_row_sum_error(&self) -> f64 {
        (0..self.n_states)
            .flat_map(|s| (0..self.n_actions).map(move |a| (s, a)))
            .map(|(s, a)| (1.0 - self.row(s, a).iter().sum::<f64>()).abs())
            .fold(0.0, f64::max)
    }

    /// Successors with positive nominal probability from any action in `s`.
    pub fn reachable_from(&self, s: usize) -> Vec<usize> {
        let mut out: Vec<usize> = (0..self.n_states)
            .filter(|&t| (0..self.n_actions).any(|a| self.row(s, a)[t] > 0.0))
            .collect();
        out.dedup();
        out
    }
}

/// Grid cell `(x, y)`; `y` grows upwards, `(0, 0)` is the bottom-left corner.
pub type Cell = (i32, i32);

/// The four grid moves, in action-index order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Move {
    Up = 0,
    Down = 1,
    Left = 2,
    Right = 3,
}

impl Move {
    pub const ALL: [Move; 4] = [Move::Up, Move::Down, Move::Left, Move::Right];

    pub fn from_index(a: usize) -> Move {
        Self::ALL[a]
    }

    pub fn delta(self) -> (i32, i32) {
        match self {
            Move::Up => (0, 1),
            Move::Down => (0, -1),
            Move::Left => (-1, 0),
            Move::Right => (1, 0),
        }
    }

    fn lateral(self) -> [Move; 2] {
        match self {
            Move::Up | Move::Down => [Move::Left, Move::Right],
            Move::Left | Move::Right => [Move::Up, Move::Down],
        }
    }

    /// Horizontal reflection of the move.
    pub fn mirrored(self) -> Move {
        match self {
            Move::Left => Move::Right,
            Move::Right => Move::Left,
            m => m,
        }
    }

    pub fn arrow(self) -> char {
        match self {
            Move::Up => '^',
            Move::Down => 'v',
            Move::Left => '<',
            Move::Right => '>',
        }
    }
}

/// A terminal rewarding cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GoalCell {
    pub cell: Cell,
    pub reward: f64,
}

fn default_gamma() -> f64 {
    0.999
}

/// Declarative description of a 4-action gridworld.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridWorldSpec {
    pub width: i32,
    pub height: i32,
    #[serde(default)]
    pub goals: Vec<GoalCell>,
    /// Terminal cells paying `-1` on arrival.
    #[serde(default)]
    pub traps: Vec<Cell>,
    #[serde(default)]
    pub walls: Vec<Cell>,
    pub start: Cell,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    /// Probability mass sent to the two lateral moves (split evenly).
    #[serde(default)]
    pub slip: f64,
}

/// Reward collected when entering a trap.
pub const TRAP_REWARD: f64 = -1.0;

impl GridWorldSpec {
    /// The bridge world, 7 by 11: start bottom-left, a `+1` goal top-left.
    /// The short route is a walled one-cell bridge in column 1 with `-1` traps
    /// on both sides. A wall in column 3 separates it from the open area on
    /// the right, which gives a detour that never touches a trap.
    pub fn bridge() -> Self {
        let mut traps = Vec::new();
        let mut walls = Vec::new();
        for y in 3..=8 {
            traps.push((0, y));
            traps.push((2, y));
        }
        for y in 2..=9 {
            walls.push((3, y));
        }
        for y in [2, 9] {
            walls.push((0, y));
            walls.push((2, y));
        }
        Self {
            width: 7,
            height: 11,
            goals: vec![GoalCell {
                cell: (0, 10),
                reward: 1.0,
            }],
            traps,
            walls,
            start: (0, 0),
            gamma: 0.999,
            slip: 0.0,
        }
    }

    /// Trap-flanked cells of [`GridWorldSpec::bridge`], bottom to top.
    pub fn bridge_cells() -> Vec<Cell> {
        (3..=8).map(|y| (1, y)).collect()
    }

    /// Reflects the layout across the vertical axis.
    pub fn mirrored_horizontally(&self) -> Self {
        let m = |(x, y): Cell| (self.width - 1 - x, y);
        Self {
            goals: self
                .goals
                .iter()
                .map(|g| GoalCell {
                    cell: m(g.cell),
                    reward: g.reward,
                })
                .collect(),
            traps: self.traps.iter().copied().map(m).collect(),
            walls: self.walls.iter().copied().map(m).collect(),
            start: m(self.start),
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidWorld(msg));
        if self.width < 1 || self.height < 1 {
            return bad(format!(
                "grid must be at least 1x1, got {}x{}",
                self.width, self.height
            ));
        }
        if !(self.slip >= 0.0 && self.slip < 1.0) {
            return bad(format!("slip {} outside [0, 1)", self.slip));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return bad(format!("gamma {} outside (0, 1)", self.gamma));
        }
        let inside = |c: Cell| c.0 >= 0 && c.1 >= 0 && c.0 < self.width && c.1 < self.height;
        let mut kinds: HashMap<Cell, &str> = HashMap::new();
        let tagged = self
            .goals
            .iter()
            .map(|g| (g.cell, "goal"))
            .chain(self.traps.iter().map(|&c| (c, "trap")))
            .chain(self.walls.iter().map(|&c| (c, "wall")));
        for (cell, kind) in tagged {
            if !inside(cell) {
                return bad(format!("{kind} cell {cell:?} outside the grid"));
            }
            if let Some(prev) = kinds.insert(cell, kind) {
                return bad(format!("cell {cell:?} is both {prev} and {kind}"));
            }
        }
        if let Some(g) = self.goals.iter().find(|g| !g.reward.is_finite()) {
            return bad(format!("goal {:?} has non-finite reward", g.cell));
        }
        if !inside(self.start) {
            return bad(format!("start {:?} outside the grid", self.start));
        }
        if let Some(kind) = kinds.get(&self.start) {
            return bad(format!("start {:?} lies on a {kind} cell", self.start));
        }
        Ok(())
    }
}

/// Feature map `phi(s)`: the cell coordinates of a state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridObservation {
    pub coords: [f64; 2],
}

/// A gridworld compiled to a [`TabularMdp`], with the cell/state bijection.
#[derive(Debug, Clone)]
pub struct GridWorld {
    spec: GridWorldSpec,
    mdp: TabularMdp,
    cells: Vec<Cell>,
    index: HashMap<Cell, usize>,
}

/// Compiles a gridworld. States enumerate non-wall cells row by row from the bottom.
pub fn build_gridworld(spec: &GridWorldSpec) -> Result<GridWorld> {
    spec.validate()?;
    let walls: std::collections::HashSet<Cell> = spec.walls.iter().copied().collect();
    let cells: Vec<Cell> = (0..spec.height)
        .flat_map(|y| (0..spec.width).map(move |x| (x, y)))
        .filter(|c| !walls.contains(c))
        .collect();
    let index: HashMap<Cell, usize> = cells.iter().enumerate().map(|(i, &c)| (c, i)).collect();
    let n = cells.len();
    let n_actions = Move::ALL.len();

    let mut arrival = vec![0.0; n];
    let mut terminal = vec![false; n];
    for g in &spec.goals {
        terminal[index[&g.cell]] = true;
        arrival[index[&g.cell]] = g.reward;
    }
    for t in &spec.traps {
        terminal[index[t]] = true;
        arrival[index[t]] = TRAP_REWARD;
    }

    let dest = |c: Cell, m: Move| -> usize {
        let (dx, dy) = m.delta();
        index
            .get(&(c.0 + dx, c.1 + dy))
            .copied()
            .unwrap_or(index[&c])
    };

    let mut kernel = vec![0.0; n * n_actions * n];
    let mut reward = vec![0.0; n * n_actions * n];
    for (s, &cell) in cells.iter().enumerate() {
        for m in Move::ALL {
            let base = (s * n_actions + m as usize) * n;
            if terminal[s] {
                kernel[base + s] = 1.0;
                continue;
            }
            kernel[base + dest(cell, m)] += 1.0 - spec.slip;
            if spec.slip > 0.0 {
                for side in m.lateral() {
                    kernel[base + dest(cell, side)] += spec.slip / 2.0;
                }
            }
            for t in 0..n {
                if terminal[t] {
                    reward[base + t] = arrival[t];
                }
            }
        }
    }
    let mdp = TabularMdp::new(
        n,
        n_actions,
        kernel,
        reward,
        terminal,
        spec.gamma,
        index[&spec.start],
    )?;
    Ok(GridWorld {
        spec: spec.clone(),
        mdp,
        cells,
        index,
    })
}

impl GridWorld {
    pub fn mdp(&self) -> &TabularMdp {
        &self.mdp
    }

    pub fn spec(&self) -> &GridWorldSpec {
        &self.spec
    }

    pub fn cells(&self) -> &[Cell] {
        &self.cells
    }

    pub fn cell(&self, s: usize) -> Cell {
        self.cells[s]
    }

    pub fn state(&self, cell: Cell) -> Option<usize> {
        self.index.get(&cell).copied()
    }

    pub fn observation(&self, s: usize) -> GridObservation {
        let (x, y) = self.cells[s];
        GridObservation {
            coords: [x as f64, y as f64],
        }
    }

    /// Coordinates of every state, in state order.
    pub fn coords(&self) -> Vec<[f64; 2]> {
        (0..self.cells.len())
            .map(|s| self.observation(s).coords)
            .collect()
    }

    /// Tabular observation attack: snap `phi(s) + eta * direction` to the
    /// nearest non-wall cell. Ties go to the lowest state index.
    pub fn perceived_state(&self, s: usize, eta: f64, direction: [f64; 2]) -> usize {
        if eta == 0.0 {
            return s;
        }
        let [x, y] = self.observation(s).coords;
        let target = [x + eta * direction[0], y + eta * direction[1]];
        let mut best = (f64::INFINITY, s);
        for (t, &(cx, cy)) in self.cells.iter().enumerate() {
            let d = (cx as f64 - target[0]).powi(2) + (cy as f64 - target[1]).powi(2);
            if d < best.0 {
                best = (d, t);
            }
        }
        best.1
    }

    /// Renders the layout as text, top row first (`S` start, `G` goal, `T` trap, `#` wall).
    pub fn render(&self) -> String {
        let mut out = String::new();
        for y in (0..self.spec.height).rev() {
            for x in 0..self.spec.width {
                let c = (x, y);
                let ch = if self.spec.walls.contains(&c) {
                    '#'
                } else if self.spec.goals.iter().any(|g| g.cell == c) {
                    'G'
                } else if self.spec.traps.contains(&c) {
                    'T'
                } else if self.spec.start == c {
                    'S'
                } else {
                    '.'
                };
                out.push(ch);
            }
            out.push('\n');
        }
        out
    }
}
