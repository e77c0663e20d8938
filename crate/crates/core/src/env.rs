//! Stochastic gridworld environments.
//!
//! Agents move in four directions on a cell grid; each action fails with
//! probability `p_fail`, in which case the agent is displaced to one of its
//! walkable orthogonal neighbors uniformly at random. Moving into a wall keeps
//! the agent in place at a -10 penalty, every other step costs -1, and the
//! goal pays +10 and ends the episode. Two special mechanics exist in the
//! transfer layouts: a fifth `Transfer` action available only on the transfer
//! source cell, and a teleport variant where merely entering the source cell
//! relocates the agent to the target cell.

use std::collections::VecDeque;
use std::fmt;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::grid::{Grid, GridPos};
use crate::{Error, Result};

pub const REWARD_STEP: f64 = -1.0;
pub const REWARD_COLLISION: f64 = -10.0;
pub const REWARD_GOAL: f64 = 10.0;

/// Contents of a single layout cell.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Cell {
    Floor,
    Wall,
    Goal,
    TransferSource,
    TransferTarget,
}

impl Cell {
    fn from_char(c: char) -> Option<Cell> {
        match c {
            '.' => Some(Cell::Floor),
            '#' => Some(Cell::Wall),
            'G' => Some(Cell::Goal),
            'T' => Some(Cell::TransferSource),
            't' => Some(Cell::TransferTarget),
            _ => None,
        }
    }

    pub fn is_walkable(self) -> bool {
        self != Cell::Wall
    }
}

/// How `reset` picks the initial state.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StartRule {
    /// Always the first floor cell in row-major order (the top-left corner in
    /// every built-in layout).
    #[default]
    TopLeft,
    /// Uniform among the non-goal floor cells at the four grid corners.
    RandomCorner,
}

/// Special-cell mechanics of a layout.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransferMode {
    #[default]
    None,
    /// A fifth action, available only on the source cell, that jumps to the
    /// target cell (subject to the usual failure probability).
    Action,
    /// Entering the source cell by any means immediately relocates the agent
    /// to the target cell.
    Teleport,
}

/// Agent actions. `Up` decreases the row index.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Action {
    Up,
    Down,
    Left,
    Right,
    Transfer,
}

impl Action {
    /// Size of the full action alphabet (including `Transfer`).
    pub const COUNT: usize = 5;
    /// The four movement actions, in index order.
    pub const MOVES: [Action; 4] = [Action::Up, Action::Down, Action::Left, Action::Right];
    const ALL: [Action; 5] = [
        Action::Up,
        Action::Down,
        Action::Left,
        Action::Right,
        Action::Transfer,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Action> {
        Action::ALL.get(i).copied()
    }

    /// (row, col) displacement of a movement action.
    pub fn delta(self) -> (i32, i32) {
        match self {
            Action::Up => (-1, 0),
            Action::Down => (1, 0),
            Action::Left => (0, -1),
            Action::Right => (0, 1),
            Action::Transfer => (0, 0),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Action::Up => "up",
            Action::Down => "down",
            Action::Left => "left",
            Action::Right => "right",
            Action::Transfer => "transfer",
        }
    }

    pub fn parse(s: &str) -> Option<Action> {
        Action::ALL.into_iter().find(|a| a.name() == s)
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Outcome of a single environment step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Transition {
    pub next_state: GridPos,
    pub reward: f64,
    pub done: bool,
    pub collided: bool,
}

/// A validated environment layout: grid geometry plus episode parameters.
#[derive(Clone, Debug)]
pub struct Layout {
    name: String,
    cells: Grid<Cell>,
    start_rule: StartRule,
    max_steps: u32,
    transfer_mode: TransferMode,
    goal: GridPos,
    transfer: Option<(GridPos, GridPos)>,
}

const TWO_ROOMS: &str = "\
max_steps=100
....#.....
....#.....
....#.....
....#.....
....#.....
..........
....#.....
....#.....
....#.....
....#....G
";

const THREE_ROOMS: &str = "\
max_steps=100
...#..#...
...#..#...
...#..#...
...#..#...
...#..#...
..........
...#..#...
...#..#...
...#..#...
...#..#..G
";

const FOUR_ROOMS: &str = "\
max_steps=500
.....#.....
.....#.....
...........
.....#.....
.....#.....
##.#####.##
.....#.....
.....#.....
...........
.....#.....
.....#....G
";

const TRANSFER_ROOMS_GRID: &str = "\
....#.....
....#.....
....#.....
....#.....
....T.....
....#.....
....#.....
....#.....
....#...t.
....#....G
";

const HALLWAY_ROOM: &str = "\
max_steps=150
..........
..........
..........
..........
..........
..........
..........
..........
.#########
.........G
";

const NINE_ROOMS: &str = "\
max_steps=500
.....#....#.....
.....#....#.....
................
.....#....#.....
.....#....#.....
##.####.#####.##
.....#....#.....
................
.....#....#.....
.....#....#.....
##.####.#####.##
.....#....#.....
.....#....#.....
................
.....#....#.....
.....#....#....G
";

impl Layout {
    /// Names accepted by [`Layout::builtin`].
    pub fn builtin_names() -> &'static [&'static str] {
        &[
            "two_rooms",
            "three_rooms",
            "four_rooms",
            "transfer_action_rooms",
            "teleport_rooms",
            "hallway_room",
            "nine_rooms",
        ]
    }

    pub fn builtin(name: &str) -> Result<Layout> {
        let text = match name {
            "two_rooms" => TWO_ROOMS.to_string(),
            "three_rooms" => THREE_ROOMS.to_string(),
            "four_rooms" => FOUR_ROOMS.to_string(),
            "transfer_action_rooms" => {
                format!("max_steps=100\ntransfer_mode=action\n{TRANSFER_ROOMS_GRID}")
            }
            "teleport_rooms" => {
                format!("max_steps=100\ntransfer_mode=teleport\n{TRANSFER_ROOMS_GRID}")
            }
            "hallway_room" => HALLWAY_ROOM.to_string(),
            "nine_rooms" => NINE_ROOMS.to_string(),
            _ => return Err(Error::UnknownLayout(name.to_string())),
        };
        Layout::parse(&text, name)
    }

    /// Loads a built-in layout by name, or parses a layout file.
    pub fn load(name_or_path: &str) -> Result<Layout> {
        if Layout::builtin_names().contains(&name_or_path) {
            return Layout::builtin(name_or_path);
        }
        let path = Path::new(name_or_path);
        if !path.is_file() {
            return Err(Error::UnknownLayout(name_or_path.to_string()));
        }
        let text = std::fs::read_to_string(path)?;
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| name_or_path.to_string());
        Layout::parse(&text, &name)
    }

    /// Parses the ASCII layout format: header lines (`max_steps=<int>`,
    /// optional `transfer_mode=<none|action|teleport>` and
    /// `start_rule=<top_left|random_corner>`) followed by one line per grid
    /// row using `#` wall, `.` floor, `G` goal, `T` transfer source,
    /// `t` transfer target.
    pub fn parse(text: &str, name: &str) -> Result<Layout> {
        let mut max_steps: Option<u32> = None;
        let mut transfer_mode = TransferMode::None;
        let mut start_rule = StartRule::TopLeft;
        let mut rows: Vec<Vec<Cell>> = Vec::new();

        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim_end();
            if line.is_empty() {
                continue;
            }
            let is_header = line.contains('=') && line.starts_with(|c: char| c.is_ascii_alphabetic());
            if is_header {
                if !rows.is_empty() {
                    return Err(Error::MalformedLayout(format!(
                        "line {}: header after grid rows",
                        lineno + 1
                    )));
                }
                let (key, value) = line.split_once('=').expect("checked above");
                match (key.trim(), value.trim()) {
                    ("max_steps", v) => {
                        max_steps = Some(v.parse().map_err(|_| {
                            Error::MalformedLayout(format!("bad max_steps value `{v}`"))
                        })?)
                    }
                    ("transfer_mode", "none") => transfer_mode = TransferMode::None,
                    ("transfer_mode", "action") => transfer_mode = TransferMode::Action,
                    ("transfer_mode", "teleport") => transfer_mode = TransferMode::Teleport,
                    ("start_rule", "top_left") => start_rule = StartRule::TopLeft,
                    ("start_rule", "random_corner") => start_rule = StartRule::RandomCorner,
                    (k, v) => {
                        return Err(Error::MalformedLayout(format!(
                            "unknown header `{k}={v}` on line {}",
                            lineno + 1
                        )))
                    }
                }
            } else {
                let row: Option<Vec<Cell>> = line.chars().map(Cell::from_char).collect();
                let row = row.ok_or_else(|| {
                    Error::MalformedLayout(format!("line {}: invalid cell character", lineno + 1))
                })?;
                rows.push(row);
            }
        }

        let max_steps =
            max_steps.ok_or_else(|| Error::MalformedLayout("missing max_steps header".into()))?;
        if rows.is_empty() {
            return Err(Error::MalformedLayout("layout has no grid rows".into()));
        }
        let width = rows[0].len();
        if width == 0 || rows.iter().any(|r| r.len() != width) {
            return Err(Error::MalformedLayout(
                "grid rows must be non-empty and of equal length".into(),
            ));
        }
        let height = rows.len();
        let cells = Grid::from_vec(height, width, rows.concat());

        let mut goals = Vec::new();
        let mut sources = Vec::new();
        let mut targets = Vec::new();
        for pos in cells.positions() {
            match cells[pos] {
                Cell::Goal => goals.push(pos),
                Cell::TransferSource => sources.push(pos),
                Cell::TransferTarget => targets.push(pos),
                _ => {}
            }
        }
        let goal = match goals.as_slice() {
            [g] => *g,
            [] => return Err(Error::MissingGoal(name.to_string())),
            _ => {
                return Err(Error::MultipleGoals {
                    name: name.to_string(),
                    count: goals.len(),
                })
            }
        };
        let transfer = if transfer_mode == TransferMode::None {
            if !sources.is_empty() || !targets.is_empty() {
                return Err(Error::MalformedLayout(
                    "transfer cells present but transfer_mode is none".into(),
                ));
            }
            None
        } else {
            match (sources.as_slice(), targets.as_slice()) {
                ([s], [t]) => Some((*s, *t)),
                _ => {
                    return Err(Error::MalformedLayout(format!(
                        "transfer layouts need exactly one source and one target (found {} and {})",
                        sources.len(),
                        targets.len()
                    )))
                }
            }
        };

        let layout = Layout {
            name: name.to_string(),
            cells,
            start_rule,
            max_steps,
            transfer_mode,
            goal,
            transfer,
        };
        layout.validate()?;
        Ok(layout)
    }

    fn validate(&self) -> Result<()> {
        let starts = self.start_candidates();
        if starts.is_empty() {
            return Err(Error::MalformedLayout(
                "layout has no valid start cell".into(),
            ));
        }
        for start in starts {
            if !self.goal_reachable_from(start) {
                return Err(Error::UnreachableGoal(start));
            }
        }
        Ok(())
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn width(&self) -> usize {
        self.cells.width()
    }

    pub fn height(&self) -> usize {
        self.cells.height()
    }

    pub fn max_steps(&self) -> u32 {
        self.max_steps
    }

    pub fn start_rule(&self) -> StartRule {
        self.start_rule
    }

    pub fn transfer_mode(&self) -> TransferMode {
        self.transfer_mode
    }

    pub fn goal(&self) -> GridPos {
        self.goal
    }

    pub fn transfer_source(&self) -> Option<GridPos> {
        self.transfer.map(|(s, _)| s)
    }

    pub fn transfer_target(&self) -> Option<GridPos> {
        self.transfer.map(|(_, t)| t)
    }

    pub fn cell(&self, pos: GridPos) -> Cell {
        self.cells[pos]
    }

    pub fn is_walkable(&self, pos: GridPos) -> bool {
        self.cells.contains(pos) && self.cells[pos].is_walkable()
    }

    /// The action set available in `state`: the four moves, plus `Transfer`
    /// on the transfer source cell in `TransferMode::Action` layouts.
    pub fn actions(&self, state: GridPos) -> &'static [Action] {
        if self.transfer_mode == TransferMode::Action && Some(state) == self.transfer_source() {
            &Action::ALL
        } else {
            &Action::MOVES
        }
    }

    /// Walkable orthogonal neighbors in Up, Down, Left, Right order. These
    /// are the candidate cells for a failed action.
    pub fn move_neighbors(&self, state: GridPos) -> Vec<GridPos> {
        Action::MOVES
            .iter()
            .filter_map(|a| {
                let (dr, dc) = a.delta();
                state
                    .offset(dr, dc, self.height(), self.width())
                    .filter(|&p| self.is_walkable(p))
            })
            .collect()
    }

    /// Applies teleport relocation to a cell the agent is about to occupy.
    fn resolve_entry(&self, pos: GridPos) -> GridPos {
        if self.transfer_mode == TransferMode::Teleport {
            if let Some((source, target)) = self.transfer {
                if pos == source {
                    return target;
                }
            }
        }
        pos
    }

    /// One stochastic transition out of `state`. With probability `p_fail`
    /// the intended action is replaced by a uniform draw over the walkable
    /// orthogonal neighbors; an intended move into a wall (or off-grid) keeps
    /// the agent in place and counts as a collision.
    pub fn transition<R: Rng + ?Sized>(
        &self,
        state: GridPos,
        action: Action,
        p_fail: f64,
        rng: &mut R,
    ) -> Result<Transition> {
        if !self.actions(state).contains(&action) {
            return Err(Error::InvalidAction { state, action });
        }
        let failed = rng.random::<f64>() < p_fail;
        let (next, collided) = if failed {
            let neighbors = self.move_neighbors(state);
            if neighbors.is_empty() {
                (state, false)
            } else {
                (neighbors[rng.random_range(0..neighbors.len())], false)
            }
        } else if action == Action::Transfer {
            (self.transfer.expect("validated in actions()").1, false)
        } else {
            let (dr, dc) = action.delta();
            match state
                .offset(dr, dc, self.height(), self.width())
                .filter(|&p| self.is_walkable(p))
            {
                Some(p) => (p, false),
                None => (state, true),
            }
        };
        let next = self.resolve_entry(next);
        let done = self.cells[next] == Cell::Goal;
        let reward = if collided {
            REWARD_COLLISION
        } else if done {
            REWARD_GOAL
        } else {
            REWARD_STEP
        };
        Ok(Transition {
            next_state: next,
            reward,
            done,
            collided,
        })
    }

    /// Start cells admitted by the layout's start rule.
    pub fn start_candidates(&self) -> Vec<GridPos> {
        match self.start_rule {
            StartRule::TopLeft => self
                .cells
                .positions()
                .find(|&p| self.cells[p] == Cell::Floor)
                .into_iter()
                .collect(),
            StartRule::RandomCorner => {
                let (h, w) = (self.height(), self.width());
                [(0, 0), (0, w - 1), (h - 1, 0), (h - 1, w - 1)]
                    .into_iter()
                    .map(|(r, c)| GridPos::new(r, c))
                    .filter(|&p| self.cells[p] == Cell::Floor)
                    .collect()
            }
        }
    }

    /// Samples a start state per the start rule.
    pub fn start_state<R: Rng + ?Sized>(&self, rng: &mut R) -> GridPos {
        let candidates = self.start_candidates();
        debug_assert!(!candidates.is_empty(), "validated at load time");
        if candidates.len() == 1 {
            candidates[0]
        } else {
            candidates[rng.random_range(0..candidates.len())]
        }
    }

    /// Flood fill over occupancy states, following teleport relocation and
    /// the transfer action's source-to-target edge.
    pub fn goal_reachable_from(&self, start: GridPos) -> bool {
        let start = self.resolve_entry(start);
        let mut seen = Grid::<bool>::new(self.height(), self.width());
        let mut queue = VecDeque::from([start]);
        seen[start] = true;
        while let Some(pos) = queue.pop_front() {
            if pos == self.goal {
                return true;
            }
            let mut successors = self.move_neighbors(pos);
            if self.transfer_mode == TransferMode::Action && Some(pos) == self.transfer_source() {
                successors.push(self.transfer.expect("source implies transfer").1);
            }
            for next in successors {
                let next = self.resolve_entry(next);
                if !seen[next] {
                    seen[next] = true;
                    queue.push_back(next);
                }
            }
        }
        false
    }
}

/// A stateful episode wrapper over a [`Layout`]: tracks the agent position and
/// step count, and raises `done` when the goal is reached or `max_steps` is
/// exhausted. Each instance is an independent single-threaded state machine.
#[derive(Clone, Debug)]
pub struct GridWorld<'a> {
    layout: &'a Layout,
    p_fail: f64,
    state: GridPos,
    steps: u32,
    done: bool,
}

impl<'a> GridWorld<'a> {
    pub fn new(layout: &'a Layout, p_fail: f64) -> Self {
        assert!((0.0..=1.0).contains(&p_fail), "p_fail must be in [0, 1]");
        let state = layout.start_candidates()[0];
        Self {
            layout,
            p_fail,
            state,
            steps: 0,
            done: false,
        }
    }

    pub fn layout(&self) -> &'a Layout {
        self.layout
    }

    pub fn state(&self) -> GridPos {
        self.state
    }

    pub fn steps(&self) -> u32 {
        self.steps
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    /// Starts a new episode and returns the initial state.
    pub fn reset<R: Rng + ?Sized>(&mut self, rng: &mut R) -> GridPos {
        self.state = self.layout.start_state(rng);
        self.steps = 0;
        self.done = false;
        self.state
    }

    /// Takes one step. Panics if the episode is already done.
    pub fn step<R: Rng + ?Sized>(&mut self, action: Action, rng: &mut R) -> Result<Transition> {
        assert!(!self.done, "step() called on a finished episode");
        let mut tr = self.layout.transition(self.state, action, self.p_fail, rng)?;
        self.steps += 1;
        if self.steps >= self.layout.max_steps {
            tr.done = true;
        }
        self.state = tr.next_state;
        self.done = tr.done;
        Ok(tr)
    }
}
