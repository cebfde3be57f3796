use super::{EnvError, EnvSpec, Environment, EpisodeClock, Observation, StepResult, TabularModel};
use crate::tabular::TabularMdp;

/// The shipped grid: a distant +50 goal in the lower-right corner, negative
/// cells scattered near the short paths, and a few walls.
///
/// `S` start, `.` empty, `#` wall, `G` goal (+50, terminal), digit `d` a cell
/// costing `-d` on entry.
pub const SHIPPED_GRID: &str = "\
S..3..
...##.
....3.
..#..#
.5...1
.....G";

const GOAL_REWARD: f64 = 50.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GridCell {
    Open { reward: f64 },
    Wall,
    Goal { reward: f64 },
}

/// Rectangular grid with per-cell entry rewards. Moving into a wall or off the
/// board leaves the agent in place and pays the current cell's reward again.
#[derive(Debug, Clone, PartialEq)]
pub struct GridLayout {
    rows: usize,
    cols: usize,
    cells: Vec<GridCell>,
    start: (usize, usize),
    /// Row-major index of every non-wall cell, `None` for walls.
    state_index: Vec<Option<usize>>,
    positions: Vec<(usize, usize)>,
}

impl GridLayout {
    /// Parses the character map described on [`SHIPPED_GRID`].
    pub fn parse(map: &str) -> Result<Self, String> {
        let lines: Vec<&str> = map.lines().map(str::trim).filter(|l| !l.is_empty()).collect();
        let rows = lines.len();
        let cols = lines.first().map_or(0, |l| l.chars().count());
        if rows == 0 || cols == 0 {
            return Err("empty grid".into());
        }
        let mut cells = Vec::with_capacity(rows * cols);
        let mut start = None;
        for (r, line) in lines.iter().enumerate() {
            if line.chars().count() != cols {
                return Err(format!("row {r} has a different width"));
            }
            for (c, ch) in line.chars().enumerate() {
                let cell = match ch {
                    '.' => GridCell::Open { reward: 0.0 },
                    'S' => {
                        if start.replace((r, c)).is_some() {
                            return Err("more than one start cell".into());
                        }
                        GridCell::Open { reward: 0.0 }
                    }
                    '#' => GridCell::Wall,
                    'G' => GridCell::Goal { reward: GOAL_REWARD },
                    d if d.is_ascii_digit() => GridCell::Open {
                        reward: -f64::from(d.to_digit(10).unwrap()),
                    },
                    other => return Err(format!("unknown cell character {other:?}")),
                };
                cells.push(cell);
            }
        }
        let start = start.ok_or("no start cell")?;
        Ok(Self::from_cells(rows, cols, cells, start))
    }

    pub fn from_cells(rows: usize, cols: usize, cells: Vec<GridCell>, start: (usize, usize)) -> Self {
        assert_eq!(cells.len(), rows * cols);
        let mut state_index = Vec::with_capacity(cells.len());
        let mut positions = Vec::new();
        for (i, cell) in cells.iter().enumerate() {
            if matches!(cell, GridCell::Wall) {
                state_index.push(None);
            } else {
                state_index.push(Some(positions.len()));
                positions.push((i / cols, i % cols));
            }
        }
        assert!(
            matches!(cells[start.0 * cols + start.1], GridCell::Open { .. }),
            "start must be an open cell"
        );
        Self { rows, cols, cells, start, state_index, positions }
    }

    pub fn num_states(&self) -> usize {
        self.positions.len()
    }

    pub fn start_state(&self) -> usize {
        self.index_of(self.start).unwrap()
    }

    pub fn cell(&self, pos: (usize, usize)) -> GridCell {
        self.cells[pos.0 * self.cols + pos.1]
    }

    pub fn index_of(&self, pos: (usize, usize)) -> Option<usize> {
        self.state_index[pos.0 * self.cols + pos.1]
    }

    pub fn position(&self, state: usize) -> (usize, usize) {
        self.positions[state]
    }

    fn is_goal(&self, pos: (usize, usize)) -> bool {
        matches!(self.cell(pos), GridCell::Goal { .. })
    }

    /// Actions: 0 up, 1 right, 2 down, 3 left.
    fn move_from(&self, pos: (usize, usize), action: usize) -> ((usize, usize), f64) {
        let (r, c) = (pos.0 as isize, pos.1 as isize);
        let (nr, nc) = match action {
            0 => (r - 1, c),
            1 => (r, c + 1),
            2 => (r + 1, c),
            _ => (r, c - 1),
        };
        let inside = nr >= 0 && nc >= 0 && (nr as usize) < self.rows && (nc as usize) < self.cols;
        let next = if inside && !matches!(self.cell((nr as usize, nc as usize)), GridCell::Wall) {
            (nr as usize, nc as usize)
        } else {
            pos
        };
        let reward = match self.cell(next) {
            GridCell::Open { reward } | GridCell::Goal { reward } => reward,
            GridCell::Wall => unreachable!(),
        };
        (next, reward)
    }
}

#[derive(Debug, Clone)]
pub struct GridWorld {
    layout: GridLayout,
    pos: (usize, usize),
    clock: EpisodeClock,
    spec: EnvSpec,
}

impl GridWorld {
    pub fn new(layout: GridLayout, max_episode_length: usize) -> Self {
        let spec = EnvSpec {
            name: "grid".into(),
            observation_dim: layout.num_states(),
            num_actions: 4,
            max_episode_length,
        };
        Self { pos: layout.start, layout, clock: EpisodeClock::default(), spec }
    }

    pub fn shipped() -> Self {
        Self::new(GridLayout::parse(SHIPPED_GRID).unwrap(), 200)
    }

    pub fn layout(&self) -> &GridLayout {
        &self.layout
    }
}

impl Environment for GridWorld {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, _seed: u64) -> Observation {
        self.pos = self.layout.start;
        self.clock.restart();
        self.observation_of(self.layout.start_state())
    }

    fn step(&mut self, action: usize) -> Result<StepResult, EnvError> {
        self.clock.check(action, &self.spec)?;
        let (next, reward) = self.layout.move_from(self.pos, action);
        self.pos = next;
        let terminal = self.layout.is_goal(next);
        let truncated = self.clock.advance(terminal, &self.spec);
        Ok(StepResult {
            observation: self.observation_of(self.layout.index_of(next).unwrap()),
            reward,
            terminal,
            truncated,
            executed_action: action,
        })
    }
}

impl TabularModel for GridWorld {
    /// One tabular state per non-wall cell; goal cells are the absorbing
    /// terminals.
    fn tabular_model(&self, gamma: f64) -> TabularMdp {
        let l = &self.layout;
        let mut b = TabularMdp::builder(l.num_states(), 4, gamma).start(l.start_state());
        for s in 0..l.num_states() {
            let pos = l.position(s);
            if l.is_goal(pos) {
                b = b.terminal(s);
                continue;
            }
            for a in 0..4 {
                let (next, r) = l.move_from(pos, a);
                b = b.transition(s, a, l.index_of(next).unwrap(), 1.0).reward(s, a, r);
            }
        }
        b.build().expect("grid model is well formed")
    }

    fn observation_of(&self, state: usize) -> Observation {
        Observation::one_hot(self.layout.num_states(), state)
    }
}
