use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{EnvError, EnvSpec, Environment, EpisodeClock, Observation, StepResult};

/// The bsuite catch board: a ball falls one row per step from a random
/// column of the top row, and the paddle on the bottom row moves
/// left / stays / right (actions 0, 1, 2). Catching the ball pays +1,
/// missing it pays -1, and either ends the episode.
///
/// Observations are the flattened `rows x columns` board with a 1 at the ball
/// and at the paddle.
#[derive(Debug, Clone)]
pub struct Catch {
    rows: usize,
    columns: usize,
    ball_row: usize,
    ball_col: usize,
    paddle_col: usize,
    clock: EpisodeClock,
    spec: EnvSpec,
}

impl Default for Catch {
    fn default() -> Self {
        Self::new()
    }
}

impl Catch {
    pub fn new() -> Self {
        Self::with_size(10, 5)
    }

    pub fn with_size(rows: usize, columns: usize) -> Self {
        assert!(rows >= 2 && columns >= 1);
        Self {
            rows,
            columns,
            ball_row: 0,
            ball_col: 0,
            paddle_col: columns / 2,
            clock: EpisodeClock::default(),
            spec: EnvSpec {
                name: "catch".into(),
                observation_dim: rows * columns,
                num_actions: 3,
                max_episode_length: rows - 1,
            },
        }
    }

    pub fn ball(&self) -> (usize, usize) {
        (self.ball_row, self.ball_col)
    }

    pub fn paddle_column(&self) -> usize {
        self.paddle_col
    }

    fn observe(&self) -> Observation {
        let mut board = vec![0.0; self.rows * self.columns];
        board[self.ball_row * self.columns + self.ball_col] = 1.0;
        board[(self.rows - 1) * self.columns + self.paddle_col] = 1.0;
        Observation::new(board)
    }
}

impl Environment for Catch {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, seed: u64) -> Observation {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.ball_row = 0;
        self.ball_col = rng.random_range(0..self.columns);
        self.paddle_col = self.columns / 2;
        self.clock.restart();
        self.observe()
    }

    fn step(&mut self, action: usize) -> Result<StepResult, EnvError> {
        self.clock.check(action, &self.spec)?;
        let moved = self.paddle_col as isize + action as isize - 1;
        self.paddle_col = moved.clamp(0, self.columns as isize - 1) as usize;
        self.ball_row += 1;
        let terminal = self.ball_row == self.rows - 1;
        let reward = if !terminal {
            0.0
        } else if self.ball_col == self.paddle_col {
            1.0
        } else {
            -1.0
        };
        let truncated = self.clock.advance(terminal, &self.spec);
        Ok(StepResult {
            observation: self.observe(),
            reward,
            terminal,
            truncated,
            executed_action: action,
        })
    }
}
