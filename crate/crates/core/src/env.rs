//! Stochastic continuous point-maze navigation.
//!
//! Layouts come from a text grid ('#' wall, '.' free); the bottom text row
//! is y ∈ [0, 1). A damped point mass moves under 2-D bounded actions with
//! optional per-step Gaussian position noise; wall collisions are resolved
//! by per-axis projection so no trajectory ever enters a wall cell. The
//! observation is `(x, y, vx, vy, remaining_time, goal_x, goal_y)`.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub const OBS_DIM: usize = 7;

const VEL_DECAY: f64 = 0.8;
const ACT_GAIN: f64 = 0.2;

/// Text grid of unit cells. Row 0 of the source text is the top row.
#[derive(Clone, Debug)]
pub struct MazeLayout {
    width: usize,
    height: usize,
    /// Row-major from y=0 (bottom), true = wall.
    walls: Vec<bool>,
    free_cells: Vec<(usize, usize)>,
}

pub const UMAZE_12: &str = "\
############
#..........#
#..........#
#..........#
#..........#
########...#
########...#
#..........#
#..........#
#..........#
#..........#
############";

pub const FOURROOMS_18: &str = "\
##################
#........#.......#
#........#.......#
#........#.......#
#................#
#........#.......#
#........#.......#
#........#.......#
#........#.......#
####.########.####
#........#.......#
#........#.......#
#........#.......#
#................#
#........#.......#
#........#.......#
#........#.......#
##################";

pub const OPEN_12: &str = "\
############
#..........#
#..........#
#..........#
#..........#
#..........#
#..........#
#..........#
#..........#
#..........#
#..........#
############";

impl MazeLayout {
    pub fn parse(text: &str) -> Result<Self, String> {
        let rows: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
        if rows.is_empty() {
            return Err("empty maze layout".into());
        }
        let width = rows[0].chars().count();
        let height = rows.len();
        let mut walls = vec![false; width * height];
        for (r, line) in rows.iter().enumerate() {
            if line.chars().count() != width {
                return Err(format!("row {r} has width {} != {width}", line.chars().count()));
            }
            let y = height - 1 - r;
            for (x, c) in line.chars().enumerate() {
                walls[y * width + x] = match c {
                    '#' => true,
                    '.' => false,
                    other => return Err(format!("unexpected cell char {other:?} at row {r}")),
                };
            }
        }
        // containment: the border must be solid
        for x in 0..width {
            if !walls[x] || !walls[(height - 1) * width + x] {
                return Err("maze border must be walls".into());
            }
        }
        for y in 0..height {
            if !walls[y * width] || !walls[y * width + width - 1] {
                return Err("maze border must be walls".into());
            }
        }
        let free_cells = (0..height)
            .flat_map(|y| (0..width).map(move |x| (x, y)))
            .filter(|&(x, y)| !walls[y * width + x])
            .collect();
        Ok(MazeLayout {
            width,
            height,
            walls,
            free_cells,
        })
    }

    pub fn builtin(name: &str) -> Option<Self> {
        let text = match name {
            "umaze" => UMAZE_12,
            "fourrooms" => FOURROOMS_18,
            "open" => OPEN_12,
            _ => return None,
        };
        Some(MazeLayout::parse(text).expect("builtin layouts are valid"))
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn is_wall(&self, x: f64, y: f64) -> bool {
        if x < 0.0 || y < 0.0 || x >= self.width as f64 || y >= self.height as f64 {
            return true;
        }
        self.walls[(y as usize) * self.width + (x as usize)]
    }

    fn sample_free_point(&self, rng: &mut impl Rng) -> [f64; 2] {
        let (cx, cy) = self.free_cells[rng.gen_range(0..self.free_cells.len())];
        [
            cx as f64 + rng.gen_range(0.05..0.95),
            cy as f64 + rng.gen_range(0.05..0.95),
        ]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RewardMode {
    Dense,
    Sparse,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Sampling {
    Random,
    Fixed(f64, f64),
}

#[derive(Clone, Debug)]
pub struct MazeConfig {
    pub layout: MazeLayout,
    pub noise_sigma: f64,
    pub reward_mode: RewardMode,
    pub success_radius: f64,
    pub horizon: u32,
    pub goal_sampling: Sampling,
    pub start_sampling: Sampling,
}

impl MazeConfig {
    pub fn new(layout: MazeLayout) -> Self {
        MazeConfig {
            layout,
            noise_sigma: 0.0,
            reward_mode: RewardMode::Sparse,
            success_radius: 0.5,
            horizon: 500,
            goal_sampling: Sampling::Random,
            start_sampling: Sampling::Random,
        }
    }

    fn validate(&self) {
        assert!(self.success_radius > 0.0, "success radius must be positive");
        assert!(self.horizon >= 1, "horizon must be at least one step");
        assert!(self.noise_sigma >= 0.0, "noise sigma must be nonnegative");
    }
}

#[derive(Clone, Debug)]
pub struct EnvState {
    pub pos: [f64; 2],
    pub vel: [f64; 2],
    pub t: u32,
    pub goal: [f64; 2],
}

impl EnvState {
    pub fn observation(&self, horizon: u32) -> Vec<f64> {
        vec![
            self.pos[0],
            self.pos[1],
            self.vel[0],
            self.vel[1],
            (horizon - self.t) as f64 / horizon as f64,
            self.goal[0],
            self.goal[1],
        ]
    }
}

#[derive(Clone, Debug)]
pub struct StepResult {
    pub obs: Vec<f64>,
    pub reward: f64,
    pub done: bool,
    pub success: bool,
}

#[derive(Clone)]
pub struct PointMaze {
    pub config: MazeConfig,
    pub state: EnvState,
    pub rng: ChaCha8Rng,
    /// Out-of-range actions are clamped and counted rather than rejected.
    pub clamp_warnings: u64,
}

impl PointMaze {
    pub fn new(config: MazeConfig, rng: ChaCha8Rng) -> Self {
        config.validate();
        let mut env = PointMaze {
            config,
            state: EnvState {
                pos: [1.5, 1.5],
                vel: [0.0, 0.0],
                t: 0,
                goal: [1.5, 1.5],
            },
            rng,
            clamp_warnings: 0,
        };
        env.reset();
        env
    }

    pub fn obs_dim(&self) -> usize {
        OBS_DIM
    }

    pub fn reset(&mut self) -> Vec<f64> {
        let start = match self.config.start_sampling {
            Sampling::Random => self.config.layout.sample_free_point(&mut self.rng),
            Sampling::Fixed(x, y) => [x, y],
        };
        let goal = match self.config.goal_sampling {
            Sampling::Random => self.config.layout.sample_free_point(&mut self.rng),
            Sampling::Fixed(x, y) => [x, y],
        };
        debug_assert!(!self.config.layout.is_wall(start[0], start[1]));
        debug_assert!(!self.config.layout.is_wall(goal[0], goal[1]));
        self.state = EnvState {
            pos: start,
            vel: [0.0, 0.0],
            t: 0,
            goal,
        };
        self.state.observation(self.config.horizon)
    }

    /// Per-axis projection: a blocked axis loses its motion and velocity.
    fn move_with_walls(&mut self, delta: [f64; 2], kill_velocity: bool) {
        let layout = &self.config.layout;
        let mut pos = self.state.pos;
        let nx = pos[0] + delta[0];
        if layout.is_wall(nx, pos[1]) {
            if kill_velocity {
                self.state.vel[0] = 0.0;
            }
        } else {
            pos[0] = nx;
        }
        let ny = pos[1] + delta[1];
        if layout.is_wall(pos[0], ny) {
            if kill_velocity {
                self.state.vel[1] = 0.0;
            }
        } else {
            pos[1] = ny;
        }
        self.state.pos = pos;
    }

    pub fn step(&mut self, action: [f64; 2]) -> StepResult {
        let mut a = action;
        if a.iter().any(|v| v.abs() > 1.0) {
            self.clamp_warnings += 1;
            a = [a[0].clamp(-1.0, 1.0), a[1].clamp(-1.0, 1.0)];
        }
        for i in 0..2 {
            self.state.vel[i] = VEL_DECAY * self.state.vel[i] + ACT_GAIN * a[i];
        }
        self.move_with_walls(self.state.vel, true);
        if self.config.noise_sigma > 0.0 {
            let noise = [
                self.config.noise_sigma * self.rng.sample::<f64, _>(StandardNormal),
                self.config.noise_sigma * self.rng.sample::<f64, _>(StandardNormal),
            ];
            self.move_with_walls(noise, false);
        }
        self.state.t += 1;

        let dist = crate::state_distance(&self.state.pos, &self.state.goal);
        let success = dist <= self.config.success_radius;
        let reward = match self.config.reward_mode {
            RewardMode::Dense => -dist,
            RewardMode::Sparse => {
                if success {
                    1.0
                } else {
                    0.0
                }
            }
        };
        let done = success || self.state.t >= self.config.horizon;
        StepResult {
            obs: self.state.observation(self.config.horizon),
            reward,
            done,
            success,
        }
    }
}

/// Episode-level success: the agent came within the radius at some step,
/// after which the episode terminates.
pub fn success_metric(step_successes: &[bool]) -> bool {
    step_successes.iter().any(|&s| s)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn open_env(seed: u64) -> PointMaze {
        let config = MazeConfig::new(MazeLayout::builtin("open").unwrap());
        PointMaze::new(config, crate::rng::stream(seed, crate::rng::STREAM_ENV))
    }

    #[test]
    fn builtin_layouts_parse() {
        for name in ["umaze", "fourrooms", "open"] {
            let l = MazeLayout::builtin(name).unwrap();
            assert!(l.width() >= 12);
            assert!(!l.free_cells.is_empty());
        }
        assert_eq!(MazeLayout::builtin("umaze").unwrap().width(), 12);
        assert_eq!(MazeLayout::builtin("fourrooms").unwrap().width(), 18);
    }

    #[test]
    fn parse_rejects_open_border() {
        let bad = "###\n#..\n###";
        assert!(MazeLayout::parse(bad).is_err());
    }

    #[test]
    fn reset_is_deterministic_per_seed() {
        let mut a = open_env(7);
        let mut b = open_env(7);
        for _ in 0..10 {
            assert_eq!(a.reset(), b.reset());
        }
    }

    #[test]
    fn resets_land_in_free_space() {
        let config = MazeConfig::new(MazeLayout::builtin("umaze").unwrap());
        let mut env = PointMaze::new(config, crate::rng::stream(8, crate::rng::STREAM_ENV));
        for _ in 0..10_000 {
            env.reset();
            assert!(!env.config.layout.is_wall(env.state.pos[0], env.state.pos[1]));
            assert!(!env.config.layout.is_wall(env.state.goal[0], env.state.goal[1]));
        }
    }

    #[test]
    fn fixed_goal_mode_returns_configured_goal() {
        let mut config = MazeConfig::new(MazeLayout::builtin("umaze").unwrap());
        config.goal_sampling = Sampling::Fixed(1.5, 9.5);
        let mut env = PointMaze::new(config, crate::rng::stream(9, crate::rng::STREAM_ENV));
        for _ in 0..20 {
            env.reset();
            assert_eq!(env.state.goal, [1.5, 9.5]);
        }
    }

    #[test]
    fn zero_action_zero_noise_stays_put() {
        let mut env = open_env(1);
        env.config.noise_sigma = 0.0;
        env.config.start_sampling = Sampling::Fixed(6.0, 6.0);
        env.config.goal_sampling = Sampling::Fixed(1.5, 1.5);
        env.reset();
        let before = env.state.pos;
        env.step([0.0, 0.0]);
        assert_eq!(env.state.pos, before);
    }

    #[test]
    fn agent_at_goal_succeeds_with_sparse_reward() {
        let mut env = open_env(2);
        env.config.start_sampling = Sampling::Fixed(6.0, 6.0);
        env.config.goal_sampling = Sampling::Fixed(6.05, 6.0);
        env.config.reward_mode = RewardMode::Sparse;
        env.reset();
        let r = env.step([0.0, 0.0]);
        assert!(r.success);
        assert!(r.done);
        assert_eq!(r.reward, 1.0);
    }

    #[test]
    fn dense_reward_is_negative_distance() {
        let mut env = open_env(3);
        env.config.reward_mode = RewardMode::Dense;
        env.config.noise_sigma = 0.0;
        env.config.start_sampling = Sampling::Fixed(3.0, 3.0);
        env.config.goal_sampling = Sampling::Fixed(9.0, 3.0);
        env.reset();
        let r = env.step([0.0, 0.0]);
        assert!((r.reward + 6.0).abs() < 1e-12);
    }

    #[test]
    fn noise_std_matches_configuration() {
        let mut env = open_env(4);
        env.config.noise_sigma = 0.1;
        env.config.start_sampling = Sampling::Fixed(6.0, 6.0);
        env.config.goal_sampling = Sampling::Fixed(1.5, 1.5);
        let n = 100_000;
        let mut sum_sq = 0.0;
        for _ in 0..n {
            env.reset();
            let before = env.state.pos;
            env.step([0.0, 0.0]);
            let dx = env.state.pos[0] - before[0];
            let dy = env.state.pos[1] - before[1];
            sum_sq += dx * dx + dy * dy;
        }
        // two noise dimensions per step
        let std = (sum_sq / (2.0 * n as f64)).sqrt();
        assert!((std - 0.1).abs() < 0.002, "empirical std {std}");
    }

    #[test]
    fn walls_are_never_penetrated() {
        let config = MazeConfig {
            noise_sigma: 0.15,
            ..MazeConfig::new(MazeLayout::builtin("umaze").unwrap())
        };
        let mut env = PointMaze::new(config, crate::rng::stream(5, crate::rng::STREAM_ENV));
        let mut action_rng = crate::rng::stream(5, 77);
        use rand::Rng;
        let mut steps = 0;
        while steps < 10_000 {
            let r = env.step([action_rng.gen_range(-1.0..1.0), action_rng.gen_range(-1.0..1.0)]);
            assert!(
                !env.config.layout.is_wall(env.state.pos[0], env.state.pos[1]),
                "wall penetration at {:?}",
                env.state.pos
            );
            if r.done {
                env.reset();
            }
            steps += 1;
        }
    }

    #[test]
    fn replay_is_bit_identical_for_same_seed() {
        let run = |seed: u64| {
            let mut config = MazeConfig::new(MazeLayout::builtin("umaze").unwrap());
            config.noise_sigma = 0.1;
            let mut env = PointMaze::new(config, crate::rng::stream(seed, crate::rng::STREAM_ENV));
            let mut action_rng = crate::rng::stream(seed, 99);
            use rand::Rng;
            let mut track = Vec::new();
            for _ in 0..500 {
                let r = env.step([action_rng.gen_range(-1.0..1.0), action_rng.gen_range(-1.0..1.0)]);
                track.push((env.state.pos, r.reward));
                if r.done {
                    env.reset();
                }
            }
            track
        };
        assert_eq!(run(11), run(11));
    }

    #[test]
    fn out_of_range_actions_are_clamped_and_counted() {
        let mut env = open_env(6);
        assert_eq!(env.clamp_warnings, 0);
        env.step([5.0, -3.0]);
        assert_eq!(env.clamp_warnings, 1);
        assert!(env.state.vel[0] <= ACT_GAIN + 1e-12);
    }

    #[test]
    fn success_metric_matches_step_flags() {
        assert!(!success_metric(&[false, false, false]));
        assert!(success_metric(&[false, false, true]));
    }
}
