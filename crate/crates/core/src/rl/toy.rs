//! Holonomic point-to-goal task in a walled square arena, scored with the
//! same reward terms as the driving environment. Used to check that the
//! SAC learner actually learns.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::replay::ReplayBuffer;
use super::sac::{ActionBounds, Batch, Losses, Sac, SacConfig, SacError};
use crate::dynamics::Action;
use crate::env::Transition;
use crate::geometry::{angle_diff, Vec2};
use crate::metrics::{classify_episode, step_reward, RewardWeights, StepSignals, TerminalClass};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointGoalConfig {
    /// The arena is [-half_extent, half_extent]².
    pub half_extent: f64,
    /// Starts and goals are drawn from [-spawn, spawn]².
    pub spawn: f64,
    pub max_speed: f64,
    pub dt: f64,
    pub goal_radius: f64,
    pub max_steps: usize,
    pub weights: RewardWeights,
}

impl Default for PointGoalConfig {
    fn default() -> Self {
        Self {
            half_extent: 5.0,
            spawn: 3.5,
            max_speed: 5.0,
            dt: 0.1,
            goal_radius: 1.0,
            max_steps: 60,
            weights: RewardWeights::new(1.0, 1.0, 10.0),
        }
    }
}

/// Both action channels are velocity components, as fractions of the
/// maximum speed.
pub fn point_goal_bounds() -> ActionBounds {
    ActionBounds::new(vec![-1.0, -1.0], vec![1.0, 1.0])
}

pub const POINT_GOAL_OBS_DIM: usize = 4;

#[derive(Debug, Clone)]
pub struct PointGoal {
    pub cfg: PointGoalConfig,
    pub pos: Vec2,
    pub goal: Vec2,
    vel: Vec2,
    steps: usize,
    log: Vec<StepSignals>,
    done: bool,
}

impl PointGoal {
    pub fn reset(cfg: PointGoalConfig, rng: &mut ChaCha8Rng) -> Self {
        let mut draw = || Vec2::new(rng.random_range(-cfg.spawn..cfg.spawn), rng.random_range(-cfg.spawn..cfg.spawn));
        let pos = draw();
        let mut goal = draw();
        while goal.dist(pos) < 2.0 * cfg.goal_radius {
            goal = draw();
        }
        Self {
            cfg,
            pos,
            goal,
            vel: Vec2::ZERO,
            steps: 0,
            log: Vec::new(),
            done: false,
        }
    }

    pub fn observe(&self) -> Vec<f64> {
        let h = self.cfg.half_extent;
        let d = self.goal - self.pos;
        vec![self.pos.x / h, self.pos.y / h, d.x / h, d.y / h]
    }

    /// Signed distance to the arena wall, negative inside.
    fn wall_distance(&self, p: Vec2) -> f64 {
        let h = self.cfg.half_extent;
        let inside = (h - p.x.abs()).min(h - p.y.abs());
        -inside
    }

    /// Returns (reward, done, terminal class when done).
    pub fn step(&mut self, a: &[f64]) -> (f64, bool, Option<TerminalClass>) {
        assert!(!self.done, "step after done");
        let vel = Vec2::new(a[0].clamp(-1.0, 1.0), a[1].clamp(-1.0, 1.0)) * self.cfg.max_speed;
        let prev = self.pos;
        self.pos = self.pos + vel * self.cfg.dt;
        self.steps += 1;
        let turning = if vel.norm() > 1e-6 && self.vel.norm() > 1e-6 {
            angle_diff(vel.angle(), self.vel.angle()).abs()
        } else {
            0.0
        };
        let delta_accel = if self.steps == 1 {
            0.0
        } else {
            (vel.norm() - self.vel.norm()).abs() / self.cfg.dt
        };
        self.vel = vel;
        let dist = self.pos.dist(self.goal);
        let d_offroad = self.wall_distance(self.pos);
        let mut s = StepSignals {
            d_collision: f64::INFINITY,
            d_offroad,
            d_progress: prev.dist(self.goal) - dist,
            delta_accel,
            delta_turning: if self.steps == 1 { 0.0 } else { turning },
            is_goal: false,
        };
        s.is_goal = dist < self.cfg.goal_radius && !s.offroad();
        self.log.push(s);
        let r = step_reward(&s, &self.cfg.weights).total;
        self.done = s.offroad() || s.is_goal || self.steps >= self.cfg.max_steps;
        let class = self.done.then(|| classify_episode(&self.log, self.pos, self.goal));
        (r, self.done, class)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyTrainingLog {
    pub episodes: usize,
    pub train_phases: usize,
    pub completion_during_training: f64,
    pub last_losses: Option<Losses>,
}

/// Train on `episodes` episodes; gradient steps happen only at barriers
/// every `cadence` episodes, one per transition collected since the last
/// barrier.
pub fn train_point_goal(
    sac_cfg: SacConfig,
    env_cfg: PointGoalConfig,
    episodes: usize,
    cadence: usize,
    seed: u64,
) -> Result<(Sac, ToyTrainingLog), SacError> {
    let mut sac = Sac::new(sac_cfg.clone(), POINT_GOAL_OBS_DIM, point_goal_bounds());
    let mut buffer = ReplayBuffer::new(sac_cfg.capacity, seed ^ 0x5eed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut completed = 0;
    let mut fresh = 0;
    let mut phases = 0;
    let mut last = None;
    for ep in 0..episodes {
        let mut env = PointGoal::reset(env_cfg, &mut rng);
        let mut obs = env.observe();
        loop {
            let (a, _) = sac.sample_action(&obs, &mut rng)?;
            let (r, done, class) = env.step(&a);
            let next = env.observe();
            buffer.push(Transition {
                obs: obs.clone(),
                action: Action::new(a[0], a[1]),
                reward: r,
                next_obs: next.clone(),
                done,
                terminal: class,
            });
            fresh += 1;
            obs = next;
            if done {
                completed += usize::from(class == Some(TerminalClass::Completed));
                break;
            }
        }
        if (ep + 1) % cadence.max(1) == 0 && buffer.len() >= sac_cfg.batch_size {
            for _ in 0..fresh {
                let idx = buffer.sample_indices(sac_cfg.batch_size);
                let batch: Vec<&Transition> = idx.iter().map(|&i| buffer.get(i).expect("index in range")).collect();
                last = Some(sac.update(&Batch::from_transitions(&batch))?);
            }
            fresh = 0;
            phases += 1;
        }
    }
    Ok((
        sac,
        ToyTrainingLog {
            episodes,
            train_phases: phases,
            completion_during_training: completed as f64 / episodes.max(1) as f64,
            last_losses: last,
        },
    ))
}

/// Completion rate of the deterministic (mean-action) policy.
pub fn evaluate_point_goal(sac: &Sac, env_cfg: PointGoalConfig, episodes: usize, seed: u64) -> Result<f64, SacError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut completed = 0;
    for _ in 0..episodes {
        let mut env = PointGoal::reset(env_cfg, &mut rng);
        loop {
            let a = sac.mean_action(&env.observe())?;
            let (_, done, class) = env.step(&a);
            if done {
                completed += usize::from(class == Some(TerminalClass::Completed));
                break;
            }
        }
    }
    Ok(completed as f64 / episodes.max(1) as f64)
}
