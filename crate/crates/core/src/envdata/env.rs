use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Half-width of the collision band around each maze wall segment.
pub const WALL_BAND: f64 = 0.05;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardKind {
    Dense,
    Sparse,
}

/// Axis-aligned wall segment from `a` to `b`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Wall {
    pub a: [f64; 2],
    pub b: [f64; 2],
}

impl Wall {
    fn vertical(&self) -> bool {
        self.a[0] == self.b[0]
    }

    /// Open rectangle `(x0, x1) x (y0, y1)` positions may not enter.
    pub fn band(&self) -> [f64; 4] {
        let (x0, x1) = (self.a[0].min(self.b[0]), self.a[0].max(self.b[0]));
        let (y0, y1) = (self.a[1].min(self.b[1]), self.a[1].max(self.b[1]));
        [x0 - WALL_BAND, x1 + WALL_BAND, y0 - WALL_BAND, y1 + WALL_BAND]
    }

    pub fn contains(&self, p: [f64; 2]) -> bool {
        let [x0, x1, y0, y1] = self.band();
        p[0] > x0 && p[0] < x1 && p[1] > y0 && p[1] < y1
    }

    /// Moves `next` back onto the band edge facing `prev`.
    fn project(&self, prev: [f64; 2], next: [f64; 2]) -> [f64; 2] {
        let [x0, x1, y0, y1] = self.band();
        let mut p = next;
        if prev[0] <= x0 {
            p[0] = x0;
        } else if prev[0] >= x1 {
            p[0] = x1;
        } else if prev[1] <= y0 {
            p[1] = y0;
        } else if prev[1] >= y1 {
            p[1] = y1;
        } else if self.vertical() {
            // Started inside the band; leave through the nearer long side.
            p[0] = if next[0] - x0 < x1 - next[0] { x0 } else { x1 };
        } else {
            p[1] = if next[1] - y0 < y1 - next[1] { y0 } else { y1 };
        }
        p
    }
}

/// Planar point mass: state `(px, py, vx, vy)`, action = 2-D force in `[-1, 1]^2`.
#[derive(Clone, Debug, PartialEq)]
pub struct PointMass {
    pub dt: f64,
    pub damping: f64,
    pub goal: [f64; 2],
    pub goal_radius: f64,
    pub walls: Vec<Wall>,
    /// `[x_min, x_max, y_min, y_max]`; unbounded when `None`.
    pub arena: Option<[f64; 4]>,
    /// Half-width of the uniform start-position noise.
    pub start_noise: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Dynamics {
    PointMass(PointMass),
    /// One-step, `K`-armed deterministic bandit; the action is the arm index.
    Bandit { rewards: Vec<f64> },
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnvSpec {
    pub name: String,
    pub state_dim: usize,
    pub action_dim: usize,
    pub horizon: usize,
    pub reward: RewardKind,
    pub dynamics: Dynamics,
}

/// Result of one environment transition.
#[derive(Clone, Debug, PartialEq)]
pub struct StepOutcome {
    pub s_next: Vec<f64>,
    pub reward: f64,
    /// Goal attainment only; the horizon is tracked by the caller.
    pub done: bool,
}

pub const ENV_NAMES: [&str; 2] = ["point_reach", "point_maze"];

impl EnvSpec {
    /// Dense-reward reach to `(2, 2)` in an open plane.
    pub fn point_reach() -> Self {
        Self {
            name: "point_reach".into(),
            state_dim: 4,
            action_dim: 2,
            horizon: 200,
            reward: RewardKind::Dense,
            dynamics: Dynamics::PointMass(PointMass {
                dt: 0.05,
                damping: 0.05,
                goal: [2.0, 2.0],
                goal_radius: 0.1,
                walls: vec![],
                arena: None,
                start_noise: 0.01,
            }),
        }
    }

    /// Sparse-reward 4x4 maze with two interior walls.
    pub fn point_maze() -> Self {
        Self {
            name: "point_maze".into(),
            state_dim: 4,
            action_dim: 2,
            horizon: 300,
            reward: RewardKind::Sparse,
            dynamics: Dynamics::PointMass(PointMass {
                dt: 0.05,
                damping: 0.05,
                goal: [3.5, 3.5],
                goal_radius: 0.15,
                walls: vec![
                    Wall {
                        a: [1.5, 0.0],
                        b: [1.5, 2.5],
                    },
                    Wall {
                        a: [2.5, 1.5],
                        b: [2.5, 4.0],
                    },
                ],
                arena: Some([0.0, 4.0, 0.0, 4.0]),
                start_noise: 0.01,
            }),
        }
    }

    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "point_reach" => Ok(Self::point_reach()),
            "point_maze" => Ok(Self::point_maze()),
            other => Err(Error::invalid(format!(
                "unknown environment {other:?}; valid names: {}",
                ENV_NAMES.join(", ")
            ))),
        }
    }

    /// Same task without start noise.
    pub fn without_noise(mut self) -> Self {
        if let Dynamics::PointMass(pm) = &mut self.dynamics {
            pm.start_noise = 0.0;
        }
        self
    }

    pub fn point_mass(&self) -> Option<&PointMass> {
        match &self.dynamics {
            Dynamics::PointMass(pm) => Some(pm),
            Dynamics::Bandit { .. } => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::invalid("horizon must be at least 1"));
        }
        match &self.dynamics {
            Dynamics::PointMass(pm) => {
                if pm.goal_radius <= 0.0 {
                    return Err(Error::invalid("goal radius must be positive"));
                }
                for w in &pm.walls {
                    if w.a[0] != w.b[0] && w.a[1] != w.b[1] {
                        return Err(Error::invalid(format!("wall {w:?} is not axis-aligned")));
                    }
                    if w.contains([0.0, 0.0]) {
                        return Err(Error::invalid(format!("wall {w:?} overlaps the start")));
                    }
                }
                Ok(())
            }
            Dynamics::Bandit { rewards } => {
                if rewards.len() < 2 {
                    return Err(Error::invalid("a bandit needs at least two arms"));
                }
                Ok(())
            }
        }
    }

    /// Whether `s` lies inside the goal region.
    pub fn at_goal(&self, s: &[f64]) -> bool {
        match &self.dynamics {
            Dynamics::PointMass(pm) => dist(&s[..2], &pm.goal) <= pm.goal_radius,
            Dynamics::Bandit { .. } => false,
        }
    }
}

/// `K`-armed deterministic bandit; arm `a` pays `rewards[a]` and ends the episode.
pub fn bandit_env(k: usize, rewards: &[f64]) -> Result<EnvSpec> {
    if k < 2 {
        return Err(Error::invalid("a bandit needs at least two arms"));
    }
    if rewards.len() != k {
        return Err(Error::DimensionMismatch {
            context: "bandit rewards",
            expected: k,
            got: rewards.len(),
        });
    }
    if rewards.iter().any(|r| !r.is_finite()) {
        return Err(Error::non_finite("bandit rewards"));
    }
    Ok(EnvSpec {
        name: format!("bandit{k}"),
        state_dim: 1,
        action_dim: 1,
        horizon: 1,
        reward: RewardKind::Sparse,
        dynamics: Dynamics::Bandit {
            rewards: rewards.to_vec(),
        },
    })
}

/// Initial state for `seed`.
pub fn reset(spec: &EnvSpec, seed: u64) -> Vec<f64> {
    match &spec.dynamics {
        Dynamics::PointMass(pm) => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut p = [0.0f64; 2];
            if pm.start_noise > 0.0 {
                for c in &mut p {
                    *c = rng.random_range(-pm.start_noise..=pm.start_noise);
                }
            }
            if let Some([x0, x1, y0, y1]) = pm.arena {
                p = [p[0].clamp(x0, x1), p[1].clamp(y0, y1)];
            }
            vec![p[0], p[1], 0.0, 0.0]
        }
        Dynamics::Bandit { .. } => vec![0.0],
    }
}

/// One deterministic transition. Point-mass actions are clipped to `[-1, 1]`.
pub fn step(spec: &EnvSpec, state: &[f64], action: &[f64]) -> Result<StepOutcome> {
    if state.len() != spec.state_dim {
        return Err(Error::DimensionMismatch {
            context: "env state",
            expected: spec.state_dim,
            got: state.len(),
        });
    }
    if action.len() != spec.action_dim {
        return Err(Error::DimensionMismatch {
            context: "env action",
            expected: spec.action_dim,
            got: action.len(),
        });
    }
    if state.iter().chain(action).any(|v| !v.is_finite()) {
        return Err(Error::non_finite("env state or action"));
    }
    match &spec.dynamics {
        Dynamics::PointMass(pm) => Ok(point_mass_step(spec, pm, state, action)),
        Dynamics::Bandit { rewards } => {
            let arm = action[0];
            if arm < 0.0 || arm.fract() != 0.0 || arm as usize >= rewards.len() {
                return Err(Error::invalid(format!("bandit arm {arm} out of range")));
            }
            Ok(StepOutcome {
                s_next: vec![0.0],
                reward: rewards[arm as usize],
                done: true,
            })
        }
    }
}

fn point_mass_step(spec: &EnvSpec, pm: &PointMass, s: &[f64], action: &[f64]) -> StepOutcome {
    let prev = [s[0], s[1]];
    let (vx, vy) = (s[2], s[3]);
    let mut p = [prev[0] + pm.dt * vx, prev[1] + pm.dt * vy];
    let mut v = [
        (1.0 - pm.damping) * vx + pm.dt * action[0].clamp(-1.0, 1.0),
        (1.0 - pm.damping) * vy + pm.dt * action[1].clamp(-1.0, 1.0),
    ];
    if let Some([x0, x1, y0, y1]) = pm.arena {
        if p[0] < x0 || p[0] > x1 {
            p[0] = p[0].clamp(x0, x1);
            v[0] = 0.0;
        }
        if p[1] < y0 || p[1] > y1 {
            p[1] = p[1].clamp(y0, y1);
            v[1] = 0.0;
        }
    }
    for w in &pm.walls {
        if w.contains(p) {
            p = w.project(prev, p);
            v = [0.0, 0.0];
        }
    }
    let d = dist(&p, &pm.goal);
    let reached = d <= pm.goal_radius;
    let reward = match spec.reward {
        RewardKind::Dense => -d,
        RewardKind::Sparse => {
            if reached {
                1.0
            } else {
                0.0
            }
        }
    };
    StepOutcome {
        s_next: vec![p[0], p[1], v[0], v[1]],
        reward,
        done: reached,
    }
}

fn dist(p: &[f64], g: &[f64; 2]) -> f64 {
    ((p[0] - g[0]).powi(2) + (p[1] - g[1]).powi(2)).sqrt()
}
