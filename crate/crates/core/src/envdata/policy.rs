use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::env::{reset, step, Dynamics, EnvSpec};
use crate::error::{Error, Result};

/// Anything that maps a state to an action.
pub trait Policy {
    fn act(&mut self, state: &[f64]) -> Result<Vec<f64>>;
}

impl<F> Policy for F
where
    F: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    fn act(&mut self, state: &[f64]) -> Result<Vec<f64>> {
        self(state)
    }
}

pub const EXPERT_POSITION_GAIN: f64 = 1.5;
pub const EXPERT_VELOCITY_GAIN: f64 = 0.8;
pub const MEDIUM_NOISE: f64 = 0.5;
pub const MEDIUM_RANDOM_FRACTION: f64 = 0.3;

/// Scripted behavior policies used to fill offline datasets.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Behavior {
    Random,
    Medium,
    Expert,
}

/// Proportions of a mixed dataset. Need not sum to one; they are normalized.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MixWeights {
    pub random: f64,
    pub medium: f64,
    pub expert: f64,
}

impl Default for MixWeights {
    fn default() -> Self {
        Self {
            random: 0.5,
            medium: 0.3,
            expert: 0.2,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum PolicyKind {
    Single(Behavior),
    Mix(MixWeights),
}

pub const POLICY_NAMES: [&str; 4] = ["random", "medium", "expert", "mix"];

impl PolicyKind {
    pub fn label(&self) -> &'static str {
        match self {
            PolicyKind::Single(Behavior::Random) => "random",
            PolicyKind::Single(Behavior::Medium) => "medium",
            PolicyKind::Single(Behavior::Expert) => "expert",
            PolicyKind::Mix(_) => "mix",
        }
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for PolicyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(PolicyKind::Single(Behavior::Random)),
            "medium" => Ok(PolicyKind::Single(Behavior::Medium)),
            "expert" => Ok(PolicyKind::Single(Behavior::Expert)),
            "mix" => Ok(PolicyKind::Mix(MixWeights::default())),
            other => Err(Error::invalid(format!(
                "unknown policy {other:?}; valid names: {}",
                POLICY_NAMES.join(", ")
            ))),
        }
    }
}

/// Target the maze expert steers toward from position `p`.
///
/// The maze is solved by a fixed route: up the left corridor, over the first
/// wall, down the middle corridor, under the second wall, then up to the goal.
fn maze_waypoint(p: [f64; 2], goal: [f64; 2]) -> [f64; 2] {
    if p[0] < 1.55 {
        if p[1] < 3.0 {
            [0.75, 3.3]
        } else {
            [2.1, 3.3]
        }
    } else if p[0] < 2.6 {
        if p[1] > 1.0 {
            [2.0, 0.7]
        } else {
            [3.3, 0.7]
        }
    } else {
        goal
    }
}

/// A scripted controller with its own random stream.
pub struct ScriptedPolicy {
    behavior: Behavior,
    spec: EnvSpec,
    rng: ChaCha8Rng,
}

impl ScriptedPolicy {
    pub fn new(behavior: Behavior, spec: &EnvSpec, seed: u64) -> Self {
        Self {
            behavior,
            spec: spec.clone(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Clipped proportional-derivative controller toward the current target.
    pub fn expert_action(spec: &EnvSpec, s: &[f64]) -> Vec<f64> {
        match &spec.dynamics {
            Dynamics::PointMass(pm) => {
                let target = if pm.walls.is_empty() {
                    pm.goal
                } else {
                    maze_waypoint([s[0], s[1]], pm.goal)
                };
                (0..2)
                    .map(|k| {
                        (EXPERT_POSITION_GAIN * (target[k] - s[k])
                            - EXPERT_VELOCITY_GAIN * s[2 + k])
                            .clamp(-1.0, 1.0)
                    })
                    .collect()
            }
            Dynamics::Bandit { rewards } => {
                let best = rewards
                    .iter()
                    .enumerate()
                    .fold(0, |b, (i, &r)| if r > rewards[b] { i } else { b });
                vec![best as f64]
            }
        }
    }

    fn random_action(&mut self) -> Vec<f64> {
        match &self.spec.dynamics {
            Dynamics::PointMass(_) => (0..self.spec.action_dim)
                .map(|_| self.rng.random_range(-1.0..=1.0))
                .collect(),
            Dynamics::Bandit { rewards } => vec![self.rng.random_range(0..rewards.len()) as f64],
        }
    }
}

impl Policy for ScriptedPolicy {
    fn act(&mut self, s: &[f64]) -> Result<Vec<f64>> {
        Ok(match self.behavior {
            Behavior::Random => self.random_action(),
            Behavior::Expert => Self::expert_action(&self.spec, s),
            Behavior::Medium => {
                if self.rng.random_bool(MEDIUM_RANDOM_FRACTION) {
                    self.random_action()
                } else if self.spec.point_mass().is_some() {
                    Self::expert_action(&self.spec, s)
                        .into_iter()
                        .map(|a| {
                            (a + self.rng.random_range(-MEDIUM_NOISE..=MEDIUM_NOISE))
                                .clamp(-1.0, 1.0)
                        })
                        .collect()
                } else {
                    Self::expert_action(&self.spec, s)
                }
            }
        })
    }
}

/// Summary of one finished episode.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpisodeStats {
    pub ret: f64,
    pub steps: usize,
    pub success: bool,
}

/// Rolls `policy` from `reset(spec, seed)` until goal or horizon.
pub fn run_episode(spec: &EnvSpec, policy: &mut impl Policy, seed: u64) -> Result<EpisodeStats> {
    let mut s = reset(spec, seed);
    let mut stats = EpisodeStats {
        ret: 0.0,
        steps: 0,
        success: false,
    };
    for _ in 0..spec.horizon {
        let a = policy.act(&s)?;
        let out = step(spec, &s, &a)?;
        stats.ret += out.reward;
        stats.steps += 1;
        s = out.s_next;
        if out.done {
            stats.success = true;
            break;
        }
    }
    Ok(stats)
}
