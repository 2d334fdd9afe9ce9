//! Experiment configuration: a flat JSON object whose missing keys take the
//! defaults below and whose unknown keys are rejected.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

use crate::agent::{AdvantageSpread, AgentConfig, EntropySign};
use crate::density::{DensityConfig, Spread};
use crate::envdata::{EnvSpec, ENV_NAMES};
use crate::error::{Error, Result};
use crate::replay::PriorityMode;

/// Which batch the actor update uses after the critic loop.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActorBatch {
    /// The last of the `G` critic batches.
    #[default]
    Last,
    /// An extra draw from the same priorities.
    Fresh,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub env: String,
    /// Offline dataset file; `None` trains purely online.
    pub dataset: Option<PathBuf>,
    pub mode: PriorityMode,
    /// Pool size `N`, also the batch size.
    pub pool_size: usize,
    /// Gradient steps per environment step.
    pub grad_steps: usize,
    pub critics: usize,
    pub subset: usize,
    pub hidden: usize,
    pub gamma: f64,
    pub alpha: f64,
    pub auto_alpha: bool,
    pub tau_ema: f64,
    pub xi: f64,
    pub rho: f64,
    pub beta0: f64,
    pub c_w: f64,
    pub eps_w: f64,
    pub c_a: f64,
    pub mc_samples: usize,
    pub density_members: usize,
    pub density_hidden: usize,
    pub density_lr: f64,
    pub density_spread: Spread,
    pub lr: f64,
    pub total_steps: u64,
    pub warmup: u64,
    pub eval_interval: u64,
    pub eval_episodes: usize,
    pub seed: u64,
    pub entropy_sign: EntropySign,
    pub advantage_spread: AdvantageSpread,
    pub actor_batch: ActorBatch,
    pub critic_layer_norm: bool,
    /// Online buffer capacity; 0 means `total_steps`.
    pub buffer_capacity: usize,
    /// Fill the wall-clock column of the metrics; off keeps files reproducible.
    pub record_timing: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            env: "point_reach".into(),
            dataset: None,
            mode: PriorityMode::A3,
            pool_size: 256,
            grad_steps: 20,
            critics: 10,
            subset: 2,
            hidden: 256,
            gamma: 0.99,
            alpha: 0.1,
            auto_alpha: false,
            tau_ema: 0.995,
            xi: 0.03,
            rho: 0.3,
            beta0: 0.4,
            c_w: 1.0,
            eps_w: 1e-6,
            c_a: 1.0,
            mc_samples: 10,
            density_members: 5,
            density_hidden: 256,
            density_lr: 3e-4,
            density_spread: Spread::Population,
            lr: 3e-4,
            total_steps: 100_000,
            warmup: 1_000,
            eval_interval: 5_000,
            eval_episodes: 10,
            seed: 0,
            entropy_sign: EntropySign::Minus,
            advantage_spread: AdvantageSpread::StdError,
            actor_batch: ActorBatch::Last,
            critic_layer_norm: true,
            buffer_capacity: 0,
            record_timing: false,
        }
    }
}

fn known_keys() -> Vec<String> {
    match serde_json::to_value(ExperimentConfig::default()) {
        Ok(Value::Object(m)) => m.keys().cloned().collect(),
        _ => unreachable!("config serializes to an object"),
    }
}

impl ExperimentConfig {
    /// Parses a JSON object, listing every unknown or ill-typed key and every
    /// out-of-range value in a single error.
    pub fn from_json(text: &str) -> Result<Self> {
        let value: Value = serde_json::from_str(text)
            .map_err(|e| Error::Config(vec![format!("not valid JSON: {e}")]))?;
        let Value::Object(given) = value else {
            return Err(Error::Config(vec!["config must be a JSON object".into()]));
        };
        let known = known_keys();
        let mut problems: Vec<String> = given
            .keys()
            .filter(|k| !known.contains(k))
            .map(|k| format!("unknown key {k:?}"))
            .collect();
        let Value::Object(defaults) = serde_json::to_value(Self::default())? else {
            unreachable!("config serializes to an object")
        };
        let mut merged: Map<String, Value> = defaults.clone();
        for (k, v) in given.iter().filter(|(k, _)| known.contains(k)) {
            let mut probe = defaults.clone();
            probe.insert(k.clone(), v.clone());
            match serde_json::from_value::<Self>(Value::Object(probe)) {
                Ok(_) => {
                    merged.insert(k.clone(), v.clone());
                }
                Err(e) => problems.push(format!("key {k:?}: {e}")),
            }
        }
        if !problems.is_empty() {
            return Err(Error::Config(problems));
        }
        let cfg: Self = serde_json::from_value(Value::Object(merged))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    /// Range checks; every violation is reported.
    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        if !ENV_NAMES.contains(&self.env.as_str()) {
            bad.push(format!("env {:?} is not one of {}", self.env, ENV_NAMES.join(", ")));
        }
        let mut check = |ok: bool, msg: String| {
            if !ok {
                bad.push(msg);
            }
        };
        check(self.pool_size >= 2, format!("pool_size must be at least 2, got {}", self.pool_size));
        check(self.grad_steps >= 1, format!("grad_steps must be at least 1, got {}", self.grad_steps));
        check(self.xi.is_finite() && self.xi >= 0.0, format!("xi must be finite and nonnegative, got {}", self.xi));
        check(self.rho.is_finite() && self.rho >= 0.0, format!("rho must be finite and nonnegative, got {}", self.rho));
        check(self.beta0 > 0.0 && self.beta0 < 1.0, format!("beta0 must lie in (0, 1), got {}", self.beta0));
        check(self.c_w.is_finite() && self.c_w >= 0.0, format!("c_w must be finite and nonnegative, got {}", self.c_w));
        check(self.eps_w > 0.0 && self.eps_w.is_finite(), format!("eps_w must be positive, got {}", self.eps_w));
        check(self.density_members >= 2, format!("density_members must be at least 2, got {}", self.density_members));
        check(self.density_hidden >= 1, "density_hidden must be at least 1".into());
        check(self.density_lr > 0.0 && self.density_lr.is_finite(), format!("density_lr must be positive, got {}", self.density_lr));
        check(self.total_steps >= 1, "total_steps must be at least 1".into());
        check(self.warmup < self.total_steps, format!("warmup ({}) must be below total_steps ({})", self.warmup, self.total_steps));
        check(self.eval_interval >= 1, "eval_interval must be at least 1".into());
        check(self.eval_episodes >= 1, "eval_episodes must be at least 1".into());
        if let Err(Error::Config(agent_bad)) = self.agent_config().validate() {
            bad.extend(agent_bad);
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(bad))
        }
    }

    pub fn env_spec(&self) -> Result<EnvSpec> {
        EnvSpec::by_name(&self.env)
    }

    pub fn agent_config(&self) -> AgentConfig {
        AgentConfig {
            hidden: self.hidden,
            critics: self.critics,
            subset: self.subset,
            gamma: self.gamma,
            alpha: self.alpha,
            auto_alpha: self.auto_alpha,
            tau_ema: self.tau_ema,
            c_a: self.c_a,
            mc_samples: self.mc_samples,
            lr: self.lr,
            critic_layer_norm: self.critic_layer_norm,
            actor_layer_norm: false,
            entropy_sign: self.entropy_sign,
            advantage_spread: self.advantage_spread,
        }
    }

    pub fn density_config(&self) -> DensityConfig {
        DensityConfig {
            members: self.density_members,
            hidden: self.density_hidden,
            layer_norm: false,
            lr: self.density_lr,
            c_w: self.c_w,
            eps_w: self.eps_w,
            spread: self.density_spread,
        }
    }

    pub fn capacity(&self) -> usize {
        if self.buffer_capacity == 0 {
            self.total_steps as usize
        } else {
            self.buffer_capacity
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// First 16 hex digits of the SHA-256 of the compact JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(json.as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}
