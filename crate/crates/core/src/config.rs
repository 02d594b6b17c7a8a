//! Hyper-parameters and the `key = value` config file format.
//!
//! Unspecified keys fall back to the per-algorithm defaults returned by
//! [`HyperConfig::defaults`]. Unknown keys are rejected; keys that the chosen
//! algorithm does not use are accepted and ignored with a logged notice.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::backbone::BackboneConfig;
use crate::env::{EnvConfig, ACTION_DIM, OBS_DIM};
use crate::error::{Error, Result};

/// Prefix for environment-variable overrides, e.g. `SAFERL_PENALTY_FACTOR=10`.
pub const ENV_PREFIX: &str = "SAFERL_";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Algorithm {
    Td3,
    SafetyLayer,
    Recovery,
    Lagrangian,
    Fac,
    Epo,
}

impl Algorithm {
    pub const ALL: [Algorithm; 6] = [
        Algorithm::Td3,
        Algorithm::SafetyLayer,
        Algorithm::Recovery,
        Algorithm::Lagrangian,
        Algorithm::Fac,
        Algorithm::Epo,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Td3 => "td3",
            Algorithm::SafetyLayer => "safety_layer",
            Algorithm::Recovery => "recovery",
            Algorithm::Lagrangian => "lagrangian",
            Algorithm::Fac => "fac",
            Algorithm::Epo => "epo",
        }
    }

    /// Keys that only some algorithms read.
    fn uses(self, key: &str) -> bool {
        use Algorithm::*;
        match key {
            "cost_limit" => self != Td3,
            "warmup_ratio" => matches!(self, SafetyLayer | Recovery),
            "safe_actor_lr" => self == Recovery,
            "multiplier_lr" => matches!(self, Lagrangian | Fac),
            "multiplier_init" => self == Lagrangian,
            "multiplier_delay" => self == Fac,
            "penalty_factor" => self == Epo,
            _ => true,
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.name() == s.trim())
            .ok_or_else(|| Error::InvalidArgument(format!("unknown algorithm `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HyperConfig {
    pub algorithm: Algorithm,
    /// Cost-value threshold; the risk threshold for recovery and the
    /// single-step threshold for the safety layer.
    pub cost_limit: f64,
    pub reward_discount: f64,
    pub cost_discount: f64,
    pub warmup_ratio: f64,
    pub batch_size: usize,
    pub critic_lr: f64,
    pub actor_lr: f64,
    pub safe_critic_lr: f64,
    pub safe_actor_lr: f64,
    pub multiplier_lr: f64,
    pub multiplier_init: f64,
    pub policy_delay: u32,
    pub multiplier_delay: u32,
    pub penalty_factor: f64,
    pub total_steps: u64,
    pub eval_interval: u64,
    pub eval_episodes: u32,
    pub seed: u64,
    pub exploration_noise: f64,
    pub tau: f64,
    pub target_noise: f64,
    pub target_noise_clip: f64,
    /// Uniformly random actions before the actor takes over.
    pub start_steps: u64,
    pub replay_capacity: usize,
    pub hidden_sizes: Vec<usize>,
    /// Writes elapsed seconds into the metrics; off keeps outputs reproducible.
    pub record_wall_time: bool,
    pub env: EnvConfig,
}

impl HyperConfig {
    pub fn defaults(algorithm: Algorithm) -> Self {
        HyperConfig {
            algorithm,
            cost_limit: if algorithm == Algorithm::SafetyLayer { 0.02 } else { 0.1 },
            reward_discount: 0.99,
            cost_discount: 0.99,
            warmup_ratio: 0.2,
            batch_size: 256,
            critic_lr: 3e-4,
            actor_lr: 3e-4,
            safe_critic_lr: 3e-4,
            safe_actor_lr: 3e-4,
            multiplier_lr: 1e-5,
            multiplier_init: 0.0,
            policy_delay: 2,
            multiplier_delay: 12,
            penalty_factor: 5.0,
            total_steps: 500_000,
            eval_interval: 5_000,
            eval_episodes: 5,
            seed: 0,
            exploration_noise: 0.1,
            tau: 0.005,
            target_noise: 0.2,
            target_noise_clip: 0.5,
            start_steps: 1_000,
            replay_capacity: 1_000_000,
            hidden_sizes: vec![256, 256],
            record_wall_time: false,
            env: EnvConfig::default(),
        }
    }

    /// Every key accepted in a config file, in canonical order.
    pub const KEYS: [&'static str; 36] = [
        "algorithm",
        "cost_limit",
        "reward_discount",
        "cost_discount",
        "warmup_ratio",
        "batch_size",
        "critic_lr",
        "actor_lr",
        "safe_critic_lr",
        "safe_actor_lr",
        "multiplier_lr",
        "multiplier_init",
        "policy_delay",
        "multiplier_delay",
        "penalty_factor",
        "total_steps",
        "eval_interval",
        "eval_episodes",
        "seed",
        "exploration_noise",
        "tau",
        "target_noise",
        "target_noise_clip",
        "start_steps",
        "replay_capacity",
        "hidden_sizes",
        "record_wall_time",
        "dt",
        "max_accel",
        "max_speed",
        "wheelbase",
        "max_steer",
        "horizon",
        "speed_limit",
        "lateral_penalty",
        "initial_offset",
    ];

    pub fn is_key(key: &str) -> bool {
        Self::KEYS.contains(&key)
    }

    /// Builds a config from ordered `(key, value)` overrides. An `algorithm`
    /// entry, wherever it appears, selects the defaults the rest apply to.
    pub fn from_pairs(pairs: &[(String, String)]) -> Result<Self> {
        for (k, _) in pairs {
            if !Self::is_key(k) {
                return Err(Error::UnknownKey(k.clone()));
            }
        }
        let algorithm = match pairs.iter().rev().find(|(k, _)| k == "algorithm") {
            Some((_, v)) => v.parse()?,
            None => Algorithm::Epo,
        };
        let mut cfg = HyperConfig::defaults(algorithm);
        for (k, v) in pairs {
            if k == "algorithm" {
                continue;
            }
            if !algorithm.uses(k) {
                log::info!("`{k}` is not used by {algorithm}; ignoring it");
            }
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<Self> {
        Self::from_pairs(&parse_pairs(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Sets one field from its textual value without validating ranges.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "algorithm" => self.algorithm = v.parse()?,
            "cost_limit" => self.cost_limit = num(key, v)?,
            "reward_discount" => self.reward_discount = num(key, v)?,
            "cost_discount" => self.cost_discount = num(key, v)?,
            "warmup_ratio" => self.warmup_ratio = num(key, v)?,
            "batch_size" => self.batch_size = num(key, v)?,
            "critic_lr" => self.critic_lr = num(key, v)?,
            "actor_lr" => self.actor_lr = num(key, v)?,
            "safe_critic_lr" => self.safe_critic_lr = num(key, v)?,
            "safe_actor_lr" => self.safe_actor_lr = num(key, v)?,
            "multiplier_lr" => self.multiplier_lr = num(key, v)?,
            "multiplier_init" => self.multiplier_init = num(key, v)?,
            "policy_delay" => self.policy_delay = num(key, v)?,
            "multiplier_delay" => self.multiplier_delay = num(key, v)?,
            "penalty_factor" => self.penalty_factor = num(key, v)?,
            "total_steps" => self.total_steps = num(key, v)?,
            "eval_interval" => self.eval_interval = num(key, v)?,
            "eval_episodes" => self.eval_episodes = num(key, v)?,
            "seed" => self.seed = num(key, v)?,
            "exploration_noise" => self.exploration_noise = num(key, v)?,
            "tau" => self.tau = num(key, v)?,
            "target_noise" => self.target_noise = num(key, v)?,
            "target_noise_clip" => self.target_noise_clip = num(key, v)?,
            "start_steps" => self.start_steps = num(key, v)?,
            "replay_capacity" => self.replay_capacity = num(key, v)?,
            "hidden_sizes" => {
                self.hidden_sizes = v
                    .split(',')
                    .map(|s| num(key, s.trim()))
                    .collect::<Result<Vec<usize>>>()?
            }
            "record_wall_time" => self.record_wall_time = num(key, v)?,
            "dt" => self.env.dt = num(key, v)?,
            "max_accel" => self.env.max_accel = num(key, v)?,
            "max_speed" => self.env.max_speed = num(key, v)?,
            "wheelbase" => self.env.wheelbase = num(key, v)?,
            "max_steer" => self.env.max_steer = num(key, v)?,
            "horizon" => self.env.horizon = num(key, v)?,
            "speed_limit" => self.env.speed_limit = num(key, v)?,
            "lateral_penalty" => self.env.lateral_penalty = num(key, v)?,
            "initial_offset" => self.env.initial_offset = num(key, v)?,
            _ => return Err(Error::UnknownKey(key.to_string())),
        }
        Ok(())
    }

    /// Textual value of one field, as written by [`HyperConfig::to_config_string`].
    pub fn get(&self, key: &str) -> Result<String> {
        Ok(match key {
            "algorithm" => self.algorithm.to_string(),
            "cost_limit" => self.cost_limit.to_string(),
            "reward_discount" => self.reward_discount.to_string(),
            "cost_discount" => self.cost_discount.to_string(),
            "warmup_ratio" => self.warmup_ratio.to_string(),
            "batch_size" => self.batch_size.to_string(),
            "critic_lr" => self.critic_lr.to_string(),
            "actor_lr" => self.actor_lr.to_string(),
            "safe_critic_lr" => self.safe_critic_lr.to_string(),
            "safe_actor_lr" => self.safe_actor_lr.to_string(),
            "multiplier_lr" => self.multiplier_lr.to_string(),
            "multiplier_init" => self.multiplier_init.to_string(),
            "policy_delay" => self.policy_delay.to_string(),
            "multiplier_delay" => self.multiplier_delay.to_string(),
            "penalty_factor" => self.penalty_factor.to_string(),
            "total_steps" => self.total_steps.to_string(),
            "eval_interval" => self.eval_interval.to_string(),
            "eval_episodes" => self.eval_episodes.to_string(),
            "seed" => self.seed.to_string(),
            "exploration_noise" => self.exploration_noise.to_string(),
            "tau" => self.tau.to_string(),
            "target_noise" => self.target_noise.to_string(),
            "target_noise_clip" => self.target_noise_clip.to_string(),
            "start_steps" => self.start_steps.to_string(),
            "replay_capacity" => self.replay_capacity.to_string(),
            "hidden_sizes" => self
                .hidden_sizes
                .iter()
                .map(|h| h.to_string())
                .collect::<Vec<_>>()
                .join(","),
            "record_wall_time" => self.record_wall_time.to_string(),
            "dt" => self.env.dt.to_string(),
            "max_accel" => self.env.max_accel.to_string(),
            "max_speed" => self.env.max_speed.to_string(),
            "wheelbase" => self.env.wheelbase.to_string(),
            "max_steer" => self.env.max_steer.to_string(),
            "horizon" => self.env.horizon.to_string(),
            "speed_limit" => self.env.speed_limit.to_string(),
            "lateral_penalty" => self.env.lateral_penalty.to_string(),
            "initial_offset" => self.env.initial_offset.to_string(),
            _ => return Err(Error::UnknownKey(key.to_string())),
        })
    }

    pub fn to_config_string(&self) -> String {
        let mut out = String::new();
        for key in Self::KEYS {
            out.push_str(&format!("{key} = {}\n", self.get(key).expect("listed key")));
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let range = |field: &str, ok: bool, message: &str| -> Result<()> {
            if ok {
                Ok(())
            } else {
                Err(Error::Range {
                    field: field.to_string(),
                    message: message.to_string(),
                })
            }
        };
        let open_unit = |x: f64| x > 0.0 && x < 1.0;
        let positive = |x: f64| x > 0.0 && x.is_finite();
        range("reward_discount", open_unit(self.reward_discount), "must lie in (0, 1)")?;
        range("cost_discount", open_unit(self.cost_discount), "must lie in (0, 1)")?;
        range("cost_limit", positive(self.cost_limit), "must be positive")?;
        if self.algorithm == Algorithm::Recovery {
            range("cost_limit", self.cost_limit < 1.0, "risk threshold must lie in (0, 1)")?;
        }
        range(
            "warmup_ratio",
            (0.0..=1.0).contains(&self.warmup_ratio),
            "must lie in [0, 1]",
        )?;
        range("batch_size", self.batch_size >= 1, "must be at least 1")?;
        for (field, v) in [
            ("critic_lr", self.critic_lr),
            ("actor_lr", self.actor_lr),
            ("safe_critic_lr", self.safe_critic_lr),
            ("safe_actor_lr", self.safe_actor_lr),
            ("multiplier_lr", self.multiplier_lr),
        ] {
            range(field, positive(v), "learning rates must be positive")?;
        }
        range(
            "multiplier_init",
            self.multiplier_init >= 0.0 && self.multiplier_init.is_finite(),
            "must be non-negative",
        )?;
        range("policy_delay", self.policy_delay >= 1, "must be at least 1")?;
        range("multiplier_delay", self.multiplier_delay >= 1, "must be at least 1")?;
        range(
            "penalty_factor",
            self.penalty_factor >= 0.0 && self.penalty_factor.is_finite(),
            "must be non-negative",
        )?;
        range("total_steps", self.total_steps >= 1, "must be at least 1")?;
        range("eval_interval", self.eval_interval >= 1, "must be at least 1")?;
        range("eval_episodes", self.eval_episodes >= 1, "must be at least 1")?;
        range(
            "exploration_noise",
            self.exploration_noise >= 0.0 && self.exploration_noise.is_finite(),
            "must be non-negative",
        )?;
        range("tau", self.tau > 0.0 && self.tau <= 1.0, "must lie in (0, 1]")?;
        range("target_noise", self.target_noise >= 0.0, "must be non-negative")?;
        range("target_noise_clip", self.target_noise_clip >= 0.0, "must be non-negative")?;
        range("replay_capacity", self.replay_capacity >= 1, "must be at least 1")?;
        range(
            "hidden_sizes",
            !self.hidden_sizes.is_empty() && !self.hidden_sizes.contains(&0),
            "needs at least one nonzero width",
        )?;
        let e = &self.env;
        range("dt", positive(e.dt), "must be positive")?;
        range("max_accel", positive(e.max_accel), "must be positive")?;
        range("max_speed", positive(e.max_speed), "must be positive")?;
        range("wheelbase", positive(e.wheelbase), "must be positive")?;
        range("max_steer", positive(e.max_steer) && e.max_steer < 1.5, "must lie in (0, 1.5)")?;
        range("horizon", e.horizon >= 1, "must be at least 1")?;
        range("speed_limit", positive(e.speed_limit), "must be positive")?;
        range("lateral_penalty", e.lateral_penalty >= 0.0, "must be non-negative")?;
        range("initial_offset", e.initial_offset >= 0.0, "must be non-negative")?;
        Ok(())
    }

    pub fn backbone(&self) -> BackboneConfig {
        BackboneConfig {
            obs_dim: OBS_DIM,
            action_dim: ACTION_DIM,
            hidden: self.hidden_sizes.clone(),
            gamma: self.reward_discount,
            cost_gamma: self.cost_discount,
            tau: self.tau,
            exploration_noise: self.exploration_noise,
            target_noise: self.target_noise,
            target_noise_clip: self.target_noise_clip,
            policy_delay: self.policy_delay,
            actor_lr: self.actor_lr,
            critic_lr: self.critic_lr,
            safe_critic_lr: self.safe_critic_lr,
        }
    }
}

fn num<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| Error::Range {
        field: key.to_string(),
        message: format!("cannot parse `{value}`"),
    })
}

/// Splits a config document into ordered `(key, value)` pairs.
pub fn parse_pairs(text: &str) -> Result<Vec<(String, String)>> {
    let mut pairs: Vec<(String, String)> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
            line: i + 1,
            message: format!("expected `key = value`, got `{line}`"),
        })?;
        let (key, value) = (key.trim(), value.trim());
        if key.is_empty() || value.is_empty() {
            return Err(Error::Parse {
                line: i + 1,
                message: "empty key or value".into(),
            });
        }
        if pairs.iter().any(|(k, _)| k == key) {
            return Err(Error::Parse {
                line: i + 1,
                message: format!("duplicate key `{key}`"),
            });
        }
        pairs.push((key.to_string(), value.to_string()));
    }
    Ok(pairs)
}

/// Overrides taken from variables named `SAFERL_<KEY>` (key upper-cased).
pub fn env_overrides<I>(vars: I) -> Vec<(String, String)>
where
    I: IntoIterator<Item = (String, String)>,
{
    let mut out: Vec<(String, String)> = vars
        .into_iter()
        .filter_map(|(k, v)| {
            let key = k.strip_prefix(ENV_PREFIX)?.to_ascii_lowercase();
            HyperConfig::is_key(&key).then_some((key, v))
        })
        .collect();
    out.sort();
    out
}
