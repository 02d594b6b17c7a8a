//! Speed-limited driving task on a kinematic bicycle model.
//!
//! The car is rewarded for forward progress along the x axis and receives a
//! binary cost signal whenever its speed after a step exceeds the limit.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{ensure_len, Error, Result};

pub const OBS_DIM: usize = 4;
pub const ACTION_DIM: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnvConfig {
    /// Integration step, seconds.
    pub dt: f64,
    /// Acceleration at full throttle, m/s^2.
    pub max_accel: f64,
    pub max_speed: f64,
    pub wheelbase: f64,
    /// Steering angle at full deflection, radians.
    pub max_steer: f64,
    pub horizon: u32,
    /// Cost fires when speed strictly exceeds this, m/s.
    pub speed_limit: f64,
    pub lateral_penalty: f64,
    /// Half-width of the uniform initial lateral offset.
    pub initial_offset: f64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig {
            dt: 0.05,
            max_accel: 2.0,
            max_speed: 3.0,
            wheelbase: 0.3,
            max_steer: 0.5,
            horizon: 500,
            speed_limit: 1.5,
            lateral_penalty: 0.1,
            initial_offset: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnvState {
    pub x: f64,
    pub y: f64,
    pub v: f64,
    pub psi: f64,
    pub step_index: u32,
}

impl EnvState {
    /// `[y, v, sin psi, cos psi]`; x is left out since the task is translation invariant.
    pub fn observation(&self) -> Vec<f64> {
        vec![self.y, self.v, self.psi.sin(), self.psi.cos()]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub next_obs: Vec<f64>,
    pub reward: f64,
    /// Exactly 0.0 or 1.0.
    pub cost: f64,
    pub done: bool,
}

#[derive(Debug, Clone, Default)]
pub struct SpeedLimit {
    pub config: EnvConfig,
}

impl SpeedLimit {
    pub fn new(config: EnvConfig) -> Self {
        SpeedLimit { config }
    }

    pub fn horizon(&self) -> u32 {
        self.config.horizon
    }

    pub fn reset(&self, seed: u64) -> (EnvState, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = self.config.initial_offset;
        let y = if h > 0.0 { rng.random_range(-h..=h) } else { 0.0 };
        let state = EnvState {
            x: 0.0,
            y,
            v: 0.0,
            psi: 0.0,
            step_index: 0,
        };
        let obs = state.observation();
        (state, obs)
    }

    /// Advances one step. Action components are clipped to `[-1, 1]`:
    /// `action[0]` is throttle, `action[1]` steering.
    pub fn step(&self, state: &EnvState, action: &[f64]) -> Result<(EnvState, StepResult)> {
        ensure_len("environment action", ACTION_DIM, action.len())?;
        if !action.iter().all(|a| a.is_finite()) {
            return Err(Error::NonFinite("environment action"));
        }
        if state.step_index >= self.config.horizon {
            return Err(Error::InvalidArgument("step called on a finished episode".into()));
        }
        let c = &self.config;
        let throttle = action[0].clamp(-1.0, 1.0);
        let steer = action[1].clamp(-1.0, 1.0);

        let v = (state.v + c.max_accel * throttle * c.dt).clamp(0.0, c.max_speed);
        let psi = state.psi + (state.v / c.wheelbase) * (c.max_steer * steer).tan() * c.dt;
        let x = state.x + state.v * state.psi.cos() * c.dt;
        let y = state.y + state.v * state.psi.sin() * c.dt;
        let step_index = state.step_index + 1;

        let next = EnvState {
            x,
            y,
            v,
            psi,
            step_index,
        };
        let reward = (x - state.x) - c.lateral_penalty * y.abs();
        let cost = if v > c.speed_limit { 1.0 } else { 0.0 };
        let result = StepResult {
            next_obs: next.observation(),
            reward,
            cost,
            done: step_index == c.horizon,
        };
        Ok((next, result))
    }
}
