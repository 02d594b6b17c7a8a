//! Fixed-capacity ring buffer with uniform sampling.

use ndarray::{Array1, Array2};
use rand::Rng;

use crate::error::{ensure_len, Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub obs: Vec<f64>,
    /// Action actually applied to the environment.
    pub action: Vec<f64>,
    pub next_obs: Vec<f64>,
    pub reward: f64,
    pub cost: f64,
    pub done: bool,
    /// Cost observed on the step before this one (0 at episode start).
    pub prev_cost: f64,
    /// What the task policy proposed. Equals `action` outside recovery.
    pub task_action: Vec<f64>,
    /// What the recovery policy proposed. Equals `action` outside recovery.
    pub risk_action: Vec<f64>,
}

impl Transition {
    /// A transition whose proposed actions equal the executed one.
    pub fn simple(
        obs: Vec<f64>,
        action: Vec<f64>,
        next_obs: Vec<f64>,
        reward: f64,
        cost: f64,
        done: bool,
        prev_cost: f64,
    ) -> Self {
        Transition {
            task_action: action.clone(),
            risk_action: action.clone(),
            obs,
            action,
            next_obs,
            reward,
            cost,
            done,
            prev_cost,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    obs_dim: usize,
    action_dim: usize,
    items: Vec<Transition>,
    next: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, obs_dim: usize, action_dim: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::InvalidArgument("replay capacity must be at least 1".into()));
        }
        Ok(ReplayBuffer {
            capacity,
            obs_dim,
            action_dim,
            items: Vec::new(),
            next: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Oldest-first view is not kept; `get` indexes storage slots.
    pub fn get(&self, slot: usize) -> Option<&Transition> {
        self.items.get(slot)
    }

    fn validate(&self, t: &Transition) -> Result<()> {
        ensure_len("transition obs", self.obs_dim, t.obs.len())?;
        ensure_len("transition next_obs", self.obs_dim, t.next_obs.len())?;
        ensure_len("transition action", self.action_dim, t.action.len())?;
        ensure_len("transition task action", self.action_dim, t.task_action.len())?;
        ensure_len("transition risk action", self.action_dim, t.risk_action.len())?;
        for c in [t.cost, t.prev_cost] {
            if c != 0.0 && c != 1.0 {
                return Err(Error::InvalidArgument(format!("cost must be 0 or 1, got {c}")));
            }
        }
        let finite = t
            .obs
            .iter()
            .chain(&t.next_obs)
            .chain(&t.action)
            .chain(&t.task_action)
            .chain(&t.risk_action)
            .chain(std::iter::once(&t.reward))
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::NonFinite("transition"));
        }
        Ok(())
    }

    pub fn push(&mut self, t: Transition) -> Result<()> {
        self.validate(&t)?;
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.next] = t;
        }
        self.next = (self.next + 1) % self.capacity;
        Ok(())
    }

    /// `n` uniform draws with replacement.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Vec<&Transition>> {
        if self.items.is_empty() {
            return Err(Error::EmptyBuffer);
        }
        let len = self.items.len();
        Ok((0..n).map(|_| &self.items[rng.random_range(0..len)]).collect())
    }

    pub fn sample_batch<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Batch> {
        let rows = self.sample(n, rng)?;
        Ok(Batch::from_transitions(&rows, self.obs_dim, self.action_dim))
    }
}

/// Column-major view of a mini-batch, one row per transition.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub obs: Array2<f64>,
    pub actions: Array2<f64>,
    pub next_obs: Array2<f64>,
    pub rewards: Array1<f64>,
    pub costs: Array1<f64>,
    /// 1.0 where the episode ended.
    pub dones: Array1<f64>,
    pub prev_costs: Array1<f64>,
    pub task_actions: Array2<f64>,
    pub risk_actions: Array2<f64>,
}

impl Batch {
    pub fn from_transitions(rows: &[&Transition], obs_dim: usize, action_dim: usize) -> Self {
        let n = rows.len();
        let matrix = |dim: usize, f: &dyn Fn(&Transition) -> &[f64]| {
            Array2::from_shape_fn((n, dim), |(i, j)| f(rows[i])[j])
        };
        Batch {
            obs: matrix(obs_dim, &|t| &t.obs),
            actions: matrix(action_dim, &|t| &t.action),
            next_obs: matrix(obs_dim, &|t| &t.next_obs),
            rewards: rows.iter().map(|t| t.reward).collect(),
            costs: rows.iter().map(|t| t.cost).collect(),
            dones: rows.iter().map(|t| if t.done { 1.0 } else { 0.0 }).collect(),
            prev_costs: rows.iter().map(|t| t.prev_cost).collect(),
            task_actions: matrix(action_dim, &|t| &t.task_action),
            risk_actions: matrix(action_dim, &|t| &t.risk_action),
        }
    }

    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }
}
