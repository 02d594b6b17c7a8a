//! Primal-dual training with a single non-negative multiplier on the
//! cost-value constraint `E Q_c(s, π(s)) ≤ ε`.

use ndarray::ArrayView2;
use rand::{Rng, RngCore};

use crate::agent::{Agent, Phase, Proposal, StepContext, UpdateReport};
use crate::backbone::{AgentCore, Penalty};
use crate::config::{Algorithm, HyperConfig};
use crate::error::{Error, Result};
use crate::nn::Gradient;
use crate::replay::Batch;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalarMultiplier {
    pub value: f64,
    pub lr: f64,
    pub threshold: f64,
}

impl ScalarMultiplier {
    pub fn new(value: f64, lr: f64, threshold: f64) -> Result<Self> {
        if !(value >= 0.0 && value.is_finite()) {
            return Err(Error::InvalidArgument("multiplier must be non-negative".into()));
        }
        Ok(ScalarMultiplier { value, lr, threshold })
    }

    /// `λ ← max(0, λ + η (mean_qc − ε))`.
    pub fn update(&mut self, mean_qc: f64) -> Result<f64> {
        if !mean_qc.is_finite() {
            return Err(Error::NonFinite("mean cost value"));
        }
        self.value = (self.value + self.lr * (mean_qc - self.threshold)).max(0.0);
        Ok(self.value)
    }
}

/// `mean(-Q1 + λ Q_c)` at `(s, π(s))` and its actor gradient.
pub fn lagrangian_actor_objective(core: &AgentCore, lambda: f64, obs: ArrayView2<f64>) -> Result<(f64, Gradient)> {
    core.actor_objective(obs, Penalty::Scalar(lambda))
}

pub fn lagrangian_actor_loss(core: &AgentCore, lambda: f64, obs: ArrayView2<f64>) -> Result<f64> {
    core.actor_loss(obs, Penalty::Scalar(lambda))
}

#[derive(Debug, Clone)]
pub struct LagrangianAgent {
    pub core: AgentCore,
    pub multiplier: ScalarMultiplier,
}

impl LagrangianAgent {
    pub fn new<R: Rng + ?Sized>(cfg: &HyperConfig, rng: &mut R) -> Result<Self> {
        Ok(LagrangianAgent {
            core: AgentCore::new(cfg.backbone(), false, rng)?,
            multiplier: ScalarMultiplier::new(cfg.multiplier_init, cfg.multiplier_lr, cfg.cost_limit)?,
        })
    }
}

impl Agent for LagrangianAgent {
    fn algorithm(&self) -> Algorithm {
        Algorithm::Lagrangian
    }

    fn core(&self) -> &AgentCore {
        &self.core
    }

    fn propose(&self, obs: &[f64], _ctx: &StepContext, explore: bool, rng: &mut dyn RngCore) -> Result<Proposal> {
        Ok(Proposal::plain(self.core.select_action(obs, explore, rng)?))
    }

    /// Critics, then the actor when due, then the multiplier on every update
    /// using the same batch.
    fn update(&mut self, batch: &Batch, _ctx: &StepContext, rng: &mut dyn RngCore) -> Result<UpdateReport> {
        let due = self.core.begin_update();
        let next = self.core.target_actions(batch.next_obs.view(), rng)?;
        let mut report = UpdateReport {
            safety_loss: Some(self.core.update_cost_critic(batch, next.view())?),
            critic_loss: self.core.update_critics(batch, next.view())?,
            phases: vec![Phase::CostCritic, Phase::RewardCritics],
            ..UpdateReport::default()
        };
        if due {
            let lambda = self.multiplier.value;
            report.actor_loss = Some(self.core.actor_step(batch.obs.view(), Penalty::Scalar(lambda))?);
            report.phases.push(Phase::Actor);
        }
        let qc = self.core.policy_cost_values(batch.obs.view())?;
        let mean = qc.mean().unwrap_or(0.0);
        report.multiplier = Some(self.multiplier.update(mean)?);
        report.phases.push(Phase::Multiplier);
        Ok(report)
    }
}
