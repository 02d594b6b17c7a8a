//! Exact-penalty training: one fixed factor κ on a hinge over the cost value
//! replaces the multiplier game.

use ndarray::ArrayView2;
use rand::{Rng, RngCore};

use crate::agent::{Agent, Phase, Proposal, StepContext, UpdateReport};
use crate::backbone::{AgentCore, Penalty};
use crate::config::{Algorithm, HyperConfig};
use crate::error::{Error, Result};
use crate::nn::Gradient;
use crate::replay::Batch;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PenaltyConfig {
    pub kappa: f64,
    /// Per-state bound on the cost value.
    pub threshold: f64,
}

impl PenaltyConfig {
    /// κ = 0 is accepted and reduces training to the unconstrained backbone.
    pub fn validate(&self) -> Result<()> {
        if !(self.kappa >= 0.0 && self.kappa.is_finite()) {
            return Err(Error::InvalidArgument("penalty factor must be non-negative".into()));
        }
        if !self.threshold.is_finite() {
            return Err(Error::NonFinite("penalty threshold"));
        }
        Ok(())
    }

    fn penalty(&self) -> Penalty<'static> {
        Penalty::Hinge {
            kappa: self.kappa,
            threshold: self.threshold,
        }
    }
}

/// `mean(-Q1 + κ max(0, Q_c − δ))` at `(s, π(s))`; slope 0 at the kink.
pub fn epo_actor_objective(core: &AgentCore, cfg: &PenaltyConfig, obs: ArrayView2<f64>) -> Result<(f64, Gradient)> {
    core.actor_objective(obs, cfg.penalty())
}

pub fn epo_actor_loss(core: &AgentCore, cfg: &PenaltyConfig, obs: ArrayView2<f64>) -> Result<f64> {
    core.actor_loss(obs, cfg.penalty())
}

#[derive(Debug, Clone)]
pub struct EpoAgent {
    pub core: AgentCore,
    pub penalty: PenaltyConfig,
}

impl EpoAgent {
    pub fn new<R: Rng + ?Sized>(cfg: &HyperConfig, penalty: PenaltyConfig, rng: &mut R) -> Result<Self> {
        penalty.validate()?;
        Ok(EpoAgent {
            core: AgentCore::new(cfg.backbone(), false, rng)?,
            penalty,
        })
    }
}

impl Agent for EpoAgent {
    fn algorithm(&self) -> Algorithm {
        Algorithm::Epo
    }

    fn core(&self) -> &AgentCore {
        &self.core
    }

    fn propose(&self, obs: &[f64], _ctx: &StepContext, explore: bool, rng: &mut dyn RngCore) -> Result<Proposal> {
        Ok(Proposal::plain(self.core.select_action(obs, explore, rng)?))
    }

    /// Cost critic, reward critics, then the penalized actor when due.
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
            report.actor_loss = Some(self.core.actor_step(batch.obs.view(), self.penalty.penalty())?);
            report.phases.push(Phase::Actor);
        }
        Ok(report)
    }
}
