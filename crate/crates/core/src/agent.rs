//! Common interface over the six training algorithms.

use rand::{Rng, RngCore};

use crate::backbone::AgentCore;
use crate::config::{Algorithm, HyperConfig};
use crate::epo::{EpoAgent, PenaltyConfig};
use crate::error::Result;
use crate::fac::FacAgent;
use crate::lagrangian::LagrangianAgent;
use crate::recovery::RecoveryAgent;
use crate::replay::Batch;
use crate::safety_layer::SafetyLayerAgent;

/// Where training stands when an action is chosen or an update runs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepContext {
    pub step: u64,
    pub total_steps: u64,
    /// Cost from the previous environment step, 0 at episode start.
    pub prev_cost: f64,
}

impl StepContext {
    /// True while `step < ratio * total_steps`. The boundary step itself is
    /// already past the warm-up.
    pub fn in_warmup(&self, ratio: f64) -> bool {
        (self.step as f64) < ratio * self.total_steps as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Proposal {
    /// Action sent to the environment.
    pub action: Vec<f64>,
    pub task_action: Vec<f64>,
    pub risk_action: Vec<f64>,
    /// The safety mechanism replaced or modified the task action.
    pub intervened: bool,
}

impl Proposal {
    pub fn plain(action: Vec<f64>) -> Self {
        Proposal {
            task_action: action.clone(),
            risk_action: action.clone(),
            action,
            intervened: false,
        }
    }
}

/// Named stages of one update, in the order they ran.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    RewardCritics,
    CostCritic,
    RiskCritic,
    CostModel,
    Actor,
    RecoveryActor,
    Multiplier,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct UpdateReport {
    pub phases: Vec<Phase>,
    pub critic_loss: f64,
    pub safety_loss: Option<f64>,
    pub actor_loss: Option<f64>,
    /// Current scalar multiplier, or the batch mean of a state-wise one.
    pub multiplier: Option<f64>,
}

pub trait Agent {
    fn algorithm(&self) -> Algorithm;

    fn core(&self) -> &AgentCore;

    fn propose(&self, obs: &[f64], ctx: &StepContext, explore: bool, rng: &mut dyn RngCore) -> Result<Proposal>;

    fn update(&mut self, batch: &Batch, ctx: &StepContext, rng: &mut dyn RngCore) -> Result<UpdateReport>;
}

/// Plain twin-critic deterministic policy gradient; no cost handling.
#[derive(Debug, Clone)]
pub struct Td3Agent {
    pub core: AgentCore,
}

impl Td3Agent {
    pub fn new<R: Rng + ?Sized>(cfg: &HyperConfig, rng: &mut R) -> Result<Self> {
        Ok(Td3Agent {
            core: AgentCore::new(cfg.backbone(), false, rng)?,
        })
    }
}

impl Agent for Td3Agent {
    fn algorithm(&self) -> Algorithm {
        Algorithm::Td3
    }

    fn core(&self) -> &AgentCore {
        &self.core
    }

    fn propose(&self, obs: &[f64], _ctx: &StepContext, explore: bool, rng: &mut dyn RngCore) -> Result<Proposal> {
        Ok(Proposal::plain(self.core.select_action(obs, explore, rng)?))
    }

    fn update(&mut self, batch: &Batch, _ctx: &StepContext, rng: &mut dyn RngCore) -> Result<UpdateReport> {
        let due = self.core.begin_update();
        let next = self.core.target_actions(batch.next_obs.view(), rng)?;
        let mut report = UpdateReport {
            critic_loss: self.core.update_critics(batch, next.view())?,
            phases: vec![Phase::RewardCritics],
            ..UpdateReport::default()
        };
        if due {
            report.actor_loss = Some(self.core.update_actor_unconstrained(batch)?);
            report.phases.push(Phase::Actor);
        }
        Ok(report)
    }
}

/// Builds the agent named by `cfg.algorithm`, drawing initial weights from `rng`.
pub fn build_agent<R: Rng + ?Sized>(cfg: &HyperConfig, rng: &mut R) -> Result<Box<dyn Agent>> {
    cfg.validate()?;
    Ok(match cfg.algorithm {
        Algorithm::Td3 => Box::new(Td3Agent::new(cfg, rng)?),
        Algorithm::SafetyLayer => Box::new(SafetyLayerAgent::new(cfg, rng)?),
        Algorithm::Recovery => Box::new(RecoveryAgent::new(cfg, rng)?),
        Algorithm::Lagrangian => Box::new(LagrangianAgent::new(cfg, rng)?),
        Algorithm::Fac => Box::new(FacAgent::new(cfg, rng)?),
        Algorithm::Epo => Box::new(EpoAgent::new(
            cfg,
            PenaltyConfig {
                kappa: cfg.penalty_factor,
                threshold: cfg.cost_limit,
            },
            rng,
        )?),
    })
}
