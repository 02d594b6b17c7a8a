//! Dual-policy shielding: a task actor chases reward while a recovery actor
//! minimizes the risk critic and takes over when the task action looks risky.

use ndarray::{Array1, Array2, ArrayView2, Zip};
use rand::{Rng, RngCore};

use crate::agent::{Agent, Phase, Proposal, StepContext, UpdateReport};
use crate::backbone::{clip_unit, critic_input, critic_values, gaussian, policy_gradient, AgentCore, CriticProbe};
use crate::config::{Algorithm, HyperConfig};
use crate::error::{Error, Result};
use crate::nn::{Activation, Gradient, Mlp, TrackedNet};
use crate::replay::Batch;

#[derive(Debug, Clone)]
pub struct RecoveryAgent {
    /// Holds the task actor and the risk critic.
    pub core: AgentCore,
    pub recovery: TrackedNet,
    pub threshold: f64,
    pub warmup_ratio: f64,
    pub recovery_lr: f64,
}

/// Per-row choice between task and recovery actions: row `i` takes the
/// recovery action when `risk[i] > threshold`.
pub fn takeover_mask(risk: &Array1<f64>, threshold: f64) -> Vec<bool> {
    risk.iter().map(|&q| q > threshold).collect()
}

impl RecoveryAgent {
    /// Draws the backbone networks first, then the recovery actor.
    pub fn new<R: Rng + ?Sized>(cfg: &HyperConfig, rng: &mut R) -> Result<Self> {
        if !(cfg.cost_limit > 0.0 && cfg.cost_limit < 1.0) {
            return Err(Error::InvalidArgument("risk threshold must lie in (0, 1)".into()));
        }
        let backbone = cfg.backbone();
        let core = AgentCore::new(backbone.clone(), true, rng)?;
        let recovery = Mlp::new(&backbone.actor_sizes(), Activation::Tanh, rng)?;
        Ok(RecoveryAgent {
            core,
            recovery: TrackedNet::new(recovery),
            threshold: cfg.cost_limit,
            warmup_ratio: cfg.warmup_ratio,
            recovery_lr: cfg.safe_actor_lr,
        })
    }

    fn risk_critic(&self) -> &TrackedNet {
        self.core.risk_critic.as_ref().expect("recovery agent always has a risk critic")
    }

    pub fn risk_of(&self, obs: &[f64], action: &[f64]) -> Result<f64> {
        let mut input = obs.to_vec();
        input.extend_from_slice(action);
        Ok(self.risk_critic().online.forward(&input)?[0])
    }

    /// Both proposals carry exploration noise when `explore` is set. The
    /// threshold is checked on the task action.
    pub fn select_with_recovery<R: Rng + ?Sized>(
        &self,
        obs: &[f64],
        ctx: &StepContext,
        explore: bool,
        rng: &mut R,
    ) -> Result<Proposal> {
        let task = self.core.select_action(obs, explore, rng)?;
        let mut risk_action = self.recovery.online.forward(obs)?;
        if explore {
            let sigma = self.core.config.exploration_noise;
            for v in &mut risk_action {
                *v = clip_unit(*v + gaussian(rng, sigma));
            }
        }
        let takeover = !ctx.in_warmup(self.warmup_ratio) && self.risk_of(obs, &task)? > self.threshold;
        Ok(Proposal {
            action: if takeover { risk_action.clone() } else { task.clone() },
            task_action: task,
            risk_action,
            intervened: takeover,
        })
    }

    /// Successor actions for the risk target: smoothed task-target actions,
    /// replaced by recovery-target actions where the target risk critic
    /// would trigger a takeover.
    fn composite_next_actions(&self, next_obs: ArrayView2<f64>, task_next: &Array2<f64>, warm: bool) -> Result<Array2<f64>> {
        if warm {
            return Ok(task_next.clone());
        }
        let risk_next = self.recovery.target.predict(next_obs)?;
        let q = critic_values(&self.risk_critic().target, next_obs, task_next.view())?;
        let mask = takeover_mask(&q, self.threshold);
        let mut out = task_next.clone();
        for (i, take) in mask.into_iter().enumerate() {
            if take {
                out.row_mut(i).assign(&risk_next.row(i));
            }
        }
        Ok(out)
    }

    /// `mean Q_risk(s, π_risk(s))` and its gradient for the recovery actor.
    pub fn recovery_objective(&self, obs: ArrayView2<f64>) -> Result<(f64, Gradient)> {
        let n = obs.nrows();
        let critic = &self.risk_critic().online;
        policy_gradient(&self.recovery.online, obs, |actions| {
            let probe = CriticProbe::new(critic, obs, actions.view())?;
            let q = probe.values();
            let d = probe.action_gradient(critic, &Array1::from_elem(n, 1.0 / n as f64))?;
            Ok((q.sum() / n as f64, d))
        })
    }

    pub fn update_recovery_actor(&mut self, obs: ArrayView2<f64>) -> Result<f64> {
        let (loss, grad) = self.recovery_objective(obs)?;
        self.recovery.apply(&grad, self.recovery_lr)?;
        self.recovery.track(self.core.config.tau)?;
        Ok(loss)
    }
}

impl Agent for RecoveryAgent {
    fn algorithm(&self) -> Algorithm {
        Algorithm::Recovery
    }

    fn core(&self) -> &AgentCore {
        &self.core
    }

    fn propose(&self, obs: &[f64], ctx: &StepContext, explore: bool, rng: &mut dyn RngCore) -> Result<Proposal> {
        self.select_with_recovery(obs, ctx, explore, rng)
    }

    fn update(&mut self, batch: &Batch, ctx: &StepContext, rng: &mut dyn RngCore) -> Result<UpdateReport> {
        let due = self.core.begin_update();
        let task_next = self.core.target_actions(batch.next_obs.view(), rng)?;
        let mut report = UpdateReport {
            critic_loss: self.core.update_critics(batch, task_next.view())?,
            phases: vec![Phase::RewardCritics],
            ..UpdateReport::default()
        };
        let warm = ctx.in_warmup(self.warmup_ratio);
        let next = self.composite_next_actions(batch.next_obs.view(), &task_next, warm)?;
        report.safety_loss = Some(self.core.update_risk_critic(batch, next.view())?);
        report.phases.push(Phase::RiskCritic);
        if due {
            report.actor_loss = Some(self.core.update_actor_unconstrained(batch)?);
            report.phases.push(Phase::Actor);
            self.update_recovery_actor(batch.obs.view())?;
            report.phases.push(Phase::RecoveryActor);
        }
        Ok(report)
    }
}

/// Fraction of rows where the recovery actor would take over.
pub fn takeover_rate(agent: &RecoveryAgent, obs: ArrayView2<f64>, task_actions: ArrayView2<f64>) -> Result<f64> {
    let input = critic_input(obs, task_actions)?;
    let q = agent.risk_critic().online.predict(input.view())?;
    let mut hits = 0usize;
    Zip::from(q.column(0)).for_each(|&v| {
        if v > agent.threshold {
            hits += 1;
        }
    });
    Ok(hits as f64 / obs.nrows().max(1) as f64)
}
