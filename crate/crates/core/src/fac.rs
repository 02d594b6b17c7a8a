//! State-wise multipliers: a softplus-headed network λ(s) weights the cost
//! value per state and is trained by delayed gradient ascent.

use ndarray::{Array1, ArrayView2, Axis};
use rand::{Rng, RngCore};

use crate::agent::{Agent, Phase, Proposal, StepContext, UpdateReport};
use crate::backbone::{AgentCore, Penalty};
use crate::config::{Algorithm, HyperConfig};
use crate::error::{ensure_len, Error, Result};
use crate::nn::{Activation, Adam, Gradient, Mlp};
use crate::replay::Batch;

/// Output bias at initialization, giving λ(s) ≈ softplus(-5) ≈ 0.0067.
pub const INITIAL_OUTPUT_BIAS: f64 = -5.0;

#[derive(Debug, Clone)]
pub struct MultiplierNet {
    pub net: Mlp,
    optimizer: Adam,
    pub lr: f64,
    pub delay: u32,
    pub threshold: f64,
}

impl MultiplierNet {
    pub fn new(net: Mlp, lr: f64, delay: u32, threshold: f64) -> Result<Self> {
        if net.output_activation() != Activation::Softplus || net.output_width() != 1 {
            return Err(Error::InvalidArgument("multiplier net needs one softplus output".into()));
        }
        if delay == 0 {
            return Err(Error::InvalidArgument("multiplier delay must be at least 1".into()));
        }
        Ok(MultiplierNet {
            optimizer: Adam::new(&net),
            net,
            lr,
            delay,
            threshold,
        })
    }

    pub fn values(&self, obs: ArrayView2<f64>) -> Result<Array1<f64>> {
        Ok(self.net.predict(obs)?.column(0).to_owned())
    }

    /// `mean λ(s)(qc − ε)` and its gradient in the network weights.
    pub fn objective(&self, obs: ArrayView2<f64>, qc: &Array1<f64>) -> Result<(f64, Gradient)> {
        ensure_len("multiplier cost values", obs.nrows(), qc.len())?;
        let n = obs.nrows() as f64;
        let pass = self.net.forward_batch(obs)?;
        let drive = qc.mapv(|q| q - self.threshold);
        let value = (&pass.scalar_output() * &drive).sum() / n;
        let up = (drive / n).insert_axis(Axis(1));
        let (grad, _) = self.net.backward(&pass, up.view())?;
        Ok((value, grad))
    }

    /// One ascent step on the objective, with `qc` held fixed. Returns the
    /// objective before the step.
    pub fn ascend(&mut self, obs: ArrayView2<f64>, qc: &Array1<f64>) -> Result<f64> {
        let (value, mut grad) = self.objective(obs, qc)?;
        grad.scale(-1.0);
        self.optimizer.step(&mut self.net, &grad, self.lr)?;
        Ok(value)
    }
}

/// `mean(-Q1 + λ(s) Q_c)` with λ(s) held constant, and its actor gradient.
pub fn fac_actor_objective(core: &AgentCore, mnet: &MultiplierNet, obs: ArrayView2<f64>) -> Result<(f64, Gradient)> {
    let lambda = mnet.values(obs)?;
    core.actor_objective(obs, Penalty::PerSample(lambda.as_slice().expect("contiguous")))
}

pub fn fac_actor_loss(core: &AgentCore, mnet: &MultiplierNet, obs: ArrayView2<f64>) -> Result<f64> {
    let lambda = mnet.values(obs)?;
    core.actor_loss(obs, Penalty::PerSample(lambda.as_slice().expect("contiguous")))
}

#[derive(Debug, Clone)]
pub struct FacAgent {
    pub core: AgentCore,
    pub multiplier: MultiplierNet,
}

impl FacAgent {
    /// The multiplier net mirrors the critic widths and is drawn after the backbone.
    pub fn new<R: Rng + ?Sized>(cfg: &HyperConfig, rng: &mut R) -> Result<Self> {
        let backbone = cfg.backbone();
        let core = AgentCore::new(backbone.clone(), false, rng)?;
        let mut net = Mlp::new(&backbone.state_net_sizes(1), Activation::Softplus, rng)?;
        net.set_output_bias(INITIAL_OUTPUT_BIAS);
        Ok(FacAgent {
            core,
            multiplier: MultiplierNet::new(net, cfg.multiplier_lr, cfg.multiplier_delay, cfg.cost_limit)?,
        })
    }
}

impl Agent for FacAgent {
    fn algorithm(&self) -> Algorithm {
        Algorithm::Fac
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
            safety_loss: Some(self.core.update_cost_critic(batch, next.view())?),
            critic_loss: self.core.update_critics(batch, next.view())?,
            phases: vec![Phase::CostCritic, Phase::RewardCritics],
            ..UpdateReport::default()
        };
        let obs = batch.obs.view();
        if due {
            let lambda = self.multiplier.values(obs)?;
            let penalty = Penalty::PerSample(lambda.as_slice().expect("contiguous"));
            report.actor_loss = Some(self.core.actor_step(obs, penalty)?);
            report.phases.push(Phase::Actor);
        }
        if self.core.updates().is_multiple_of(u64::from(self.multiplier.delay)) {
            let qc = self.core.policy_cost_values(obs)?;
            self.multiplier.ascend(obs, &qc)?;
            report.phases.push(Phase::Multiplier);
        }
        report.multiplier = self.multiplier.values(obs)?.mean();
        Ok(report)
    }
}
