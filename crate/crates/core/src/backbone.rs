//! Deterministic actor-critic machinery shared by every algorithm: twin reward
//! critics with clipped double-Q targets, a cost critic, an optional bounded
//! risk critic, target networks, and delayed actor updates.

use ndarray::{concatenate, s, Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::nn::{Activation, ForwardPass, Gradient, Mlp, TrackedNet};
use crate::replay::Batch;

#[derive(Debug, Clone, PartialEq)]
pub struct BackboneConfig {
    pub obs_dim: usize,
    pub action_dim: usize,
    pub hidden: Vec<usize>,
    pub gamma: f64,
    pub cost_gamma: f64,
    pub tau: f64,
    pub exploration_noise: f64,
    pub target_noise: f64,
    pub target_noise_clip: f64,
    pub policy_delay: u32,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub safe_critic_lr: f64,
}

impl BackboneConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if !(self.gamma > 0.0 && self.gamma < 1.0) || !(self.cost_gamma > 0.0 && self.cost_gamma < 1.0) {
            return bad("discounts must lie in (0, 1)");
        }
        if self.exploration_noise < 0.0 || self.target_noise < 0.0 || self.target_noise_clip < 0.0 {
            return bad("noise scales must be non-negative");
        }
        if self.policy_delay == 0 {
            return bad("policy delay must be at least 1");
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return bad("tau must lie in (0, 1]");
        }
        if self.obs_dim == 0 || self.action_dim == 0 {
            return bad("observation and action widths must be nonzero");
        }
        Ok(())
    }

    fn sizes(&self, input: usize, output: usize) -> Vec<usize> {
        let mut sizes = Vec::with_capacity(self.hidden.len() + 2);
        sizes.push(input);
        sizes.extend(&self.hidden);
        sizes.push(output);
        sizes
    }

    pub fn actor_sizes(&self) -> Vec<usize> {
        self.sizes(self.obs_dim, self.action_dim)
    }

    pub fn critic_sizes(&self) -> Vec<usize> {
        self.sizes(self.obs_dim + self.action_dim, 1)
    }

    /// Sizes for a network reading only the observation.
    pub fn state_net_sizes(&self, output: usize) -> Vec<usize> {
        self.sizes(self.obs_dim, output)
    }
}

/// Extra term added to the actor objective `mean(-Q1(s, pi(s)))`, expressed
/// through the cost critic value `qc = Q_c(s, pi(s))`.
#[derive(Debug, Clone, Copy)]
pub enum Penalty<'a> {
    None,
    /// `lambda * qc`, the scalar Lagrangian term.
    Scalar(f64),
    /// `lambda_i * qc_i` with one multiplier per batch row.
    PerSample(&'a [f64]),
    /// `kappa * max(0, qc - threshold)`, the exact penalty.
    Hinge { kappa: f64, threshold: f64 },
}

impl Penalty<'_> {
    fn value(&self, i: usize, qc: f64) -> f64 {
        match *self {
            Penalty::None => 0.0,
            Penalty::Scalar(l) => l * qc,
            Penalty::PerSample(w) => w[i] * qc,
            Penalty::Hinge { kappa, threshold } => kappa * (qc - threshold).max(0.0),
        }
    }

    fn slope(&self, i: usize, qc: f64) -> f64 {
        match *self {
            Penalty::None => 0.0,
            Penalty::Scalar(l) => l,
            Penalty::PerSample(w) => w[i],
            Penalty::Hinge { kappa, threshold } => {
                if qc > threshold {
                    kappa
                } else {
                    0.0
                }
            }
        }
    }
}

/// A critic evaluated at `(obs, actions)`, kept around for action gradients.
pub struct CriticProbe {
    pass: ForwardPass,
    obs_dim: usize,
}

impl CriticProbe {
    pub fn new(critic: &Mlp, obs: ArrayView2<f64>, actions: ArrayView2<f64>) -> Result<Self> {
        let input = critic_input(obs, actions)?;
        Ok(CriticProbe {
            pass: critic.forward_batch(input.view())?,
            obs_dim: obs.ncols(),
        })
    }

    pub fn values(&self) -> Array1<f64> {
        self.pass.scalar_output().to_owned()
    }

    /// Gradient w.r.t. the action columns for per-row output weights `upstream`.
    pub fn action_gradient(&self, critic: &Mlp, upstream: &Array1<f64>) -> Result<Array2<f64>> {
        let up = upstream.view().insert_axis(Axis(1));
        let dx = critic.input_gradient(&self.pass, up)?;
        Ok(dx.slice(s![.., self.obs_dim..]).to_owned())
    }
}

pub fn critic_input(obs: ArrayView2<f64>, actions: ArrayView2<f64>) -> Result<Array2<f64>> {
    if obs.nrows() != actions.nrows() {
        return Err(Error::Shape {
            context: "critic batch rows",
            expected: obs.nrows(),
            actual: actions.nrows(),
        });
    }
    concatenate(Axis(1), &[obs, actions]).map_err(|e| Error::InvalidArgument(e.to_string()))
}

/// Scalar critic values at `(obs, actions)`.
pub fn critic_values(critic: &Mlp, obs: ArrayView2<f64>, actions: ArrayView2<f64>) -> Result<Array1<f64>> {
    let out = critic.predict(critic_input(obs, actions)?.view())?;
    Ok(out.column(0).to_owned())
}

/// Runs the actor on `obs`, lets `objective` turn the proposed actions into a
/// loss and its action gradient, and backpropagates into the actor.
pub fn policy_gradient<F>(actor: &Mlp, obs: ArrayView2<f64>, objective: F) -> Result<(f64, Gradient)>
where
    F: FnOnce(&Array2<f64>) -> Result<(f64, Array2<f64>)>,
{
    let pass = actor.forward_batch(obs)?;
    let (loss, d_actions) = objective(pass.output())?;
    let (grad, _) = actor.backward(&pass, d_actions.view())?;
    Ok((loss, grad))
}

/// Fits a scalar-headed network to `targets` by one Adam step on the mean
/// squared error. Returns the loss before the step.
pub fn regress(net: &mut TrackedNet, input: ArrayView2<f64>, targets: &Array1<f64>, lr: f64) -> Result<f64> {
    let pass = net.online.forward_batch(input)?;
    let pred = pass.scalar_output();
    let n = targets.len() as f64;
    let err = &pred - targets;
    let loss = err.mapv(|e| e * e).sum() / n;
    if !loss.is_finite() {
        return Err(Error::NonFinite("regression loss"));
    }
    let up = err.mapv(|e| 2.0 * e / n).insert_axis(Axis(1));
    let (grad, _) = net.online.backward(&pass, up.view())?;
    net.apply(&grad, lr)?;
    Ok(loss)
}

pub fn clip_unit(v: f64) -> f64 {
    v.clamp(-1.0, 1.0)
}

pub fn gaussian<R: Rng + ?Sized>(rng: &mut R, std: f64) -> f64 {
    if std == 0.0 {
        return 0.0;
    }
    Normal::new(0.0, std).map(|d| d.sample(rng)).unwrap_or(0.0)
}

fn ensure_finite(values: &Array1<f64>, what: &'static str) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}

#[derive(Debug, Clone)]
pub struct AgentCore {
    pub config: BackboneConfig,
    pub actor: TrackedNet,
    pub critic1: TrackedNet,
    pub critic2: TrackedNet,
    pub cost_critic: TrackedNet,
    pub risk_critic: Option<TrackedNet>,
    updates: u64,
}

impl AgentCore {
    /// Networks are drawn from `rng` in a fixed order: actor, critic 1,
    /// critic 2, cost critic, then the risk critic when requested.
    pub fn new<R: Rng + ?Sized>(config: BackboneConfig, with_risk_critic: bool, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let actor = Mlp::new(&config.actor_sizes(), Activation::Tanh, rng)?;
        let critic1 = Mlp::new(&config.critic_sizes(), Activation::Identity, rng)?;
        let critic2 = Mlp::new(&config.critic_sizes(), Activation::Identity, rng)?;
        let cost_critic = Mlp::new(&config.critic_sizes(), Activation::Identity, rng)?;
        let risk_critic = if with_risk_critic {
            Some(TrackedNet::new(Mlp::new(&config.critic_sizes(), Activation::Sigmoid, rng)?))
        } else {
            None
        };
        Ok(AgentCore {
            config,
            actor: TrackedNet::new(actor),
            critic1: TrackedNet::new(critic1),
            critic2: TrackedNet::new(critic2),
            cost_critic: TrackedNet::new(cost_critic),
            risk_critic,
            updates: 0,
        })
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    /// Advances the update counter; true when the actor is due this update.
    pub fn begin_update(&mut self) -> bool {
        self.updates += 1;
        self.updates.is_multiple_of(u64::from(self.config.policy_delay))
    }

    pub fn policy(&self, obs: &[f64]) -> Result<Vec<f64>> {
        self.actor.online.forward(obs)
    }

    /// `clip(pi(s) + noise, -1, 1)`, noise drawn only when exploring.
    pub fn select_action<R: Rng + ?Sized>(&self, obs: &[f64], explore: bool, rng: &mut R) -> Result<Vec<f64>> {
        let mut a = self.policy(obs)?;
        if explore {
            let sigma = self.config.exploration_noise;
            for v in &mut a {
                *v = clip_unit(*v + gaussian(rng, sigma));
            }
        }
        Ok(a)
    }

    /// Target-policy actions with clipped smoothing noise.
    pub fn target_actions<R: Rng + ?Sized>(&self, next_obs: ArrayView2<f64>, rng: &mut R) -> Result<Array2<f64>> {
        let mut a = self.actor.target.predict(next_obs)?;
        let (std, clip) = (self.config.target_noise, self.config.target_noise_clip);
        a.mapv_inplace(|v| clip_unit(v + gaussian(rng, std).clamp(-clip, clip)));
        Ok(a)
    }

    /// `r + gamma (1 - d) min(Q1', Q2')(s', a')`.
    pub fn critic_target(&self, batch: &Batch, next_actions: ArrayView2<f64>) -> Result<Array1<f64>> {
        let q1 = critic_values(&self.critic1.target, batch.next_obs.view(), next_actions)?;
        let q2 = critic_values(&self.critic2.target, batch.next_obs.view(), next_actions)?;
        let g = self.config.gamma;
        let y = ndarray::Zip::from(&batch.rewards)
            .and(&batch.dones)
            .and(&q1)
            .and(&q2)
            .map_collect(|&r, &d, &a, &b| r + g * (1.0 - d) * a.min(b));
        ensure_finite(&y, "critic target")?;
        Ok(y)
    }

    /// `c + gamma_c (1 - d) Q_c'(s', a')`.
    pub fn cost_target(&self, batch: &Batch, next_actions: ArrayView2<f64>) -> Result<Array1<f64>> {
        let qc = critic_values(&self.cost_critic.target, batch.next_obs.view(), next_actions)?;
        let g = self.config.cost_gamma;
        let y = ndarray::Zip::from(&batch.costs)
            .and(&batch.dones)
            .and(&qc)
            .map_collect(|&c, &d, &q| c + g * (1.0 - d) * q);
        ensure_finite(&y, "cost target")?;
        Ok(y)
    }

    /// `c + (1 - c) gamma_c (1 - d) Q_risk'(s', a')`; exactly 1 wherever `c = 1`.
    pub fn risk_target(&self, batch: &Batch, next_actions: ArrayView2<f64>) -> Result<Array1<f64>> {
        let risk = self.risk()?;
        let qr = critic_values(&risk.target, batch.next_obs.view(), next_actions)?;
        let g = self.config.cost_gamma;
        let y = ndarray::Zip::from(&batch.costs)
            .and(&batch.dones)
            .and(&qr)
            .map_collect(|&c, &d, &q| if c == 1.0 { 1.0 } else { c + (1.0 - c) * g * (1.0 - d) * q });
        ensure_finite(&y, "risk target")?;
        Ok(y)
    }

    fn risk(&self) -> Result<&TrackedNet> {
        self.risk_critic
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument("agent has no risk critic".into()))
    }

    /// One Adam step on both reward critics against the shared target.
    /// Returns the summed loss.
    pub fn update_critics(&mut self, batch: &Batch, next_actions: ArrayView2<f64>) -> Result<f64> {
        let y = self.critic_target(batch, next_actions)?;
        let input = critic_input(batch.obs.view(), batch.actions.view())?;
        let lr = self.config.critic_lr;
        let l1 = regress(&mut self.critic1, input.view(), &y, lr)?;
        let l2 = regress(&mut self.critic2, input.view(), &y, lr)?;
        Ok(l1 + l2)
    }

    pub fn update_cost_critic(&mut self, batch: &Batch, next_actions: ArrayView2<f64>) -> Result<f64> {
        let y = self.cost_target(batch, next_actions)?;
        let input = critic_input(batch.obs.view(), batch.actions.view())?;
        let lr = self.config.safe_critic_lr;
        regress(&mut self.cost_critic, input.view(), &y, lr)
    }

    pub fn update_risk_critic(&mut self, batch: &Batch, next_actions: ArrayView2<f64>) -> Result<f64> {
        let y = self.risk_target(batch, next_actions)?;
        let input = critic_input(batch.obs.view(), batch.actions.view())?;
        let lr = self.config.safe_critic_lr;
        let risk = self
            .risk_critic
            .as_mut()
            .ok_or_else(|| Error::InvalidArgument("agent has no risk critic".into()))?;
        regress(risk, input.view(), &y, lr)
    }

    /// Loss `mean(-Q1(s, pi(s)) + penalty(Q_c(s, pi(s))))` and its actor gradient.
    pub fn actor_objective(&self, obs: ArrayView2<f64>, penalty: Penalty<'_>) -> Result<(f64, Gradient)> {
        let n = obs.nrows();
        if let Penalty::PerSample(w) = penalty {
            if w.len() != n {
                return Err(Error::Shape {
                    context: "per-sample multipliers",
                    expected: n,
                    actual: w.len(),
                });
            }
        }
        let inv_n = 1.0 / n as f64;
        policy_gradient(&self.actor.online, obs, |actions| {
            let q_probe = CriticProbe::new(&self.critic1.online, obs, actions.view())?;
            let q = q_probe.values();
            let mut d_actions = q_probe.action_gradient(&self.critic1.online, &Array1::from_elem(n, -inv_n))?;
            let mut loss = -q.sum();
            if !matches!(penalty, Penalty::None) {
                let c_probe = CriticProbe::new(&self.cost_critic.online, obs, actions.view())?;
                let qc = c_probe.values();
                loss += qc.iter().enumerate().map(|(i, &v)| penalty.value(i, v)).sum::<f64>();
                let slopes: Array1<f64> = qc.iter().enumerate().map(|(i, &v)| penalty.slope(i, v) * inv_n).collect();
                if slopes.iter().any(|&s| s != 0.0) {
                    d_actions += &c_probe.action_gradient(&self.cost_critic.online, &slopes)?;
                }
            }
            Ok((loss * inv_n, d_actions))
        })
    }

    /// Same loss as [`AgentCore::actor_objective`], forward only.
    pub fn actor_loss(&self, obs: ArrayView2<f64>, penalty: Penalty<'_>) -> Result<f64> {
        let actions = self.actor.online.predict(obs)?;
        let q = critic_values(&self.critic1.online, obs, actions.view())?;
        let mut total = -q.sum();
        if !matches!(penalty, Penalty::None) {
            let qc = critic_values(&self.cost_critic.online, obs, actions.view())?;
            total += qc.iter().enumerate().map(|(i, &v)| penalty.value(i, v)).sum::<f64>();
        }
        Ok(total / obs.nrows() as f64)
    }

    /// `Q_c(s, pi(s))` under the online actor and cost critic.
    pub fn policy_cost_values(&self, obs: ArrayView2<f64>) -> Result<Array1<f64>> {
        let actions = self.actor.online.predict(obs)?;
        critic_values(&self.cost_critic.online, obs, actions.view())
    }

    /// Applies one penalized actor step and then Polyak-updates every target.
    pub fn actor_step(&mut self, obs: ArrayView2<f64>, penalty: Penalty<'_>) -> Result<f64> {
        let (loss, grad) = self.actor_objective(obs, penalty)?;
        let lr = self.config.actor_lr;
        self.actor.apply(&grad, lr)?;
        self.soft_update_targets()?;
        Ok(loss)
    }

    pub fn update_actor_unconstrained(&mut self, batch: &Batch) -> Result<f64> {
        self.actor_step(batch.obs.view(), Penalty::None)
    }

    pub fn soft_update_targets(&mut self) -> Result<()> {
        let tau = self.config.tau;
        self.actor.track(tau)?;
        self.critic1.track(tau)?;
        self.critic2.track(tau)?;
        self.cost_critic.track(tau)?;
        if let Some(r) = self.risk_critic.as_mut() {
            r.track(tau)?;
        }
        Ok(())
    }
}
