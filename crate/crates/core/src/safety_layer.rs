//! Action correction against a learned linear single-step cost model
//! `c_t ≈ g(s)·a + c_{t-1}`, solved in closed form.

use std::cell::Cell;

use ndarray::{Array2, ArrayView2, Axis, Zip};
use rand::{Rng, RngCore};

use crate::agent::{Agent, Phase, Proposal, StepContext, UpdateReport};
use crate::backbone::{clip_unit, AgentCore};
use crate::config::{Algorithm, HyperConfig};
use crate::error::{ensure_len, Error, Result};
use crate::nn::{Activation, Adam, Mlp};
use crate::replay::Batch;

/// Squared-norm floor below which `g` is treated as degenerate.
pub const DEGENERATE_NORM_SQ: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProjectionStatus {
    /// Constraint already held; the input is returned unchanged.
    Inactive,
    /// Corrected. `clipped` is set when the closed form left the action box.
    Projected { clipped: bool },
    /// Constraint violated but `g` too small to project along.
    Degenerate,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    pub action: Vec<f64>,
    /// Closed-form result before clipping to `[-1, 1]`.
    pub unclipped: Vec<f64>,
    pub status: ProjectionStatus,
}

/// Solves `min ½‖a − μ‖²  s.t.  g·a + c_prev ≤ ε`:
/// `a* = μ − [(g·μ + c_prev − ε) / g·g]⁺ g`, then clips to the action box.
pub fn project_halfspace(g: &[f64], mu: &[f64], prev_cost: f64, threshold: f64) -> Result<Projection> {
    ensure_len("projection direction", mu.len(), g.len())?;
    let dot: f64 = g.iter().zip(mu).map(|(g, m)| g * m).sum();
    let violation = dot + prev_cost - threshold;
    if !violation.is_finite() {
        return Err(Error::NonFinite("projection"));
    }
    if violation <= 0.0 {
        return Ok(Projection {
            action: mu.to_vec(),
            unclipped: mu.to_vec(),
            status: ProjectionStatus::Inactive,
        });
    }
    let norm_sq: f64 = g.iter().map(|v| v * v).sum();
    if norm_sq < DEGENERATE_NORM_SQ {
        return Ok(Projection {
            action: mu.to_vec(),
            unclipped: mu.to_vec(),
            status: ProjectionStatus::Degenerate,
        });
    }
    let step = violation / norm_sq;
    let unclipped: Vec<f64> = mu.iter().zip(g).map(|(m, g)| m - step * g).collect();
    let action: Vec<f64> = unclipped.iter().map(|&v| clip_unit(v)).collect();
    let clipped = action != unclipped;
    Ok(Projection {
        action,
        unclipped,
        status: ProjectionStatus::Projected { clipped },
    })
}

#[derive(Debug, Clone)]
pub struct LinearCostModel {
    /// Maps an observation to `g(s)`, one entry per action dimension.
    pub net: Mlp,
    optimizer: Adam,
    pub threshold: f64,
    pub lr: f64,
}

impl LinearCostModel {
    pub fn new(net: Mlp, threshold: f64, lr: f64) -> Result<Self> {
        if !(threshold > 0.0) {
            return Err(Error::InvalidArgument("instantaneous threshold must be positive".into()));
        }
        Ok(LinearCostModel {
            optimizer: Adam::new(&net),
            net,
            threshold,
            lr,
        })
    }

    pub fn direction(&self, obs: &[f64]) -> Result<Vec<f64>> {
        self.net.forward(obs)
    }

    /// `g(s)·a + c_prev` for every row.
    pub fn predict(&self, obs: ArrayView2<f64>, actions: ArrayView2<f64>, prev_costs: &[f64]) -> Result<Vec<f64>> {
        let g = self.net.predict(obs)?;
        if g.dim() != actions.dim() {
            return Err(Error::Shape {
                context: "cost model actions",
                expected: g.ncols(),
                actual: actions.ncols(),
            });
        }
        ensure_len("cost model previous costs", g.nrows(), prev_costs.len())?;
        Ok((&g * &actions)
            .sum_axis(Axis(1))
            .iter()
            .zip(prev_costs)
            .map(|(p, c)| p + c)
            .collect())
    }

    /// One Adam step on `mean (g(s)·a + c_prev − c)²`. Returns the loss before the step.
    pub fn train(&mut self, obs: ArrayView2<f64>, actions: ArrayView2<f64>, prev_costs: &[f64], costs: &[f64]) -> Result<f64> {
        let n = obs.nrows();
        ensure_len("cost model targets", n, costs.len())?;
        ensure_len("cost model previous costs", n, prev_costs.len())?;
        let pass = self.net.forward_batch(obs)?;
        let g = pass.output();
        if g.dim() != actions.dim() {
            return Err(Error::Shape {
                context: "cost model actions",
                expected: g.ncols(),
                actual: actions.ncols(),
            });
        }
        let pred = (g * &actions).sum_axis(Axis(1));
        let mut loss = 0.0;
        let mut residual = Vec::with_capacity(n);
        for i in 0..n {
            let e = pred[i] + prev_costs[i] - costs[i];
            loss += e * e;
            residual.push(2.0 * e / n as f64);
        }
        loss /= n as f64;
        if !loss.is_finite() {
            return Err(Error::NonFinite("cost model loss"));
        }
        let mut upstream = Array2::zeros(actions.raw_dim());
        Zip::indexed(&mut upstream).for_each(|(i, j), u| *u = residual[i] * actions[[i, j]]);
        let (grad, _) = self.net.backward(&pass, upstream.view())?;
        self.optimizer.step(&mut self.net, &grad, self.lr)?;
        Ok(loss)
    }

    pub fn train_batch(&mut self, batch: &Batch) -> Result<f64> {
        let prev = batch.prev_costs.to_vec();
        let costs = batch.costs.to_vec();
        self.train(batch.obs.view(), batch.actions.view(), &prev, &costs)
    }

    pub fn project(&self, obs: &[f64], raw: &[f64], prev_cost: f64) -> Result<Projection> {
        let g = self.direction(obs)?;
        project_halfspace(&g, raw, prev_cost, self.threshold)
    }
}

#[derive(Debug, Clone)]
pub struct SafetyLayerAgent {
    pub core: AgentCore,
    pub model: LinearCostModel,
    pub warmup_ratio: f64,
    degenerate: Cell<u64>,
    clipped: Cell<u64>,
}

impl SafetyLayerAgent {
    /// The cost model is initialized after the backbone networks.
    pub fn new<R: Rng + ?Sized>(cfg: &HyperConfig, rng: &mut R) -> Result<Self> {
        let backbone = cfg.backbone();
        let core = AgentCore::new(backbone.clone(), false, rng)?;
        let net = Mlp::new(&backbone.state_net_sizes(backbone.action_dim), Activation::Identity, rng)?;
        Ok(SafetyLayerAgent {
            core,
            model: LinearCostModel::new(net, cfg.cost_limit, cfg.safe_critic_lr)?,
            warmup_ratio: cfg.warmup_ratio,
            degenerate: Cell::new(0),
            clipped: Cell::new(0),
        })
    }

    /// Projections skipped because `g` was nearly zero.
    pub fn degenerate_count(&self) -> u64 {
        self.degenerate.get()
    }

    /// Projections whose closed form had to be clipped back into the box.
    pub fn clipped_count(&self) -> u64 {
        self.clipped.get()
    }

    /// Backbone action during warm-up, projected afterwards.
    pub fn act(&self, raw: Vec<f64>, obs: &[f64], ctx: &StepContext) -> Result<Proposal> {
        if ctx.in_warmup(self.warmup_ratio) {
            return Ok(Proposal::plain(raw));
        }
        let p = self.model.project(obs, &raw, ctx.prev_cost)?;
        let intervened = match p.status {
            ProjectionStatus::Inactive => false,
            ProjectionStatus::Degenerate => {
                self.degenerate.set(self.degenerate.get() + 1);
                false
            }
            ProjectionStatus::Projected { clipped } => {
                if clipped {
                    self.clipped.set(self.clipped.get() + 1);
                }
                true
            }
        };
        Ok(Proposal {
            task_action: raw.clone(),
            risk_action: p.action.clone(),
            action: p.action,
            intervened,
        })
    }
}

impl Agent for SafetyLayerAgent {
    fn algorithm(&self) -> Algorithm {
        Algorithm::SafetyLayer
    }

    fn core(&self) -> &AgentCore {
        &self.core
    }

    fn propose(&self, obs: &[f64], ctx: &StepContext, explore: bool, rng: &mut dyn RngCore) -> Result<Proposal> {
        let raw = self.core.select_action(obs, explore, rng)?;
        self.act(raw, obs, ctx)
    }

    fn update(&mut self, batch: &Batch, _ctx: &StepContext, rng: &mut dyn RngCore) -> Result<UpdateReport> {
        let due = self.core.begin_update();
        let next = self.core.target_actions(batch.next_obs.view(), rng)?;
        let mut report = UpdateReport {
            critic_loss: self.core.update_critics(batch, next.view())?,
            phases: vec![Phase::RewardCritics],
            ..UpdateReport::default()
        };
        report.safety_loss = Some(self.model.train_batch(batch)?);
        report.phases.push(Phase::CostModel);
        if due {
            report.actor_loss = Some(self.core.update_actor_unconstrained(batch)?);
            report.phases.push(Phase::Actor);
        }
        Ok(report)
    }
}
