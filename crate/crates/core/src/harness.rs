//! Training loop, periodic evaluation, metrics and CSV output.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::agent::{build_agent, Agent, StepContext};
use crate::config::HyperConfig;
use crate::env::{EnvState, SpeedLimit, ACTION_DIM, OBS_DIM};
use crate::error::{Error, Result};
use crate::replay::{ReplayBuffer, Transition};

pub const CSV_HEADER: [&str; 5] = ["step", "eval_ep_reward", "eval_ep_cost", "train_cost_rate", "wall_seconds"];

/// Share of training, counted from the end, that forms the final window.
pub const FINAL_WINDOW: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsRecord {
    pub step: u64,
    pub eval_ep_reward: f64,
    pub eval_ep_cost: f64,
    /// Cumulative unsafe training steps over cumulative training steps.
    pub train_cost_rate: f64,
    pub wall_seconds: f64,
}

impl MetricsRecord {
    pub fn check(&self, horizon: u32) -> Result<()> {
        let breach = |m: String| Err(Error::InvalidArgument(format!("metrics at step {}: {m}", self.step)));
        if !(0.0..=1.0).contains(&self.train_cost_rate) {
            return breach(format!("cost rate {} outside [0, 1]", self.train_cost_rate));
        }
        if !(0.0..=f64::from(horizon)).contains(&self.eval_ep_cost) {
            return breach(format!("episode cost {} outside [0, {horizon}]", self.eval_ep_cost));
        }
        if !self.eval_ep_reward.is_finite() {
            return breach("non-finite episode reward".into());
        }
        Ok(())
    }
}

pub fn cost_rate(cum_cost: u64, cum_steps: u64) -> Result<f64> {
    if cum_steps == 0 {
        return Err(Error::InvalidArgument("cost rate needs at least one step".into()));
    }
    if cum_cost > cum_steps {
        return Err(Error::InvalidArgument("more unsafe steps than steps".into()));
    }
    Ok(cum_cost as f64 / cum_steps as f64)
}

/// Running undiscounted sums for one episode.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct EpisodeTally {
    pub reward: f64,
    pub cost: f64,
    pub steps: u32,
}

impl EpisodeTally {
    pub fn add(&mut self, reward: f64, cost: f64) {
        self.reward += reward;
        self.cost += cost;
        self.steps += 1;
    }
}

/// Independent random streams derived from one seed.
#[derive(Debug, Clone)]
pub struct Streams {
    pub env: ChaCha8Rng,
    pub exploration: ChaCha8Rng,
    pub init: ChaCha8Rng,
    pub sampling: ChaCha8Rng,
    pub eval: ChaCha8Rng,
}

impl Streams {
    pub fn new(seed: u64) -> Self {
        let stream = |id: u64| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(id);
            rng
        };
        Streams {
            env: stream(1),
            exploration: stream(2),
            init: stream(3),
            sampling: stream(4),
            eval: stream(5),
        }
    }
}

/// Plays `episodes` noise-free episodes from seeds `seed, seed + 1, ...` and
/// returns mean episode reward and mean episode cost.
pub fn evaluate(
    agent: &dyn Agent,
    env: &SpeedLimit,
    episodes: u32,
    seed: u64,
    step: u64,
    total_steps: u64,
) -> Result<(f64, f64)> {
    if episodes == 0 {
        return Err(Error::InvalidArgument("evaluation needs at least one episode".into()));
    }
    // Never drawn from: exploration is off.
    let mut idle = ChaCha8Rng::seed_from_u64(0);
    let (mut reward, mut cost) = (0.0, 0.0);
    for k in 0..episodes {
        let (mut state, mut obs) = env.reset(seed.wrapping_add(u64::from(k)));
        let mut tally = EpisodeTally::default();
        let mut prev_cost = 0.0;
        loop {
            let ctx = StepContext {
                step,
                total_steps,
                prev_cost,
            };
            let p = agent.propose(&obs, &ctx, false, &mut idle)?;
            let (next, r) = env.step(&state, &p.action)?;
            tally.add(r.reward, r.cost);
            prev_cost = r.cost;
            state = next;
            obs = r.next_obs;
            if r.done {
                break;
            }
        }
        reward += tally.reward;
        cost += tally.cost;
    }
    Ok((reward / f64::from(episodes), cost / f64::from(episodes)))
}

/// One training run, advanced a step at a time.
pub struct Trainer {
    cfg: HyperConfig,
    env: SpeedLimit,
    agent: Box<dyn Agent>,
    buffer: ReplayBuffer,
    streams: Streams,
    eval_seed: u64,
    state: EnvState,
    obs: Vec<f64>,
    prev_cost: f64,
    step: u64,
    cum_cost: u64,
    interventions: u64,
    started: Instant,
    records: Vec<MetricsRecord>,
}

impl Trainer {
    pub fn new(cfg: &HyperConfig) -> Result<Self> {
        cfg.validate()?;
        let mut streams = Streams::new(cfg.seed);
        let agent = build_agent(cfg, &mut streams.init)?;
        let env = SpeedLimit::new(cfg.env);
        let (state, obs) = env.reset(streams.env.next_u64());
        let eval_seed = streams.eval.next_u64();
        Ok(Trainer {
            cfg: cfg.clone(),
            env,
            agent,
            buffer: ReplayBuffer::new(cfg.replay_capacity, OBS_DIM, ACTION_DIM)?,
            streams,
            eval_seed,
            state,
            obs,
            prev_cost: 0.0,
            step: 0,
            cum_cost: 0,
            interventions: 0,
            started: Instant::now(),
            records: Vec::new(),
        })
    }

    pub fn agent(&self) -> &dyn Agent {
        self.agent.as_ref()
    }

    pub fn buffer(&self) -> &ReplayBuffer {
        &self.buffer
    }

    pub fn steps_done(&self) -> u64 {
        self.step
    }

    pub fn records(&self) -> &[MetricsRecord] {
        &self.records
    }

    /// Steps where the safety mechanism changed the task action.
    pub fn interventions(&self) -> u64 {
        self.interventions
    }

    fn context(&self) -> StepContext {
        StepContext {
            step: self.step,
            total_steps: self.cfg.total_steps,
            prev_cost: self.prev_cost,
        }
    }

    /// Evaluates the current policy and appends a record.
    pub fn record(&mut self) -> Result<MetricsRecord> {
        let (reward, cost) = evaluate(
            self.agent.as_ref(),
            &self.env,
            self.cfg.eval_episodes,
            self.eval_seed,
            self.step,
            self.cfg.total_steps,
        )?;
        let rec = MetricsRecord {
            step: self.step,
            eval_ep_reward: reward,
            eval_ep_cost: cost,
            train_cost_rate: if self.step == 0 { 0.0 } else { cost_rate(self.cum_cost, self.step)? },
            wall_seconds: if self.cfg.record_wall_time {
                self.started.elapsed().as_secs_f64()
            } else {
                0.0
            },
        };
        rec.check(self.env.horizon())?;
        log::info!(
            "{} seed {} step {}: reward {:.2} cost {:.2} cost rate {:.4}",
            self.cfg.algorithm,
            self.cfg.seed,
            rec.step,
            rec.eval_ep_reward,
            rec.eval_ep_cost,
            rec.train_cost_rate
        );
        self.records.push(rec);
        Ok(rec)
    }

    /// Acts, stores the transition, then runs one update once past the
    /// random-action phase.
    pub fn step(&mut self) -> Result<()> {
        let ctx = self.context();
        let proposal = if self.step < self.cfg.start_steps {
            let rng = &mut self.streams.exploration;
            let a: Vec<f64> = (0..ACTION_DIM).map(|_| rng.random_range(-1.0..=1.0)).collect();
            crate::agent::Proposal::plain(a)
        } else {
            self.agent.propose(&self.obs, &ctx, true, &mut self.streams.exploration)?
        };
        if proposal.intervened {
            self.interventions += 1;
        }
        let (next, r) = self.env.step(&self.state, &proposal.action)?;
        self.buffer.push(Transition {
            obs: std::mem::take(&mut self.obs),
            action: proposal.action,
            next_obs: r.next_obs.clone(),
            reward: r.reward,
            cost: r.cost,
            done: r.done,
            prev_cost: self.prev_cost,
            task_action: proposal.task_action,
            risk_action: proposal.risk_action,
        })?;
        if r.cost > 0.0 {
            self.cum_cost += 1;
        }
        if r.done {
            let (state, obs) = self.env.reset(self.streams.env.next_u64());
            self.state = state;
            self.obs = obs;
            self.prev_cost = 0.0;
        } else {
            self.state = next;
            self.obs = r.next_obs;
            self.prev_cost = r.cost;
        }
        if self.step >= self.cfg.start_steps {
            let batch = self.buffer.sample_batch(self.cfg.batch_size, &mut self.streams.sampling)?;
            self.agent.update(&batch, &ctx, &mut self.streams.sampling)?;
        }
        self.step += 1;
        Ok(())
    }

    /// Trains to `total_steps`, recording at step 0 and every `eval_interval`.
    pub fn run(mut self) -> Result<(Vec<MetricsRecord>, Box<dyn Agent>)> {
        let at = |step: u64, e: Error| Error::AtStep {
            step,
            source: Box::new(e),
        };
        self.record().map_err(|e| at(0, e))?;
        while self.step < self.cfg.total_steps {
            let step = self.step;
            self.step().map_err(|e| at(step, e))?;
            if self.step.is_multiple_of(self.cfg.eval_interval) {
                self.record().map_err(|e| at(step, e))?;
            }
        }
        Ok((self.records, self.agent))
    }
}

pub fn run_experiment(cfg: &HyperConfig) -> Result<Vec<MetricsRecord>> {
    Ok(Trainer::new(cfg)?.run()?.0)
}

pub fn to_csv_string(records: &[MetricsRecord]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CSV_HEADER)?;
    for r in records {
        w.write_record([
            r.step.to_string(),
            r.eval_ep_reward.to_string(),
            r.eval_ep_cost.to_string(),
            r.train_cost_rate.to_string(),
            r.wall_seconds.to_string(),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn write_csv(path: &Path, records: &[MetricsRecord]) -> Result<()> {
    fs::write(path, to_csv_string(records)?)?;
    Ok(())
}

pub fn read_csv(path: &Path) -> Result<Vec<MetricsRecord>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for row in r.records() {
        let row = row?;
        let field = |i: usize| -> Result<f64> {
            row.get(i)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| Error::Parse {
                    line: out.len() + 2,
                    message: format!("bad `{}` column", CSV_HEADER[i]),
                })
        };
        out.push(MetricsRecord {
            step: field(0)? as u64,
            eval_ep_reward: field(1)?,
            eval_ep_cost: field(2)?,
            train_cost_rate: field(3)?,
            wall_seconds: field(4)?,
        });
    }
    Ok(out)
}

/// Records from the last tenth of training.
pub fn final_window(records: &[MetricsRecord], total_steps: u64) -> &[MetricsRecord] {
    let from = (1.0 - FINAL_WINDOW) * total_steps as f64;
    let start = records.iter().position(|r| r.step as f64 >= from).unwrap_or(records.len());
    &records[start..]
}

/// Final-window means for one run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunScore {
    pub eval_ep_reward: f64,
    pub eval_ep_cost: f64,
    pub train_cost_rate: f64,
}

pub fn score(records: &[MetricsRecord], total_steps: u64) -> Result<RunScore> {
    let w = final_window(records, total_steps);
    if w.is_empty() {
        return Err(Error::InvalidArgument("no records in the final window".into()));
    }
    let mean = |f: fn(&MetricsRecord) -> f64| w.iter().map(f).sum::<f64>() / w.len() as f64;
    Ok(RunScore {
        eval_ep_reward: mean(|r| r.eval_ep_reward),
        eval_ep_cost: mean(|r| r.eval_ep_cost),
        train_cost_rate: mean(|r| r.train_cost_rate),
    })
}

/// Mean with a normal 95% half-width, `1.96 sd / sqrt(n)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub mean: f64,
    pub half_width: f64,
    pub n: usize,
}

impl Interval {
    pub fn of(values: &[f64]) -> Result<Self> {
        let n = values.len();
        if n == 0 {
            return Err(Error::InvalidArgument("interval of no values".into()));
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let half_width = if n > 1 {
            let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            1.96 * var.sqrt() / (n as f64).sqrt()
        } else {
            0.0
        };
        Ok(Interval { mean, half_width, n })
    }
}

impl std::fmt::Display for Interval {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:.4} ± {:.4} (n={})", self.mean, self.half_width, self.n)
    }
}

/// Text summary across runs of the same configuration.
pub fn summary_text(label: &str, scores: &[RunScore]) -> Result<String> {
    let pick = |f: fn(&RunScore) -> f64| Interval::of(&scores.iter().map(f).collect::<Vec<_>>());
    let mut out = format!("# {label}: final {:.0}% of training\n", FINAL_WINDOW * 100.0);
    out.push_str(&format!("eval_ep_reward = {}\n", pick(|s| s.eval_ep_reward)?));
    out.push_str(&format!("eval_ep_cost = {}\n", pick(|s| s.eval_ep_cost)?));
    out.push_str(&format!("train_cost_rate = {}\n", pick(|s| s.train_cost_rate)?));
    Ok(out)
}

/// Turns a value into something safe to put in a file name.
fn file_tag(value: &str) -> String {
    value
        .trim()
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || matches!(c, '.' | '-' | '+') { c } else { '_' })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRun {
    pub value: String,
    pub path: PathBuf,
    pub records: Vec<MetricsRecord>,
}

/// One run per value of `key`, everything else taken from `base`. Writes
/// `<algorithm>_<key>-<value>.csv` per run and `summary.txt` into `out_dir`.
pub fn sweep(base: &HyperConfig, key: &str, values: &[String], out_dir: &Path) -> Result<Vec<SweepRun>> {
    if !HyperConfig::is_key(key) {
        return Err(Error::UnknownKey(key.to_string()));
    }
    if values.is_empty() {
        return Err(Error::InvalidArgument("sweep needs at least one value".into()));
    }
    let configs = values
        .iter()
        .map(|v| {
            let mut cfg = base.clone();
            cfg.set(key, v)?;
            cfg.validate()?;
            Ok(cfg)
        })
        .collect::<Result<Vec<_>>>()?;
    fs::create_dir_all(out_dir)?;
    let mut runs = Vec::new();
    let mut summary = fs::File::create(out_dir.join("summary.txt"))?;
    for (cfg, value) in configs.iter().zip(values) {
        let records = run_experiment(cfg)?;
        let path = out_dir.join(format!("{}_{key}-{}.csv", cfg.algorithm, file_tag(value)));
        write_csv(&path, &records)?;
        let s = score(&records, cfg.total_steps)?;
        summary.write_all(summary_text(&format!("{key} = {}", value.trim()), &[s])?.as_bytes())?;
        runs.push(SweepRun {
            value: value.trim().to_string(),
            path,
            records,
        });
    }
    Ok(runs)
}
