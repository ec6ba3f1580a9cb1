//! Episode collection, TD learning, the meta step on the hierarchy policy and
//! the outer training loop.

mod buffer;
mod config;
mod learner;
mod rollout;

pub use buffer::{mean_return, Episode, Observations, ReplayBuffer, State, Transition};
pub use config::TrainerConfig;
pub use learner::{meta_reward, FlatBatch, Learner, TargetNets, TdLoss};
pub use rollout::{collect_episode, evaluate_policy, EvalResult, RolloutRngs};

use std::collections::BTreeMap;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::envs::{make_env, DecPomdp};
use crate::error::Result;

/// Stream ids of the per-purpose generators derived from the run seed.
pub mod streams {
    pub const ENV: u64 = 1;
    pub const EXPLORE: u64 = 2;
    pub const NOISE: u64 = 3;
    pub const REPLAY: u64 = 4;
    pub const INIT: u64 = 5;
    pub const EVAL: u64 = 6;
}

/// Generator for one purpose; streams never overlap for a given seed.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// One line of the metrics log, written after each evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    pub env_steps: u64,
    pub train_steps: u64,
    pub eps: f64,
    /// Mean TD loss of the Q-learning steps since the previous row.
    pub td_loss: Option<f64>,
    /// Mean meta reward of the meta steps since the previous row.
    pub meta_reward: Option<f64>,
    pub eval_mean_return: f64,
    pub eval_win_rate: f64,
    pub wallclock_s: Option<f64>,
}

/// State-visitation counts of one evaluation round.
#[derive(Clone, Debug, PartialEq)]
pub struct VisitationRecord {
    pub eval_round: usize,
    pub env_steps: u64,
    pub counts: BTreeMap<usize, u64>,
}

/// Outer training loop.
pub struct Trainer {
    pub cfg: TrainerConfig,
    pub learner: Learner,
    pub buffer: ReplayBuffer,
    pub env_steps: u64,
    pub train_steps: u64,
    pub metrics: Vec<MetricsRow>,
    pub visitation: Vec<VisitationRecord>,
    env: Box<dyn DecPomdp>,
    eval_env: Box<dyn DecPomdp>,
    rngs: RolloutRngs,
    replay_rng: ChaCha8Rng,
    eval_rng: ChaCha8Rng,
    last_meta: Option<u64>,
    next_eval: u64,
    losses: Vec<f64>,
    meta_rewards: Vec<f64>,
    started: Instant,
}

impl Trainer {
    pub fn new(cfg: TrainerConfig) -> Result<Self> {
        cfg.validate()?;
        let env = make_env(&cfg.env)?;
        let eval_env = make_env(&cfg.env)?;
        let mut init_rng = stream_rng(cfg.seed, streams::INIT);
        let learner = Learner::new(&cfg, env.spec(), &mut init_rng)?;
        Ok(Self {
            learner,
            buffer: ReplayBuffer::new(cfg.buffer_capacity),
            env_steps: 0,
            train_steps: 0,
            metrics: Vec::new(),
            visitation: Vec::new(),
            env,
            eval_env,
            rngs: RolloutRngs {
                env: stream_rng(cfg.seed, streams::ENV),
                explore: stream_rng(cfg.seed, streams::EXPLORE),
                noise: stream_rng(cfg.seed, streams::NOISE),
            },
            replay_rng: stream_rng(cfg.seed, streams::REPLAY),
            eval_rng: stream_rng(cfg.seed, streams::EVAL),
            last_meta: None,
            next_eval: cfg.eval_interval,
            losses: Vec::new(),
            meta_rewards: Vec::new(),
            started: Instant::now(),
            cfg,
        })
    }

    pub fn env(&self) -> &dyn DecPomdp {
        self.env.as_ref()
    }

    pub fn eps(&self) -> f64 {
        self.cfg.eps_schedule().eps_at(self.env_steps)
    }

    /// Plays `count` episodes with the current policy and exploration rate.
    pub fn collect(&mut self, count: usize) -> Result<Vec<Episode>> {
        let mut out = Vec::with_capacity(count);
        for _ in 0..count {
            let eps = self.eps();
            let ep = collect_episode(
                self.env.as_mut(),
                &self.learner.utility,
                &self.learner.params,
                self.learner.noise_dim,
                eps,
                &mut self.rngs,
            )?;
            self.env_steps += ep.len() as u64;
            out.push(ep);
        }
        Ok(out)
    }

    fn after_train_step(&mut self, loss: f64) {
        self.losses.push(loss);
        self.train_steps += 1;
        if self.train_steps.is_multiple_of(self.cfg.target_update_interval) {
            self.learner.sync_targets();
        }
    }

    /// One Q-learning step on a batch drawn from the replay buffer.
    pub fn train_step(&mut self) -> Result<f64> {
        let batch = self.buffer.sample(self.cfg.batch_episodes, &mut self.replay_rng)?;
        let loss = self.learner.ql_step(&batch, true)?;
        self.after_train_step(loss);
        Ok(loss)
    }

    /// D0, exercise move on D0, D1, then the hierarchy update with reward
    /// `R1 - R0`. Both batches go to the replay buffer. Returns the meta reward.
    pub fn meta_iteration(&mut self) -> Result<f64> {
        let m = self.cfg.meta_batch();
        let d0 = self.collect(m)?;
        let r0 = mean_return(&d0);
        let refs: Vec<&Episode> = d0.iter().collect();
        for _ in 0..self.cfg.exercise_moves {
            let loss = self.learner.ql_step(&refs, false)?;
            self.after_train_step(loss);
        }
        let d1 = self.collect(m)?;
        let r1 = mean_return(&d1);
        let reward = meta_reward(r1, r0);
        self.learner.meta_update(&d0, reward)?;
        self.meta_rewards.push(reward);
        self.last_meta = Some(self.env_steps);
        self.buffer.extend(d0)?;
        self.buffer.extend(d1)?;
        Ok(reward)
    }

    fn meta_due(&self) -> bool {
        if !self.learner.mixer.kind().has_hierarchy() {
            return false;
        }
        match self.last_meta {
            None => true,
            Some(at) => self.env_steps - at >= self.cfg.meta_interval_env_steps,
        }
    }

    /// One outer iteration: data collection (a meta iteration when due),
    /// then one Q-learning step per new episode once the buffer holds a batch.
    pub fn iterate(&mut self) -> Result<()> {
        let before = self.buffer.total_added();
        if self.meta_due() {
            self.meta_iteration()?;
        } else {
            let eps = self.collect(1)?;
            self.buffer.extend(eps)?;
        }
        let fresh = self.buffer.total_added() - before;
        if self.buffer.len() >= self.cfg.batch_episodes {
            for _ in 0..fresh {
                self.train_step()?;
            }
        }
        Ok(())
    }

    /// Greedy evaluation on a separate environment instance.
    pub fn evaluate(&mut self) -> Result<EvalResult> {
        evaluate_policy(
            self.eval_env.as_mut(),
            &self.learner.utility,
            &self.learner.params,
            self.cfg.eval_episodes,
            &mut self.eval_rng,
        )
    }

    fn record_eval(&mut self, point: u64) -> Result<()> {
        let res = self.evaluate()?;
        let mean = |v: &mut Vec<f64>| {
            let m = (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
            v.clear();
            m
        };
        let row = MetricsRow {
            env_steps: point,
            train_steps: self.train_steps,
            eps: self.eps(),
            td_loss: mean(&mut self.losses),
            meta_reward: mean(&mut self.meta_rewards),
            eval_mean_return: res.mean_return,
            eval_win_rate: res.win_rate,
            wallclock_s: self.cfg.record_wallclock.then(|| self.started.elapsed().as_secs_f64()),
        };
        log::info!(
            "{} {} step {}: return {:.3}, win {:.2}",
            self.cfg.env,
            self.cfg.mixer,
            point,
            row.eval_mean_return,
            row.eval_win_rate
        );
        self.metrics.push(row);
        self.visitation.push(VisitationRecord {
            eval_round: self.visitation.len(),
            env_steps: point,
            counts: res.visitation,
        });
        Ok(())
    }

    /// Trains until `total_env_steps`.
    ///
    /// Evaluations are scheduled at every multiple of `eval_interval` and at
    /// `total_env_steps`; each runs at the first episode boundary at or past
    /// its point and is logged under the scheduled point, so runs with
    /// different episode lengths share one evaluation grid.
    pub fn run(&mut self) -> Result<()> {
        let total = self.cfg.total_env_steps;
        while self.env_steps < total {
            self.iterate()?;
            while self.next_eval <= self.env_steps.min(total) {
                self.record_eval(self.next_eval)?;
                self.next_eval += self.cfg.eval_interval;
            }
        }
        let last = self.metrics.last().map(|r| r.env_steps);
        if total > 0 && last != Some(total) {
            self.record_eval(total)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests;
