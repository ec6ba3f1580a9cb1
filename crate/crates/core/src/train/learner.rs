use rand::Rng;

use super::buffer::Episode;
use super::config::TrainerConfig;
use crate::agents::{UtilityNet, UTILITY_PREFIX};
use crate::envs::DecPomdpSpec;
use crate::error::{shape_err, Error, Result};
use crate::gradcore::{Matrix, ParamStore, RmspropState, Tape, Var};
use crate::mixer::{Mixer, Track, HIERARCHY_PREFIX, MIXER_PREFIX};

/// Frozen copy of `(phi, zeta, theta)` used for bootstrapped targets.
#[derive(Clone, Debug, PartialEq)]
pub struct TargetNets {
    pub params: ParamStore,
}

/// A recorded TD loss.
#[derive(Debug)]
pub struct TdLoss {
    pub value: f64,
    pub tape: Tape,
    pub loss: Var,
}

/// Transitions of a batch laid out as matrices, one row per timestep.
#[derive(Clone, Debug)]
pub struct FlatBatch {
    pub rows: usize,
    pub states: Matrix,
    pub next_states: Matrix,
    /// Utility inputs, `rows * n_agents` rows (agent-minor).
    pub inputs: Matrix,
    pub next_inputs: Matrix,
    pub actions: Vec<usize>,
    pub rewards: Vec<f64>,
    pub dones: Vec<bool>,
    pub noise: Matrix,
    pub noise_next: Matrix,
}

/// Networks, parameters, target copies and optimizer of one training run.
#[derive(Clone, Debug)]
pub struct Learner {
    pub utility: UtilityNet,
    pub mixer: Mixer,
    pub params: ParamStore,
    pub targets: TargetNets,
    pub opt: RmspropState,
    pub gamma: f64,
    pub meta_lr: f64,
    pub meta_grad_clip: f64,
    pub exercise_moves: usize,
    pub noise_dim: usize,
}

fn in_group(name: &str, prefix: &str) -> bool {
    name.len() > prefix.len() && name.starts_with(prefix) && name.as_bytes()[prefix.len()] == b'.'
}

impl Learner {
    pub fn new<R: Rng + ?Sized>(cfg: &TrainerConfig, spec: &DecPomdpSpec, rng: &mut R) -> Result<Self> {
        let utility = UtilityNet::new(spec.obs_dim, spec.action_count, spec.n_agents, cfg.utility_hidden);
        let mixer = Mixer::new(cfg.mixer, cfg.mixer_dims(spec));
        let mut params = ParamStore::new();
        utility.init(&mut params, rng)?;
        mixer.init(&mut params, rng)?;
        let targets = TargetNets { params: params.clone() };
        Ok(Self {
            utility,
            mixer,
            params,
            targets,
            opt: RmspropState::new(cfg.lr, cfg.rms_alpha, cfg.rms_eps),
            gamma: cfg.gamma,
            meta_lr: cfg.meta_lr,
            meta_grad_clip: cfg.meta_grad_clip,
            exercise_moves: cfg.exercise_moves,
            noise_dim: cfg.hierarchy_dim,
        })
    }

    pub fn sync_targets(&mut self) {
        self.targets.params = self.params.clone();
    }

    fn trains_hierarchy(&self) -> bool {
        let kind = self.mixer.kind();
        kind.has_hierarchy() && !kind.detaches_hierarchy()
    }

    pub fn flatten(&self, batch: &[&Episode]) -> Result<FlatBatch> {
        let n = self.utility.n_agents;
        let a = self.utility.action_count;
        let in_dim = self.utility.input_dim();
        let rows: usize = batch.iter().map(|e| e.len()).sum();
        if rows == 0 {
            return Err(Error::Empty("training batch"));
        }
        let mut states = Vec::new();
        let mut next_states = Vec::new();
        let mut inputs = Vec::with_capacity(rows * n * in_dim);
        let mut next_inputs = Vec::with_capacity(rows * n * in_dim);
        let mut actions = Vec::with_capacity(rows * n);
        let mut rewards = Vec::with_capacity(rows);
        let mut dones = Vec::with_capacity(rows);
        let mut noise = Vec::with_capacity(rows * self.noise_dim);
        let mut noise_next = Vec::with_capacity(rows * self.noise_dim);
        let encode = |out: &mut Vec<f64>, obs: &[f64], last: Option<usize>, id: usize| {
            out.extend_from_slice(obs);
            let base = out.len();
            out.resize(base + a + n, 0.0);
            if let Some(l) = last {
                out[base + l] = 1.0;
            }
            out[base + a + id] = 1.0;
        };
        for ep in batch {
            for t in &ep.transitions {
                if t.actions.len() != n || t.obs.len() != n || t.obs_next.len() != n {
                    return Err(shape_err("transition agents", n, t.actions.len()));
                }
                if t.eps_noise.len() != self.noise_dim || t.eps_noise_next.len() != self.noise_dim {
                    return Err(shape_err("stored hierarchy noise", self.noise_dim, t.eps_noise.len()));
                }
                states.extend_from_slice(&t.s);
                next_states.extend_from_slice(&t.s_next);
                for i in 0..n {
                    if t.obs[i].len() != self.utility.obs_dim || t.obs_next[i].len() != self.utility.obs_dim {
                        return Err(shape_err(format!("observation of agent {i}"), self.utility.obs_dim, t.obs[i].len()));
                    }
                    if t.actions[i] >= a {
                        return Err(Error::InvalidAction {
                            agent: i,
                            action: t.actions[i],
                            count: a,
                        });
                    }
                    encode(&mut inputs, &t.obs[i], t.last_actions.as_ref().map(|l| l[i]), i);
                    encode(&mut next_inputs, &t.obs_next[i], Some(t.actions[i]), i);
                    actions.push(t.actions[i]);
                }
                rewards.push(t.reward);
                dones.push(t.done);
                noise.extend_from_slice(&t.eps_noise);
                noise_next.extend_from_slice(&t.eps_noise_next);
            }
        }
        let state_dim = states.len() / rows;
        Ok(FlatBatch {
            rows,
            states: Matrix::from_vec(rows, state_dim, states)?,
            next_states: Matrix::from_vec(rows, state_dim, next_states)?,
            inputs: Matrix::from_vec(rows * n, in_dim, inputs)?,
            next_inputs: Matrix::from_vec(rows * n, in_dim, next_inputs)?,
            actions,
            rewards,
            dones,
            noise: Matrix::from_vec(rows, self.noise_dim, noise)?,
            noise_next: Matrix::from_vec(rows, self.noise_dim, noise_next)?,
        })
    }

    /// `max_a' Q_tot` at the next state under `params`, with the max taken
    /// per agent over the utilities before mixing.
    pub fn bootstrap_values(&self, fb: &FlatBatch, params: &ParamStore) -> Result<Vec<f64>> {
        let n = self.utility.n_agents;
        let mut tape = Tape::new();
        let x = tape.input(fb.next_inputs.clone());
        let q = self.utility.forward(&mut tape, params, x, false)?;
        let qv = tape.value(q);
        let best: Vec<f64> = (0..fb.rows * n)
            .map(|r| qv.row(r).iter().copied().fold(f64::NEG_INFINITY, f64::max))
            .collect();
        let best = Matrix::from_vec(fb.rows, n, best)?;
        self.mixer.evaluate(params, &fb.next_states, &fb.noise_next, &best)
    }

    /// TD targets `r + gamma * (1 - done) * max Q_tot_target(s')`.
    pub fn td_targets(&self, fb: &FlatBatch, params: &ParamStore) -> Result<Vec<f64>> {
        let boot = self.bootstrap_values(fb, params)?;
        Ok(fb
            .rewards
            .iter()
            .zip(&fb.dones)
            .zip(&boot)
            .map(|((&r, &d), &b)| if d { r } else { r + self.gamma * b })
            .collect())
    }

    /// `Q_tot` of the taken joint actions, recorded on `tape`.
    pub fn chosen_q_tot(&self, tape: &mut Tape, fb: &FlatBatch, track_hierarchy: bool) -> Result<Var> {
        let n = self.utility.n_agents;
        let a = self.utility.action_count;
        let x = tape.input(fb.inputs.clone());
        let q_all = self.utility.forward(tape, &self.params, x, true)?;
        let idx = fb.actions.iter().enumerate().map(|(row, &act)| row * a + act).collect();
        let chosen = tape.gather(q_all, idx, fb.rows, n)?;
        let states = tape.input(fb.states.clone());
        let track = Track {
            mixer: true,
            hierarchy: track_hierarchy,
        };
        Ok(self.mixer.forward(tape, &self.params, states, &fb.noise, chosen, track)?.q_tot)
    }

    /// Mean squared TD error over every timestep of `batch`.
    pub fn td_loss(&self, batch: &[&Episode], track_hierarchy: bool) -> Result<TdLoss> {
        let fb = self.flatten(batch)?;
        let targets = self.td_targets(&fb, &self.targets.params)?;
        let mut tape = Tape::new();
        let q_tot = self.chosen_q_tot(&mut tape, &fb, track_hierarchy)?;
        let y = tape.input(Matrix::from_vec(fb.rows, 1, targets)?);
        let diff = tape.sub(q_tot, y)?;
        let sq = tape.square(diff);
        let loss = tape.mean_all(sq)?;
        Ok(TdLoss {
            value: tape.scalar(loss),
            tape,
            loss,
        })
    }

    /// One RMSprop step on `phi` and `zeta`, and on `theta` when
    /// `update_hierarchy` is set and the mixer lets TD gradients reach it.
    pub fn ql_step(&mut self, batch: &[&Episode], update_hierarchy: bool) -> Result<f64> {
        let with_theta = update_hierarchy && self.trains_hierarchy();
        let mut l = self.td_loss(batch, with_theta)?;
        if !l.value.is_finite() {
            return Err(Error::NonFiniteLoss(l.value));
        }
        l.tape.backward(l.loss, &[1.0], &mut self.params)?;
        self.opt.step_filtered(&mut self.params, |name| {
            in_group(name, UTILITY_PREFIX) || in_group(name, MIXER_PREFIX) || (with_theta && in_group(name, HIERARCHY_PREFIX))
        })?;
        Ok(l.value)
    }

    /// Q-learning updates on `d0` alone with the hierarchy held fixed.
    pub fn exercise_move(&mut self, d0: &[Episode]) -> Result<()> {
        if d0.is_empty() {
            return Err(Error::Empty("exercise batch"));
        }
        let batch: Vec<&Episode> = d0.iter().collect();
        for _ in 0..self.exercise_moves {
            self.ql_step(&batch, false)?;
        }
        Ok(())
    }

    /// `sum_{episodes, t} grad_theta log N(z_t; mu(s_t), sigma(s_t))`, with
    /// `z_t` rebuilt from the stored noise under the current `theta`.
    /// Flattened in parameter-name order.
    pub fn meta_gradient(&self, d0: &[Episode]) -> Result<Vec<f64>> {
        let Some(h) = self.mixer.hierarchy() else {
            return Err(Error::InvalidArgument(format!("mixer `{}` has no hierarchy", self.mixer.kind())));
        };
        let refs: Vec<&Episode> = d0.iter().collect();
        let fb = self.flatten(&refs)?;
        let mut tape = Tape::new();
        let s = tape.input(fb.states.clone());
        let sample = h.sample(&mut tape, &self.params, s, &fb.noise, false)?;
        let z = tape.value(sample.z).clone();
        let mut tape = Tape::new();
        let s = tape.input(fb.states);
        let logp = h.log_density(&mut tape, &self.params, s, &z, true)?;
        let total = tape.sum_all(logp);
        let mut scratch = self.params.clone();
        scratch.zero_grads();
        tape.backward(total, &[1.0], &mut scratch)?;
        Ok(scratch.flat_grads(HIERARCHY_PREFIX))
    }

    /// The REINFORCE step `meta_lr * meta_reward * meta_gradient`, with the
    /// gradient rescaled to norm `meta_grad_clip` when it is longer.
    ///
    /// The log-density gradient grows like `1 / sigma`, and the TD path can
    /// drive `sigma` to its floor, so an unclipped step can throw `theta` far
    /// out of range in one update.
    pub fn meta_delta(&self, d0: &[Episode], meta_reward: f64) -> Result<Vec<f64>> {
        let grad = self.meta_gradient(d0)?;
        let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        let clip = if self.meta_grad_clip > 0.0 && norm > self.meta_grad_clip {
            self.meta_grad_clip / norm
        } else {
            1.0
        };
        let scale = self.meta_lr * meta_reward * clip;
        Ok(grad.into_iter().map(|g| scale * g).collect())
    }

    /// Gradient ascent on `theta`. Returns `false` when the update was skipped
    /// (zero reward or a non-finite gradient).
    pub fn meta_update(&mut self, d0: &[Episode], meta_reward: f64) -> Result<bool> {
        if meta_reward == 0.0 || self.meta_lr == 0.0 {
            return Ok(false);
        }
        let delta = self.meta_delta(d0, meta_reward)?;
        if delta.iter().any(|d| !d.is_finite()) {
            log::warn!("skipping meta update: non-finite hierarchy gradient");
            return Ok(false);
        }
        let theta: Vec<f64> = self
            .params
            .flat_values(HIERARCHY_PREFIX)
            .into_iter()
            .zip(&delta)
            .map(|(p, d)| p + d)
            .collect();
        self.params.set_flat_values(HIERARCHY_PREFIX, &theta)?;
        Ok(true)
    }
}

/// `R1 - R0`.
pub fn meta_reward(r1: f64, r0: f64) -> f64 {
    r1 - r0
}
