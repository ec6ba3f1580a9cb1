use serde::{Deserialize, Serialize};

use crate::agents::EpsSchedule;
use crate::envs::{make_env, DecPomdpSpec};
use crate::error::{Error, Result};
use crate::mixer::{MixerDims, MixerKind};

/// Every hyperparameter of the training loop.
///
/// Only `env`, `mixer`, `seed` and `total_env_steps` are required in config
/// files; everything else falls back to the defaults below. Unknown keys are
/// rejected by the experiment-config parser, which also owns the run keys.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainerConfig {
    pub env: String,
    pub mixer: MixerKind,
    pub seed: u64,
    pub total_env_steps: u64,

    #[serde(default = "defaults::lr")]
    pub lr: f64,
    #[serde(default = "defaults::meta_lr")]
    pub meta_lr: f64,
    /// Largest L2 norm of the hierarchy meta-gradient; 0 disables clipping.
    #[serde(default = "defaults::meta_grad_clip")]
    pub meta_grad_clip: f64,
    #[serde(default = "defaults::rms_alpha")]
    pub rms_alpha: f64,
    #[serde(default = "defaults::rms_eps")]
    pub rms_eps: f64,
    #[serde(default = "defaults::gamma")]
    pub gamma: f64,
    /// Episodes per Q-learning batch sampled from the replay buffer.
    #[serde(default = "defaults::batch_episodes")]
    pub batch_episodes: usize,
    /// Episodes in each of D0 and D1; `None` picks 32 for the matrix game
    /// and 8 otherwise.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub meta_batch_episodes: Option<usize>,
    #[serde(default = "defaults::eps_start")]
    pub eps_start: f64,
    #[serde(default = "defaults::eps_end")]
    pub eps_end: f64,
    #[serde(default = "defaults::eps_anneal_steps")]
    pub eps_anneal_steps: u64,
    #[serde(default = "defaults::meta_interval_env_steps")]
    pub meta_interval_env_steps: u64,
    #[serde(default = "defaults::exercise_moves")]
    pub exercise_moves: usize,
    /// In training steps.
    #[serde(default = "defaults::target_update_interval")]
    pub target_update_interval: u64,
    #[serde(default = "defaults::hierarchy_dim")]
    pub hierarchy_dim: usize,
    #[serde(default = "defaults::hierarchy_hidden")]
    pub hierarchy_hidden: usize,
    #[serde(default = "defaults::decoder_dim")]
    pub decoder_dim: usize,
    #[serde(default = "defaults::mixer_embed")]
    pub mixer_embed: usize,
    #[serde(default = "defaults::utility_hidden")]
    pub utility_hidden: usize,
    /// In environment steps.
    #[serde(default = "defaults::eval_interval")]
    pub eval_interval: u64,
    #[serde(default = "defaults::eval_episodes")]
    pub eval_episodes: usize,
    /// In episodes.
    #[serde(default = "defaults::buffer_capacity")]
    pub buffer_capacity: usize,
    /// Write measured wall-clock seconds into metrics. Off by default so
    /// metrics files are reproducible byte for byte.
    #[serde(default)]
    pub record_wallclock: bool,
}

mod defaults {
    pub fn lr() -> f64 {
        5e-4
    }
    pub fn meta_lr() -> f64 {
        1e-4
    }
    pub fn meta_grad_clip() -> f64 {
        10.0
    }
    pub fn rms_alpha() -> f64 {
        0.99
    }
    pub fn rms_eps() -> f64 {
        1e-5
    }
    pub fn gamma() -> f64 {
        0.99
    }
    pub fn batch_episodes() -> usize {
        32
    }
    pub fn eps_start() -> f64 {
        1.0
    }
    pub fn eps_end() -> f64 {
        0.05
    }
    pub fn eps_anneal_steps() -> u64 {
        50_000
    }
    pub fn meta_interval_env_steps() -> u64 {
        500
    }
    pub fn exercise_moves() -> usize {
        4
    }
    pub fn target_update_interval() -> u64 {
        200
    }
    pub fn hierarchy_dim() -> usize {
        3
    }
    pub fn hierarchy_hidden() -> usize {
        32
    }
    pub fn decoder_dim() -> usize {
        16
    }
    pub fn mixer_embed() -> usize {
        32
    }
    pub fn utility_hidden() -> usize {
        64
    }
    pub fn eval_interval() -> u64 {
        1000
    }
    pub fn eval_episodes() -> usize {
        24
    }
    pub fn buffer_capacity() -> usize {
        5000
    }
}

impl TrainerConfig {
    /// Config with every optional field at its default.
    pub fn new(env: &str, mixer: MixerKind, seed: u64, total_env_steps: u64) -> Self {
        Self {
            env: env.to_string(),
            mixer,
            seed,
            total_env_steps,
            lr: defaults::lr(),
            meta_lr: defaults::meta_lr(),
            meta_grad_clip: defaults::meta_grad_clip(),
            rms_alpha: defaults::rms_alpha(),
            rms_eps: defaults::rms_eps(),
            gamma: defaults::gamma(),
            batch_episodes: defaults::batch_episodes(),
            meta_batch_episodes: None,
            eps_start: defaults::eps_start(),
            eps_end: defaults::eps_end(),
            eps_anneal_steps: defaults::eps_anneal_steps(),
            meta_interval_env_steps: defaults::meta_interval_env_steps(),
            exercise_moves: defaults::exercise_moves(),
            target_update_interval: defaults::target_update_interval(),
            hierarchy_dim: defaults::hierarchy_dim(),
            hierarchy_hidden: defaults::hierarchy_hidden(),
            decoder_dim: defaults::decoder_dim(),
            mixer_embed: defaults::mixer_embed(),
            utility_hidden: defaults::utility_hidden(),
            eval_interval: defaults::eval_interval(),
            eval_episodes: defaults::eval_episodes(),
            buffer_capacity: defaults::buffer_capacity(),
            record_wallclock: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        make_env(&self.env)?;
        let positive = [
            ("lr", self.lr >= 0.0 && self.lr.is_finite()),
            ("meta_lr", self.meta_lr >= 0.0 && self.meta_lr.is_finite()),
            ("meta_grad_clip", self.meta_grad_clip >= 0.0 && self.meta_grad_clip.is_finite()),
            ("rms_alpha", (0.0..1.0).contains(&self.rms_alpha)),
            ("rms_eps", self.rms_eps > 0.0),
            ("gamma", (0.0..1.0).contains(&self.gamma)),
            ("batch_episodes", self.batch_episodes > 0),
            ("meta_batch_episodes", self.meta_batch_episodes != Some(0)),
            ("meta_interval_env_steps", self.meta_interval_env_steps > 0),
            ("target_update_interval", self.target_update_interval > 0),
            ("hierarchy_dim", self.hierarchy_dim > 0),
            ("decoder_dim", self.decoder_dim > 0),
            ("mixer_embed", self.mixer_embed > 0),
            ("utility_hidden", self.utility_hidden > 0),
            ("eval_interval", self.eval_interval > 0),
            ("buffer_capacity", self.buffer_capacity > 0),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, ok)| !ok) {
            return Err(Error::Config(format!("`{name}` is out of range")));
        }
        EpsSchedule::new(self.eps_start, self.eps_end, self.eps_anneal_steps)
            .map_err(|e| Error::Config(e.to_string()))?;
        Ok(())
    }

    pub fn eps_schedule(&self) -> EpsSchedule {
        EpsSchedule {
            start: self.eps_start,
            end: self.eps_end,
            anneal_steps: self.eps_anneal_steps,
        }
    }

    pub fn meta_batch(&self) -> usize {
        self.meta_batch_episodes
            .unwrap_or(if self.env == "matrix3" { 32 } else { 8 })
    }

    pub fn mixer_dims(&self, spec: &DecPomdpSpec) -> MixerDims {
        MixerDims {
            n_agents: spec.n_agents,
            state_dim: spec.state_dim,
            hierarchy_dim: self.hierarchy_dim,
            hierarchy_hidden: self.hierarchy_hidden,
            decoder_dim: self.decoder_dim,
            embed: self.mixer_embed,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_reported_protocol() {
        let c = TrainerConfig::new("matrix3", MixerKind::Mnmpg, 1, 10_000);
        assert_eq!(c.lr, 5e-4);
        assert_eq!(c.rms_alpha, 0.99);
        assert_eq!(c.eps_start, 1.0);
        assert_eq!(c.eps_end, 0.05);
        assert_eq!(c.batch_episodes, 32);
        assert_eq!(c.eval_episodes, 24);
        assert_eq!(c.meta_interval_env_steps, 500);
        assert_eq!(c.hierarchy_dim, 3);
        assert_eq!(c.meta_batch(), 32);
        c.validate().unwrap();
    }

    #[test]
    fn validation_rejects_bad_values() {
        let mut c = TrainerConfig::new("grid_gather", MixerKind::Qmix, 1, 10);
        assert_eq!(c.meta_batch(), 8);
        c.gamma = 1.0;
        assert!(c.validate().is_err());
        let mut c = TrainerConfig::new("nowhere", MixerKind::Qmix, 1, 10);
        assert!(c.validate().is_err());
        c.env = "matrix3".into();
        c.eps_end = 2.0;
        assert!(c.validate().is_err());
    }
}
