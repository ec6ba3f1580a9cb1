//! Cooperative Dec-POMDP environments with a shared reward.

mod grid;
mod matrix;

pub use grid::{GridGather, GridGatherSpec};
pub use matrix::{MatrixGame, MatrixGameSpec};

use crate::error::{Error, Result};

/// Static description of a Dec-POMDP.
#[derive(Clone, Debug, PartialEq)]
pub struct DecPomdpSpec {
    pub n_agents: usize,
    pub action_count: usize,
    pub obs_dim: usize,
    pub state_dim: usize,
    pub max_episode_len: usize,
    pub gamma: f64,
}

impl DecPomdpSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_agents < 2 {
            return Err(Error::InvalidArgument("a Dec-POMDP needs at least two agents".into()));
        }
        if self.action_count < 2 {
            return Err(Error::InvalidArgument("action_count must be at least 2".into()));
        }
        if self.max_episode_len < 1 {
            return Err(Error::InvalidArgument("max_episode_len must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::InvalidArgument(format!("discount {} outside [0, 1)", self.gamma)));
        }
        Ok(())
    }
}

/// Result of one joint step.
#[derive(Clone, Debug, PartialEq)]
pub struct StepResult {
    pub reward: f64,
    pub next_state: Vec<f64>,
    pub next_obs: Vec<Vec<f64>>,
    pub done: bool,
    /// Set on terminal steps: whether the episode counts as a win.
    pub win: Option<bool>,
}

/// A cooperative environment with full state and per-agent observations.
pub trait DecPomdp: Send {
    fn spec(&self) -> &DecPomdpSpec;

    /// Starts a new episode; deterministic in `seed`.
    fn reset(&mut self, seed: u64) -> (Vec<f64>, Vec<Vec<f64>>);

    fn step(&mut self, joint_action: &[usize]) -> Result<StepResult>;

    /// Optimal undiscounted episode return, by exhaustive search. Averaged
    /// over the reset distribution when starts are random.
    fn optimal_return(&self) -> Result<f64>;

    /// Number of enumerable states, if the state space is discrete.
    fn num_states(&self) -> Option<usize>;

    /// Stable bijection from states onto `[0, num_states)`.
    fn state_index(&self, state: &[f64]) -> Result<usize>;

    /// Inverse of [`state_index`](Self::state_index) (time feature set to 0).
    fn state_from_index(&self, index: usize) -> Result<Vec<f64>>;

    fn name(&self) -> &'static str;
}

pub(crate) fn check_actions(spec: &DecPomdpSpec, joint_action: &[usize]) -> Result<()> {
    if joint_action.len() != spec.n_agents {
        return Err(crate::error::shape_err("joint action", spec.n_agents, joint_action.len()));
    }
    for (agent, &action) in joint_action.iter().enumerate() {
        if action >= spec.action_count {
            return Err(Error::InvalidAction {
                agent,
                action,
                count: spec.action_count,
            });
        }
    }
    Ok(())
}

/// Environment names accepted in configuration files.
pub const ENV_NAMES: [&str; 2] = ["matrix3", "grid_gather"];

/// Builds an environment from its configuration name with default settings.
pub fn make_env(name: &str) -> Result<Box<dyn DecPomdp>> {
    match name {
        "matrix3" => Ok(Box::new(MatrixGame::new(MatrixGameSpec::default())?)),
        "grid_gather" => Ok(Box::new(GridGather::new(GridGatherSpec::default())?)),
        other => Err(Error::Config(format!(
            "unknown env `{other}` (expected one of {})",
            ENV_NAMES.join(", ")
        ))),
    }
}
