use super::{check_actions, DecPomdp, DecPomdpSpec, StepResult};
use crate::error::{Error, Result};

/// Two-agent, one-step cooperative game with a shared payoff table.
#[derive(Clone, Debug, PartialEq)]
pub struct MatrixGameSpec {
    pub payoff: Vec<Vec<f64>>,
    /// Reward counted as a win.
    pub win_reward: f64,
}

impl Default for MatrixGameSpec {
    /// The nonmonotonic climbing-style payoff: the optimum (0, 0) is guarded
    /// by heavy miscoordination penalties.
    fn default() -> Self {
        Self {
            payoff: vec![
                vec![8.0, -12.0, -12.0],
                vec![-12.0, 0.0, 0.0],
                vec![-12.0, 0.0, 0.0],
            ],
            win_reward: 8.0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct MatrixGame {
    spec: DecPomdpSpec,
    payoff: Vec<Vec<f64>>,
    win_reward: f64,
    steps: usize,
}

impl MatrixGame {
    pub fn new(game: MatrixGameSpec) -> Result<Self> {
        let n = game.payoff.len();
        if n < 2 || game.payoff.iter().any(|row| row.len() != n) {
            return Err(Error::InvalidArgument("payoff must be a square matrix of size >= 2".into()));
        }
        if game.payoff.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("payoff entries must be finite".into()));
        }
        let spec = DecPomdpSpec {
            n_agents: 2,
            action_count: n,
            obs_dim: 1,
            state_dim: 1,
            max_episode_len: 1,
            gamma: 0.99,
        };
        spec.validate()?;
        Ok(Self {
            spec,
            payoff: game.payoff,
            win_reward: game.win_reward,
            steps: 0,
        })
    }

    pub fn payoff(&self, a1: usize, a2: usize) -> f64 {
        self.payoff[a1][a2]
    }

    fn state(&self) -> Vec<f64> {
        vec![1.0]
    }

    fn obs(&self) -> Vec<Vec<f64>> {
        vec![vec![1.0]; 2]
    }
}

impl DecPomdp for MatrixGame {
    fn spec(&self) -> &DecPomdpSpec {
        &self.spec
    }

    fn reset(&mut self, _seed: u64) -> (Vec<f64>, Vec<Vec<f64>>) {
        self.steps = 0;
        (self.state(), self.obs())
    }

    fn step(&mut self, joint_action: &[usize]) -> Result<StepResult> {
        check_actions(&self.spec, joint_action)?;
        self.steps += 1;
        let reward = self.payoff[joint_action[0]][joint_action[1]];
        Ok(StepResult {
            reward,
            next_state: self.state(),
            next_obs: self.obs(),
            done: true,
            win: Some(reward >= self.win_reward),
        })
    }

    fn optimal_return(&self) -> Result<f64> {
        Ok(self
            .payoff
            .iter()
            .flatten()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max))
    }

    fn num_states(&self) -> Option<usize> {
        Some(1)
    }

    fn state_index(&self, state: &[f64]) -> Result<usize> {
        if state.len() != 1 {
            return Err(crate::error::shape_err("matrix game state", 1, state.len()));
        }
        Ok(0)
    }

    fn state_from_index(&self, index: usize) -> Result<Vec<f64>> {
        if index != 0 {
            return Err(Error::InvalidArgument(format!("state index {index} out of range")));
        }
        Ok(self.state())
    }

    fn name(&self) -> &'static str {
        "matrix3"
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn game() -> MatrixGame {
        MatrixGame::new(MatrixGameSpec::default()).unwrap()
    }

    #[test]
    fn reset_state_is_constant() {
        let mut g = game();
        let (s1, _) = g.reset(1);
        let (s2, _) = g.reset(99);
        assert_eq!(s1, s2);
    }

    #[test]
    fn payoff_lookup() {
        let mut g = game();
        g.reset(0);
        assert_eq!(g.step(&[0, 0]).unwrap().reward, 8.0);
        g.reset(0);
        let r = g.step(&[0, 1]).unwrap();
        assert_eq!(r.reward, -12.0);
        assert!(r.done);
        assert_eq!(r.win, Some(false));
        g.reset(0);
        assert_eq!(g.step(&[1, 1]).unwrap().reward, 0.0);
    }

    #[test]
    fn payoff_is_symmetric() {
        let g = game();
        for a in 0..3 {
            for b in 0..3 {
                assert_eq!(g.payoff(a, b), g.payoff(b, a));
            }
        }
    }

    #[test]
    fn rejects_out_of_range_action() {
        let mut g = game();
        g.reset(0);
        assert!(matches!(g.step(&[3, 0]), Err(Error::InvalidAction { agent: 0, .. })));
    }

    #[test]
    fn optimum_and_index() {
        let g = game();
        assert_eq!(g.optimal_return().unwrap(), 8.0);
        assert_eq!(g.state_index(&[1.0]).unwrap(), 0);
        let s = g.state_from_index(0).unwrap();
        assert_eq!(g.state_index(&s).unwrap(), 0);
    }
}
