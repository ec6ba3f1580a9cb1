use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{check_actions, DecPomdp, DecPomdpSpec, StepResult};
use crate::error::{shape_err, Error, Result};

const OPTIMAL_RETURN_LIMIT: u128 = 10_000_000;

/// Cells outside the grid read as this value in local observations.
pub const OUT_OF_BOUNDS: f64 = -1.0;

/// Gathering task: every agent must stand on the goal cell at the same time.
#[derive(Clone, Debug, PartialEq)]
pub struct GridGatherSpec {
    pub width: usize,
    pub height: usize,
    pub n_agents: usize,
    /// Fixed `(x, y)` starts; uniformly random cells when `None`.
    pub start_positions: Option<Vec<(usize, usize)>>,
    pub goal: (usize, usize),
    pub view_radius: usize,
    pub step_penalty: f64,
    pub capture_reward: f64,
    pub horizon: usize,
    pub gamma: f64,
}

impl Default for GridGatherSpec {
    fn default() -> Self {
        Self {
            width: 6,
            height: 6,
            n_agents: 2,
            start_positions: None,
            goal: (3, 3),
            view_radius: 1,
            step_penalty: -0.05,
            capture_reward: 10.0,
            horizon: 30,
            gamma: 0.99,
        }
    }
}

/// Actions: 0 stay, 1 up, 2 down, 3 left, 4 right. Moves into walls are
/// clamped; agents may share cells.
#[derive(Clone, Debug)]
pub struct GridGather {
    cfg: GridGatherSpec,
    spec: DecPomdpSpec,
    positions: Vec<(usize, usize)>,
    t: usize,
}

impl GridGather {
    pub fn new(cfg: GridGatherSpec) -> Result<Self> {
        if cfg.width == 0 || cfg.height == 0 {
            return Err(Error::InvalidArgument("grid must have at least one cell".into()));
        }
        let inside = |(x, y): (usize, usize)| x < cfg.width && y < cfg.height;
        if !inside(cfg.goal) {
            return Err(Error::InvalidArgument(format!("goal {:?} outside the grid", cfg.goal)));
        }
        if let Some(starts) = &cfg.start_positions {
            if starts.len() != cfg.n_agents {
                return Err(shape_err("start positions", cfg.n_agents, starts.len()));
            }
            if let Some(p) = starts.iter().find(|&&p| !inside(p)) {
                return Err(Error::InvalidArgument(format!("start {p:?} outside the grid")));
            }
        }
        let cells = cfg.width * cfg.height;
        let window = (2 * cfg.view_radius + 1).pow(2);
        let spec = DecPomdpSpec {
            n_agents: cfg.n_agents,
            action_count: 5,
            obs_dim: window + cells,
            state_dim: cfg.n_agents * cells + 1,
            max_episode_len: cfg.horizon,
            gamma: cfg.gamma,
        };
        spec.validate()?;
        let positions = vec![(0, 0); cfg.n_agents];
        Ok(Self { cfg, spec, positions, t: 0 })
    }

    pub fn config(&self) -> &GridGatherSpec {
        &self.cfg
    }

    pub fn positions(&self) -> &[(usize, usize)] {
        &self.positions
    }

    pub fn timestep(&self) -> usize {
        self.t
    }

    fn cells(&self) -> usize {
        self.cfg.width * self.cfg.height
    }

    fn cell(&self, (x, y): (usize, usize)) -> usize {
        y * self.cfg.width + x
    }

    fn moved(&self, (x, y): (usize, usize), action: usize) -> (usize, usize) {
        match action {
            1 => (x, y.saturating_sub(1)),
            2 => (x, (y + 1).min(self.cfg.height - 1)),
            3 => (x.saturating_sub(1), y),
            4 => ((x + 1).min(self.cfg.width - 1), y),
            _ => (x, y),
        }
    }

    fn state(&self) -> Vec<f64> {
        let cells = self.cells();
        let mut s = vec![0.0; self.spec.state_dim];
        for (i, &p) in self.positions.iter().enumerate() {
            s[i * cells + self.cell(p)] = 1.0;
        }
        s[self.cfg.n_agents * cells] = self.t as f64 / self.cfg.horizon as f64;
        s
    }

    fn observation(&self, agent: usize) -> Vec<f64> {
        let r = self.cfg.view_radius as isize;
        let (ax, ay) = self.positions[agent];
        let mut obs = Vec::with_capacity(self.spec.obs_dim);
        for dy in -r..=r {
            for dx in -r..=r {
                let (x, y) = (ax as isize + dx, ay as isize + dy);
                if x < 0 || y < 0 || x >= self.cfg.width as isize || y >= self.cfg.height as isize {
                    obs.push(OUT_OF_BOUNDS);
                    continue;
                }
                let p = (x as usize, y as usize);
                let mut v = if p == self.cfg.goal { 1.0 } else { 0.0 };
                let others = self
                    .positions
                    .iter()
                    .enumerate()
                    .filter(|&(j, &q)| j != agent && q == p)
                    .count();
                v += 0.5 * others as f64;
                obs.push(v);
            }
        }
        let mut own = vec![0.0; self.cells()];
        own[self.cell((ax, ay))] = 1.0;
        obs.extend(own);
        obs
    }

    fn observations(&self) -> Vec<Vec<f64>> {
        (0..self.cfg.n_agents).map(|i| self.observation(i)).collect()
    }

    fn joint_index(&self, cells: &[usize]) -> usize {
        cells.iter().fold(0, |acc, &c| acc * self.cells() + c)
    }

    fn decode_joint(&self, mut index: usize) -> Vec<usize> {
        let mut cells = vec![0; self.cfg.n_agents];
        for slot in cells.iter_mut().rev() {
            *slot = index % self.cells();
            index /= self.cells();
        }
        cells
    }

    fn position_of(&self, cell: usize) -> (usize, usize) {
        (cell % self.cfg.width, cell / self.cfg.width)
    }
}

impl DecPomdp for GridGather {
    fn spec(&self) -> &DecPomdpSpec {
        &self.spec
    }

    fn reset(&mut self, seed: u64) -> (Vec<f64>, Vec<Vec<f64>>) {
        self.t = 0;
        self.positions = match &self.cfg.start_positions {
            Some(starts) => starts.clone(),
            None => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                (0..self.cfg.n_agents)
                    .map(|_| (rng.random_range(0..self.cfg.width), rng.random_range(0..self.cfg.height)))
                    .collect()
            }
        };
        (self.state(), self.observations())
    }

    fn step(&mut self, joint_action: &[usize]) -> Result<StepResult> {
        check_actions(&self.spec, joint_action)?;
        let next: Vec<_> = self
            .positions
            .iter()
            .zip(joint_action)
            .map(|(&p, &a)| self.moved(p, a))
            .collect();
        self.positions = next;
        self.t += 1;
        let captured = self.positions.iter().all(|&p| p == self.cfg.goal);
        let (reward, done, win) = if captured {
            (self.cfg.capture_reward, true, Some(true))
        } else if self.t >= self.cfg.horizon {
            (self.cfg.step_penalty, true, Some(false))
        } else {
            (self.cfg.step_penalty, false, None)
        };
        Ok(StepResult {
            reward,
            next_state: self.state(),
            next_obs: self.observations(),
            done,
            win,
        })
    }

    /// Backward induction over (timestep, joint position).
    fn optimal_return(&self) -> Result<f64> {
        let joint_states = (self.cells() as u128).pow(self.cfg.n_agents as u32);
        let size = joint_states * self.cfg.horizon as u128;
        if size > OPTIMAL_RETURN_LIMIT {
            return Err(Error::SpaceTooLarge {
                size,
                limit: OPTIMAL_RETURN_LIMIT,
            });
        }
        let joint_states = joint_states as usize;
        let n = self.cfg.n_agents;
        let joint_actions = 5usize.pow(n as u32);
        let goal = self.cell(self.cfg.goal);

        let mut next_value = vec![0.0; joint_states];
        for _ in 0..self.cfg.horizon {
            let mut value = vec![f64::NEG_INFINITY; joint_states];
            for (s, v) in value.iter_mut().enumerate() {
                let cells = self.decode_joint(s);
                for ja in 0..joint_actions {
                    let mut code = ja;
                    let moved: Vec<usize> = cells
                        .iter()
                        .map(|&c| {
                            let a = code % 5;
                            code /= 5;
                            self.cell(self.moved(self.position_of(c), a))
                        })
                        .collect();
                    let q = if moved.iter().all(|&c| c == goal) {
                        self.cfg.capture_reward
                    } else {
                        self.cfg.step_penalty + next_value[self.joint_index(&moved)]
                    };
                    if q > *v {
                        *v = q;
                    }
                }
            }
            next_value = value;
        }

        match &self.cfg.start_positions {
            Some(starts) => {
                let cells: Vec<usize> = starts.iter().map(|&p| self.cell(p)).collect();
                Ok(next_value[self.joint_index(&cells)])
            }
            None => Ok(next_value.iter().sum::<f64>() / joint_states as f64),
        }
    }

    fn num_states(&self) -> Option<usize> {
        Some(self.cells().pow(self.cfg.n_agents as u32))
    }

    fn state_index(&self, state: &[f64]) -> Result<usize> {
        if state.len() != self.spec.state_dim {
            return Err(shape_err("grid state", self.spec.state_dim, state.len()));
        }
        let cells = self.cells();
        let mut joint = Vec::with_capacity(self.cfg.n_agents);
        for i in 0..self.cfg.n_agents {
            let block = &state[i * cells..(i + 1) * cells];
            let hot: Vec<usize> = block.iter().enumerate().filter(|(_, &v)| v == 1.0).map(|(c, _)| c).collect();
            if hot.len() != 1 || block.iter().any(|&v| v != 0.0 && v != 1.0) {
                return Err(Error::InvalidArgument(format!("agent {i} position block is not one-hot")));
            }
            joint.push(hot[0]);
        }
        Ok(self.joint_index(&joint))
    }

    fn state_from_index(&self, index: usize) -> Result<Vec<f64>> {
        let total = self.num_states().unwrap_or(0);
        if index >= total {
            return Err(Error::InvalidArgument(format!("state index {index} out of range {total}")));
        }
        let cells = self.cells();
        let mut s = vec![0.0; self.spec.state_dim];
        for (i, c) in self.decode_joint(index).into_iter().enumerate() {
            s[i * cells + c] = 1.0;
        }
        Ok(s)
    }

    fn name(&self) -> &'static str {
        "grid_gather"
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(w: usize, h: usize, horizon: usize) -> GridGather {
        GridGather::new(GridGatherSpec {
            width: w,
            height: h,
            horizon,
            goal: (w / 2, h / 2),
            ..GridGatherSpec::default()
        })
        .unwrap()
    }

    #[test]
    fn reset_is_deterministic_in_seed() {
        let mut g = GridGather::new(GridGatherSpec::default()).unwrap();
        g.reset(7);
        let a = g.positions().to_vec();
        g.reset(7);
        assert_eq!(g.positions(), a.as_slice());
        assert_eq!(g.timestep(), 0);
    }

    #[test]
    fn observation_masks_beyond_view() {
        let mut g = GridGather::new(GridGatherSpec {
            start_positions: Some(vec![(0, 0), (5, 5)]),
            ..GridGatherSpec::default()
        })
        .unwrap();
        let (_, obs) = g.reset(0);
        // Agent 0 in the corner: row above and column left are outside.
        let window = &obs[0][..9];
        assert_eq!(window[0], OUT_OF_BOUNDS);
        assert_eq!(window[1], OUT_OF_BOUNDS);
        assert_eq!(window[3], OUT_OF_BOUNDS);
        assert_eq!(window[4], 0.0);
        // The other agent (and the goal at (3,3)) are beyond radius 1.
        assert!(window.iter().all(|&v| v == OUT_OF_BOUNDS || v == 0.0));
        assert_eq!(obs[0].len(), g.spec().obs_dim);
    }

    #[test]
    fn nearby_agent_and_goal_are_visible() {
        let mut g = GridGather::new(GridGatherSpec {
            start_positions: Some(vec![(3, 2), (3, 3)]),
            ..GridGatherSpec::default()
        })
        .unwrap();
        let (_, obs) = g.reset(0);
        // Agent 0 at (3,2): cell below is the goal with agent 1 on it.
        assert_eq!(obs[0][7], 1.5);
        // Agent 1 sees agent 0 directly above, itself on the goal.
        assert_eq!(obs[1][1], 0.5);
        assert_eq!(obs[1][4], 1.0);
    }

    #[test]
    fn capture_when_all_on_goal() {
        let mut g = GridGather::new(GridGatherSpec {
            start_positions: Some(vec![(3, 2), (2, 3)]),
            ..GridGatherSpec::default()
        })
        .unwrap();
        g.reset(0);
        let r = g.step(&[2, 4]).unwrap();
        assert_eq!(r.reward, 10.0);
        assert!(r.done);
        assert_eq!(r.win, Some(true));
    }

    #[test]
    fn one_agent_on_goal_is_not_enough() {
        let mut g = GridGather::new(GridGatherSpec {
            start_positions: Some(vec![(3, 3), (0, 0)]),
            ..GridGatherSpec::default()
        })
        .unwrap();
        g.reset(0);
        let r = g.step(&[0, 0]).unwrap();
        assert_eq!(r.reward, -0.05);
        assert!(!r.done);
    }

    #[test]
    fn horizon_terminates() {
        let mut g = GridGather::new(GridGatherSpec {
            start_positions: Some(vec![(0, 0), (0, 0)]),
            horizon: 3,
            ..GridGatherSpec::default()
        })
        .unwrap();
        g.reset(0);
        assert!(!g.step(&[0, 0]).unwrap().done);
        assert!(!g.step(&[0, 0]).unwrap().done);
        let last = g.step(&[0, 0]).unwrap();
        assert!(last.done);
        assert_eq!(last.win, Some(false));
    }

    #[test]
    fn single_cell_grid_returns_capture_reward() {
        let g = GridGather::new(GridGatherSpec {
            width: 1,
            height: 1,
            goal: (0, 0),
            ..GridGatherSpec::default()
        })
        .unwrap();
        assert_eq!(g.optimal_return().unwrap(), 10.0);
    }

    #[test]
    fn state_index_is_positional() {
        let mut g = grid(4, 4, 20);
        g.reset(3);
        let (s, _) = g.reset(3);
        let p = g.positions();
        let expected = 16 * (p[0].1 * 4 + p[0].0) + (p[1].1 * 4 + p[1].0);
        assert_eq!(g.state_index(&s).unwrap(), expected);
        assert!(expected < 256);
        for i in 0..256 {
            let s = g.state_from_index(i).unwrap();
            assert_eq!(g.state_index(&s).unwrap(), i);
        }
    }

    #[test]
    fn optimal_return_limit() {
        let g = GridGather::new(GridGatherSpec {
            width: 20,
            height: 20,
            n_agents: 3,
            goal: (0, 0),
            ..GridGatherSpec::default()
        })
        .unwrap();
        assert!(matches!(g.optimal_return(), Err(Error::SpaceTooLarge { .. })));
    }
}
