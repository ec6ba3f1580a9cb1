//! Per-agent utility networks and decentralized epsilon-greedy execution.

use rand::Rng;

use crate::gradcore::{init_mlp, mlp, Activation, Matrix, ParamStore, Tape, Var};
use crate::error::{shape_err, Error, Result};

/// Parameter-name prefix of the shared utility network.
pub const UTILITY_PREFIX: &str = "phi";

/// Shared two-layer MLP `Q_i(tau_i, .)`. Input is the local observation, the
/// one-hot previous action (all zero at t = 0) and the one-hot agent id.
#[derive(Clone, Debug, PartialEq)]
pub struct UtilityNet {
    pub obs_dim: usize,
    pub action_count: usize,
    pub n_agents: usize,
    pub hidden: usize,
}

impl UtilityNet {
    pub fn new(obs_dim: usize, action_count: usize, n_agents: usize, hidden: usize) -> Self {
        Self {
            obs_dim,
            action_count,
            n_agents,
            hidden,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.obs_dim + self.action_count + self.n_agents
    }

    pub fn arch(&self) -> [usize; 3] {
        [self.input_dim(), self.hidden, self.action_count]
    }

    pub fn init<R: Rng + ?Sized>(&self, store: &mut ParamStore, rng: &mut R) -> Result<()> {
        init_mlp(store, UTILITY_PREFIX, &self.arch(), rng)
    }

    /// Writes the network input for one agent into `out`.
    pub fn encode_into(&self, view: &LocalView<'_>, out: &mut Vec<f64>) {
        out.extend_from_slice(view.obs);
        let base = out.len();
        out.resize(base + self.action_count + self.n_agents, 0.0);
        if let Some(a) = view.last_action {
            out[base + a] = 1.0;
        }
        out[base + self.action_count + view.agent_id] = 1.0;
    }

    /// Q-values for a batch of already encoded inputs (`rows x input_dim`).
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, inputs: Var, track: bool) -> Result<Var> {
        mlp(tape, store, UTILITY_PREFIX, inputs, &self.arch(), Activation::Relu, track)
    }

    /// Q-values for several local views at once, without gradients.
    pub fn q_values(&self, store: &ParamStore, views: &[LocalView<'_>]) -> Result<Vec<Vec<f64>>> {
        let mut flat = Vec::with_capacity(views.len() * self.input_dim());
        for v in views {
            self.encode_into(v, &mut flat);
        }
        let mut tape = Tape::new();
        let x = tape.input(Matrix::from_vec(views.len(), self.input_dim(), flat)?);
        let q = self.forward(&mut tape, store, x, false)?;
        let q = tape.value(q);
        Ok((0..views.len()).map(|r| q.row(r).to_vec()).collect())
    }
}

/// Everything an agent may condition on at execution time.
///
/// Construction checks the observation width, so a full-state vector cannot
/// be passed off as an observation.
#[derive(Clone, Copy, Debug)]
pub struct LocalView<'a> {
    obs: &'a [f64],
    last_action: Option<usize>,
    agent_id: usize,
}

impl<'a> LocalView<'a> {
    pub fn new(net: &UtilityNet, obs: &'a [f64], last_action: Option<usize>, agent_id: usize) -> Result<Self> {
        if obs.len() != net.obs_dim {
            return Err(shape_err(format!("observation of agent {agent_id}"), net.obs_dim, obs.len()));
        }
        if agent_id >= net.n_agents {
            return Err(Error::InvalidArgument(format!("agent id {agent_id} >= {}", net.n_agents)));
        }
        if let Some(a) = last_action {
            if a >= net.action_count {
                return Err(Error::InvalidAction {
                    agent: agent_id,
                    action: a,
                    count: net.action_count,
                });
            }
        }
        Ok(Self {
            obs,
            last_action,
            agent_id,
        })
    }

    pub fn agent_id(&self) -> usize {
        self.agent_id
    }
}

/// Utility of one agent together with the tape that produced it.
#[derive(Debug)]
pub struct UtilityOutput {
    pub q: Vec<f64>,
    pub tape: Tape,
    pub output: Var,
}

/// `Q_i(tau_i, .)` for a single agent, differentiable w.r.t. the parameters.
pub fn utility_q(
    store: &ParamStore,
    net: &UtilityNet,
    obs: &[f64],
    last_action: Option<usize>,
    agent_id: usize,
) -> Result<UtilityOutput> {
    let view = LocalView::new(net, obs, last_action, agent_id)?;
    let mut input = Vec::with_capacity(net.input_dim());
    net.encode_into(&view, &mut input);
    let mut tape = Tape::new();
    let x = tape.input(Matrix::row_vector(&input));
    let out = net.forward(&mut tape, store, x, true)?;
    Ok(UtilityOutput {
        q: tape.value(out).as_slice().to_vec(),
        tape,
        output: out,
    })
}

/// Index of the largest entry; ties resolve to the lowest index.
pub fn greedy(q: &[f64]) -> Result<usize> {
    if q.is_empty() {
        return Err(Error::Empty("q-value vector"));
    }
    let mut best = 0;
    for (i, &v) in q.iter().enumerate().skip(1) {
        if v > q[best] {
            best = i;
        }
    }
    Ok(best)
}

/// Epsilon-greedy choice over one agent's Q-values.
pub fn select_action<R: Rng + ?Sized>(q: &[f64], eps: f64, rng: &mut R) -> Result<usize> {
    if !(0.0..=1.0).contains(&eps) {
        return Err(Error::InvalidArgument(format!("epsilon {eps} outside [0, 1]")));
    }
    let best = greedy(q)?;
    let u: f64 = rng.random();
    if u < eps {
        Ok(rng.random_range(0..q.len()))
    } else {
        Ok(best)
    }
}

/// Joint epsilon-greedy action where each agent sees only its own view.
pub fn act<R: Rng + ?Sized>(
    net: &UtilityNet,
    store: &ParamStore,
    views: &[LocalView<'_>],
    eps: f64,
    rng: &mut R,
) -> Result<Vec<usize>> {
    let qs = net.q_values(store, views)?;
    qs.iter().map(|q| select_action(q, eps, rng)).collect()
}

/// Linear exploration schedule, constant after `anneal_steps`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpsSchedule {
    pub start: f64,
    pub end: f64,
    pub anneal_steps: u64,
}

impl EpsSchedule {
    pub fn new(start: f64, end: f64, anneal_steps: u64) -> Result<Self> {
        if !(start >= end && end >= 0.0 && start <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "epsilon schedule needs 1 >= start >= end >= 0, got {start} -> {end}"
            )));
        }
        Ok(Self {
            start,
            end,
            anneal_steps,
        })
    }

    pub fn eps_at(&self, env_step: u64) -> f64 {
        if self.anneal_steps == 0 || env_step >= self.anneal_steps {
            return self.end;
        }
        let frac = env_step as f64 / self.anneal_steps as f64;
        self.start + (self.end - self.start) * frac
    }
}

impl Default for EpsSchedule {
    fn default() -> Self {
        Self {
            start: 1.0,
            end: 0.05,
            anneal_steps: 50_000,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcore::finite_diff_check;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn net() -> UtilityNet {
        UtilityNet::new(4, 3, 2, 8)
    }

    #[test]
    fn zero_params_give_zero_q() {
        let n = net();
        let mut store = ParamStore::new();
        n.init(&mut store, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let names: Vec<String> = store.names().map(str::to_string).collect();
        for name in names {
            let (r, c) = store.value(&name).unwrap().shape();
            store.set_value(&name, Matrix::zeros(r, c)).unwrap();
        }
        let out = utility_q(&store, &n, &[0.3, 0.1, -0.2, 1.0], None, 1).unwrap();
        assert_eq!(out.q, vec![0.0; 3]);
    }

    #[test]
    fn agent_id_changes_output() {
        let n = net();
        let mut store = ParamStore::new();
        n.init(&mut store, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let obs = [0.5, -0.5, 0.25, 0.0];
        let a = utility_q(&store, &n, &obs, Some(2), 0).unwrap().q;
        let b = utility_q(&store, &n, &obs, Some(2), 1).unwrap().q;
        assert_ne!(a, b);
    }

    #[test]
    fn full_state_is_rejected_as_observation() {
        let n = net();
        let state = vec![0.0; 9];
        assert!(LocalView::new(&n, &state, None, 0).is_err());
    }

    #[test]
    fn utility_gradient_check() {
        let n = net();
        let mut store = ParamStore::new();
        n.init(&mut store, &mut ChaCha8Rng::seed_from_u64(8)).unwrap();
        let obs = [0.9, -0.3, 0.4, 0.2];
        let loss = |s: &ParamStore| {
            let out = utility_q(s, &n, &obs, Some(1), 0)?;
            let mut tape = out.tape;
            let sum = tape.sum_all(out.output);
            Ok((tape, sum))
        };
        assert!(finite_diff_check(loss, &store, 1e-4).unwrap() < 1e-4);
    }

    #[test]
    fn greedy_and_ties() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(select_action(&[0.1, 0.9, 0.2], 0.0, &mut rng).unwrap(), 1);
        assert_eq!(select_action(&[0.5, 0.5], 0.0, &mut rng).unwrap(), 0);
        assert!(select_action(&[], 0.0, &mut rng).is_err());
        assert!(select_action(&[1.0], 1.5, &mut rng).is_err());
    }

    #[test]
    fn greedy_invariant_to_constant_shift() {
        let q = [0.3, -1.0, 2.5, 2.4];
        let shifted: Vec<f64> = q.iter().map(|x| x + 17.0).collect();
        assert_eq!(greedy(&q).unwrap(), greedy(&shifted).unwrap());
    }

    #[test]
    fn uniform_exploration_frequencies() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let draws = 100_000;
        let mut counts = [0usize; 4];
        for _ in 0..draws {
            counts[select_action(&[0.0, 3.0, 1.0, 2.0], 1.0, &mut rng).unwrap()] += 1;
        }
        let expected = draws as f64 / 4.0;
        let sd = (draws as f64 * 0.25 * 0.75).sqrt();
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
        for c in counts {
            assert!((c as f64 - expected).abs() < 3.0 * sd, "{counts:?}");
        }
        // 3 degrees of freedom, 99.9% quantile.
        assert!(chi2 < 16.27, "chi2 = {chi2}");
    }

    #[test]
    fn schedule_values() {
        let s = EpsSchedule::new(1.0, 0.05, 1000).unwrap();
        assert_eq!(s.eps_at(0), 1.0);
        assert_eq!(s.eps_at(1000), 0.05);
        assert_eq!(s.eps_at(2000), 0.05);
        assert!((s.eps_at(500) - 0.525).abs() < 1e-15);
        assert!(EpsSchedule::new(0.1, 0.5, 10).is_err());
    }
}
