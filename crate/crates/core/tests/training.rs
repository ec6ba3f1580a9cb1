use mnmpg::envs::{make_env, DecPomdp, DecPomdpSpec, StepResult};
use mnmpg::gradcore::{Matrix, Tape};
use mnmpg::mixer::MixerKind;
use mnmpg::train::{
    collect_episode, evaluate_policy, stream_rng, streams, Episode, Learner, RolloutRngs, Trainer, TrainerConfig,
};
use proptest::prelude::*;

fn rngs(seed: u64) -> RolloutRngs {
    RolloutRngs {
        env: stream_rng(seed, streams::ENV),
        explore: stream_rng(seed, streams::EXPLORE),
        noise: stream_rng(seed, streams::NOISE),
    }
}

fn fresh(env: &str, mixer: MixerKind, seed: u64) -> (Learner, Vec<Episode>) {
    let cfg = TrainerConfig::new(env, mixer, seed, 0);
    let mut env = make_env(env).unwrap();
    let learner = Learner::new(&cfg, env.spec(), &mut stream_rng(seed, streams::INIT)).unwrap();
    let mut r = rngs(seed);
    let eps: Vec<Episode> = (0..4)
        .map(|_| collect_episode(env.as_mut(), &learner.utility, &learner.params, learner.noise_dim, 1.0, &mut r).unwrap())
        .collect();
    (learner, eps)
}

/// Exhaustive max over joint actions of the mixed next-state utilities.
fn joint_argmax_bootstrap(learner: &Learner, episodes: &[Episode]) -> Vec<f64> {
    let refs: Vec<&Episode> = episodes.iter().collect();
    let fb = learner.flatten(&refs).unwrap();
    let n = learner.utility.n_agents;
    let a = learner.utility.action_count;
    let mut tape = Tape::new();
    let x = tape.input(fb.next_inputs.clone());
    let q = learner.utility.forward(&mut tape, &learner.params, x, false).unwrap();
    let qv = tape.value(q).clone();
    (0..fb.rows)
        .map(|row| {
            let s = Matrix::row_vector(fb.next_states.row(row));
            let z = Matrix::row_vector(fb.noise_next.row(row));
            let mut best = f64::NEG_INFINITY;
            for joint in 0..a.pow(n as u32) {
                let picks: Vec<f64> = (0..n)
                    .map(|i| qv.get(row * n + i, (joint / a.pow(i as u32)) % a))
                    .collect();
                let v = learner
                    .mixer
                    .evaluate(&learner.params, &s, &z, &Matrix::row_vector(&picks))
                    .unwrap()[0];
                best = best.max(v);
            }
            best
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn per_agent_max_target_matches_joint_argmax(seed in any::<u64>(), qmix in any::<bool>()) {
        let kind = if qmix { MixerKind::Qmix } else { MixerKind::Mnmpg };
        let (learner, episodes) = fresh("matrix3", kind, seed);
        let refs: Vec<&Episode> = episodes.iter().collect();
        let fb = learner.flatten(&refs).unwrap();
        let fast = learner.bootstrap_values(&fb, &learner.params).unwrap();
        let slow = joint_argmax_bootstrap(&learner, &episodes);
        for (f, s) in fast.iter().zip(&slow) {
            prop_assert!((f - s).abs() <= 1e-12 * (1.0 + s.abs()), "{f} vs {s}");
        }
    }

    #[test]
    fn episode_return_is_the_sum_of_stored_rewards(seed in any::<u64>(), eps in 0.0f64..=1.0) {
        let (learner, _) = fresh("grid_gather", MixerKind::Mnmpg, seed);
        let mut env = make_env("grid_gather").unwrap();
        let ep = collect_episode(env.as_mut(), &learner.utility, &learner.params, learner.noise_dim, eps, &mut rngs(seed)).unwrap();
        let recount: f64 = ep.transitions.iter().map(|t| t.reward).sum();
        prop_assert!((ep.ret - recount).abs() < 1e-12);
        prop_assert!(ep.transitions.last().unwrap().done);
        prop_assert!(ep.transitions[..ep.len() - 1].iter().all(|t| !t.done));
    }
}

#[test]
fn matrix_episodes_have_one_transition() {
    let (_, episodes) = fresh("matrix3", MixerKind::Qmix, 4);
    assert!(episodes.iter().all(|e| e.len() == 1));
}

#[test]
fn replayed_hierarchy_with_zero_noise_is_the_mean() {
    let (learner, episodes) = fresh("grid_gather", MixerKind::Mnmpg, 9);
    let refs: Vec<&Episode> = episodes.iter().collect();
    let fb = learner.flatten(&refs).unwrap();
    let h = learner.mixer.hierarchy().unwrap();
    let mut tape = Tape::new();
    let s = tape.input(fb.states.clone());
    let zero = Matrix::zeros(fb.rows, learner.noise_dim);
    let out = h.sample(&mut tape, &learner.params, s, &zero, false).unwrap();
    assert_eq!(tape.value(out.z), tape.value(out.mu));
}

#[test]
fn targets_equal_live_values_right_after_sync() {
    let mut cfg = TrainerConfig::new("grid_gather", MixerKind::Mnmpg, 2, 600);
    cfg.batch_episodes = 4;
    cfg.target_update_interval = 1_000_000;
    let mut t = Trainer::new(cfg).unwrap();
    t.run().unwrap();
    let batch: Vec<Episode> = t.buffer.iter().take(4).cloned().collect();
    let refs: Vec<&Episode> = batch.iter().collect();
    let fb = t.learner.flatten(&refs).unwrap();
    let stale = t.learner.td_targets(&fb, &t.learner.targets.params).unwrap();
    let live = t.learner.td_targets(&fb, &t.learner.params).unwrap();
    assert_ne!(stale, live, "training should have moved the live nets");
    t.learner.sync_targets();
    assert_eq!(t.learner.targets.params, t.learner.params);
    assert_eq!(t.learner.td_targets(&fb, &t.learner.targets.params).unwrap(), live);
}

#[test]
fn evaluation_leaves_parameters_untouched() {
    let mut cfg = TrainerConfig::new("grid_gather", MixerKind::Mnmpg, 6, 400);
    cfg.batch_episodes = 4;
    let mut t = Trainer::new(cfg).unwrap();
    t.run().unwrap();
    let params = t.learner.params.clone();
    let targets = t.learner.targets.clone();
    t.evaluate().unwrap();
    assert_eq!(t.learner.params, params);
    assert_eq!(t.learner.targets, targets);
}

#[test]
fn zero_networks_pick_action_zero_on_the_matrix_game() {
    let (mut learner, _) = fresh("matrix3", MixerKind::Qmix, 1);
    let names: Vec<String> = learner.params.names().map(str::to_string).collect();
    for name in names {
        let (r, c) = learner.params.get(&name).unwrap().shape();
        learner.params.set_value(&name, Matrix::zeros(r, c)).unwrap();
    }
    let mut env = make_env("matrix3").unwrap();
    let res = evaluate_policy(env.as_mut(), &learner.utility, &learner.params, 24, &mut stream_rng(1, streams::EVAL)).unwrap();
    assert_eq!(res.mean_return, 8.0);
    assert_eq!(res.win_rate, 1.0);
}

/// Counts environment steps on the way through.
struct Counting {
    inner: Box<dyn DecPomdp>,
    steps: u64,
}

impl DecPomdp for Counting {
    fn spec(&self) -> &DecPomdpSpec {
        self.inner.spec()
    }
    fn reset(&mut self, seed: u64) -> (Vec<f64>, Vec<Vec<f64>>) {
        self.inner.reset(seed)
    }
    fn step(&mut self, joint_action: &[usize]) -> mnmpg::Result<StepResult> {
        self.steps += 1;
        self.inner.step(joint_action)
    }
    fn optimal_return(&self) -> mnmpg::Result<f64> {
        self.inner.optimal_return()
    }
    fn num_states(&self) -> Option<usize> {
        self.inner.num_states()
    }
    fn state_index(&self, state: &[f64]) -> mnmpg::Result<usize> {
        self.inner.state_index(state)
    }
    fn state_from_index(&self, index: usize) -> mnmpg::Result<Vec<f64>> {
        self.inner.state_from_index(index)
    }
    fn name(&self) -> &'static str {
        self.inner.name()
    }
}

#[test]
fn evaluation_runs_the_requested_episodes_and_counts_every_step() {
    for (env, seed) in [("grid_gather", 12), ("matrix3", 12)] {
        let (learner, _) = fresh(env, MixerKind::Mnmpg, seed);
        let mut counting = Counting {
            inner: make_env(env).unwrap(),
            steps: 0,
        };
        let res = evaluate_policy(&mut counting, &learner.utility, &learner.params, 24, &mut stream_rng(seed, streams::EVAL)).unwrap();
        assert_eq!(res.returns.len(), 24);
        assert_eq!(res.visitation.values().sum::<u64>(), counting.steps);
    }
}

#[test]
fn every_collected_episode_reaches_the_buffer() {
    let mut cfg = TrainerConfig::new("grid_gather", MixerKind::Mnmpg, 3, 2_000);
    cfg.batch_episodes = 4;
    let mut t = Trainer::new(cfg).unwrap();
    t.run().unwrap();
    let stored: u64 = t.buffer.iter().map(|e| e.len() as u64).sum();
    assert_eq!(t.buffer.total_added(), t.buffer.len() as u64);
    assert_eq!(stored, t.env_steps);
}
