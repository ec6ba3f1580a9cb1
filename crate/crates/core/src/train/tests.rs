use super::*;
use crate::agents::utility_q;
use crate::gradcore::{finite_diff_check, Matrix, ParamStore, Tape, Var};
use crate::mixer::{hierarchy_forward, mnmpg_mix, qmix_mix, MixerKind, HIERARCHY_PREFIX};

fn small_cfg(env: &str, mixer: MixerKind, seed: u64) -> TrainerConfig {
    let mut c = TrainerConfig::new(env, mixer, seed, 0);
    c.utility_hidden = 8;
    c.mixer_embed = 4;
    c.hierarchy_hidden = 6;
    c.decoder_dim = 4;
    c
}

fn episodes(cfg: &TrainerConfig, count: usize, eps: f64) -> (Learner, Vec<Episode>) {
    let env = make_env(&cfg.env).unwrap();
    let mut rng = stream_rng(cfg.seed, streams::INIT);
    let learner = Learner::new(cfg, env.spec(), &mut rng).unwrap();
    let mut env = make_env(&cfg.env).unwrap();
    let mut rngs = RolloutRngs {
        env: stream_rng(cfg.seed, streams::ENV),
        explore: stream_rng(cfg.seed, streams::EXPLORE),
        noise: stream_rng(cfg.seed, streams::NOISE),
    };
    let eps_list = (0..count)
        .map(|_| collect_episode(env.as_mut(), &learner.utility, &learner.params, cfg.hierarchy_dim, eps, &mut rngs).unwrap())
        .collect();
    (learner, eps_list)
}

/// Perturbs every parameter so that targets and live nets differ.
fn perturb(store: &mut ParamStore, seed: u64) {
    use rand::Rng;
    let mut rng = stream_rng(seed, 99);
    let names: Vec<String> = store.names().map(str::to_string).collect();
    for n in names {
        let mut v = store.value(&n).unwrap().clone();
        for x in v.as_mut_slice() {
            *x += rng.random_range(-0.2..0.2);
        }
        store.set_value(&n, v).unwrap();
    }
}

/// TD loss computed one transition at a time with single-sample helpers.
fn scalar_td_loss(l: &Learner, batch: &[Episode]) -> f64 {
    let h = l.mixer.hierarchy();
    let mix = |store: &ParamStore, s: &[f64], noise: &[f64], q: &[f64]| -> f64 {
        match l.mixer.kind() {
            MixerKind::Vdn => q.iter().sum(),
            MixerKind::Qmix | MixerKind::QmixLarge => qmix_mix(&l.mixer, store, s, q).unwrap().q_tot,
            _ => {
                let z = hierarchy_forward(store, h.unwrap(), s, noise).unwrap().z;
                mnmpg_mix(&l.mixer, store, &z, s, q, false).unwrap().q_tot
            }
        }
    };
    let mut total = 0.0;
    let mut count = 0;
    for ep in batch {
        for t in &ep.transitions {
            let n = t.actions.len();
            let q: Vec<f64> = (0..n)
                .map(|i| {
                    let last = t.last_actions.as_ref().map(|a| a[i]);
                    utility_q(&l.params, &l.utility, &t.obs[i], last, i).unwrap().q[t.actions[i]]
                })
                .collect();
            let q_tot = mix(&l.params, &t.s, &t.eps_noise, &q);
            let best: Vec<f64> = (0..n)
                .map(|i| {
                    let q = utility_q(&l.targets.params, &l.utility, &t.obs_next[i], Some(t.actions[i]), i).unwrap().q;
                    q.into_iter().fold(f64::NEG_INFINITY, f64::max)
                })
                .collect();
            let boot = mix(&l.targets.params, &t.s_next, &t.eps_noise_next, &best);
            let y = t.reward + if t.done { 0.0 } else { l.gamma * boot };
            total += (q_tot - y).powi(2);
            count += 1;
        }
    }
    total / count as f64
}

#[test]
fn td_loss_matches_scalar_oracle() {
    for kind in [MixerKind::Mnmpg, MixerKind::Qmix, MixerKind::Vdn, MixerKind::MnmpgNoState] {
        let cfg = small_cfg("grid_gather", kind, 3);
        let (mut l, eps) = episodes(&cfg, 2, 1.0);
        perturb(&mut l.targets.params, 4);
        let refs: Vec<&Episode> = eps.iter().collect();
        let got = l.td_loss(&refs, true).unwrap().value;
        let want = scalar_td_loss(&l, &eps);
        assert!((got - want).abs() <= 1e-10 * want.abs().max(1.0), "{kind}: {got} vs {want}");
    }
}

#[test]
fn td_loss_gradients_match_finite_differences() {
    let cfg = small_cfg("grid_gather", MixerKind::Mnmpg, 5);
    let (mut l, eps) = episodes(&cfg, 1, 1.0);
    perturb(&mut l.targets.params, 6);
    let refs: Vec<&Episode> = eps.iter().collect();
    let loss = |store: &ParamStore| -> crate::Result<(Tape, Var)> {
        let mut probe = l.clone();
        probe.params = store.clone();
        let t = probe.td_loss(&refs, true)?;
        Ok((t.tape, t.loss))
    };
    let err = finite_diff_check(loss, &l.params, 1e-6).unwrap();
    assert!(err < 1e-4, "{err}");
}

#[test]
fn per_agent_max_equals_joint_argmax_target() {
    for kind in [MixerKind::Mnmpg, MixerKind::Qmix, MixerKind::Vdn] {
        let cfg = small_cfg("matrix3", kind, 7);
        let (l, eps) = episodes(&cfg, 4, 1.0);
        let refs: Vec<&Episode> = eps.iter().collect();
        let fb = l.flatten(&refs).unwrap();
        let fast = l.bootstrap_values(&fb, &l.targets.params).unwrap();
        for (row, t) in eps.iter().map(|e| &e.transitions[0]).enumerate() {
            let qs: Vec<Vec<f64>> = (0..2)
                .map(|i| utility_q(&l.targets.params, &l.utility, &t.obs_next[i], Some(t.actions[i]), i).unwrap().q)
                .collect();
            let mut joint = Vec::new();
            for a in 0..3 {
                for b in 0..3 {
                    joint.push(vec![qs[0][a], qs[1][b]]);
                }
            }
            let q = Matrix::from_rows(&joint).unwrap();
            let states = Matrix::from_rows(&[t.s_next.as_slice(); 9]).unwrap();
            let noise = Matrix::from_rows(&[t.eps_noise_next.as_slice(); 9]).unwrap();
            let all = l.mixer.evaluate(&l.targets.params, &states, &noise, &q).unwrap();
            let best = all.into_iter().fold(f64::NEG_INFINITY, f64::max);
            assert!((fast[row] - best).abs() < 1e-12, "{kind}");
        }
    }
}

#[test]
fn repeated_steps_overfit_a_fixed_batch() {
    let mut cfg = TrainerConfig::new("matrix3", MixerKind::Mnmpg, 8, 0);
    cfg.lr = 5e-3;
    let (mut l, eps) = episodes(&cfg, 32, 1.0);
    let refs: Vec<&Episode> = eps.iter().collect();
    let first = l.td_loss(&refs, true).unwrap().value;
    for _ in 0..50 {
        l.ql_step(&refs, true).unwrap();
    }
    let last = l.td_loss(&refs, true).unwrap().value;
    assert!(last < 0.5 * first, "{first} -> {last}");
}

#[test]
fn exercise_move_keeps_theta_fixed() {
    let cfg = small_cfg("matrix3", MixerKind::Mnmpg, 9);
    let (mut l, eps) = episodes(&cfg, 8, 1.0);
    let before = l.params.clone();
    l.exercise_move(&eps).unwrap();
    assert!(l.params.values_equal(&before, HIERARCHY_PREFIX));
    assert!(!l.params.values_equal(&before, "phi"));
    assert!(!l.params.values_equal(&before, "zeta"));
    assert!(l.opt.square_avg("theta.l0.w").is_none());
}

#[test]
fn no_grad_variant_never_moves_theta_by_td() {
    let cfg = small_cfg("matrix3", MixerKind::MnmpgNoGrad, 10);
    let (mut l, eps) = episodes(&cfg, 8, 1.0);
    let refs: Vec<&Episode> = eps.iter().collect();
    let before = l.params.clone();
    for _ in 0..3 {
        l.ql_step(&refs, true).unwrap();
    }
    assert!(l.params.values_equal(&before, HIERARCHY_PREFIX));
}

#[test]
fn meta_steps_are_linear_in_reward() {
    let cfg = small_cfg("grid_gather", MixerKind::Mnmpg, 11);
    let (l, eps) = episodes(&cfg, 2, 1.0);
    let plus = l.meta_delta(&eps, 0.7).unwrap();
    let minus = l.meta_delta(&eps, -0.7).unwrap();
    assert!(plus.iter().any(|&d| d != 0.0));
    for (p, m) in plus.iter().zip(&minus) {
        assert_eq!(*p, -*m);
    }
    let mut zero = l.clone();
    assert!(!zero.meta_update(&eps, 0.0).unwrap());
    assert_eq!(zero.params, l.params);
}

#[test]
fn meta_gradient_matches_scalar_log_density() {
    let cfg = small_cfg("grid_gather", MixerKind::Mnmpg, 12);
    let (l, eps) = episodes(&cfg, 1, 1.0);
    let h = l.mixer.hierarchy().unwrap();
    let mut acc = l.params.clone();
    acc.zero_grads();
    for t in &eps[0].transitions {
        let z = hierarchy_forward(&l.params, h, &t.s, &t.eps_noise).unwrap().z;
        let mut out = crate::mixer::hierarchy_logpdf(&l.params, h, &t.s, &z).unwrap();
        out.tape.backward(out.output, &[1.0], &mut acc).unwrap();
    }
    let want = acc.flat_grads(HIERARCHY_PREFIX);
    let got = l.meta_gradient(&eps).unwrap();
    for (g, w) in got.iter().zip(&want) {
        assert!((g - w).abs() <= 1e-10 * w.abs().max(1.0));
    }
}

#[test]
fn meta_iteration_counts_and_buffers_both_batches() {
    let mut cfg = small_cfg("matrix3", MixerKind::Mnmpg, 13);
    cfg.meta_batch_episodes = Some(5);
    let mut t = Trainer::new(cfg).unwrap();
    t.meta_iteration().unwrap();
    assert_eq!(t.env_steps, 10);
    assert_eq!(t.buffer.len(), 10);
    assert_eq!(t.train_steps, 4);
}

#[test]
fn training_runs_are_deterministic() {
    let run = |seed| {
        let mut cfg = small_cfg("matrix3", MixerKind::Mnmpg, seed);
        cfg.total_env_steps = 300;
        cfg.eval_interval = 100;
        cfg.batch_episodes = 8;
        cfg.meta_batch_episodes = Some(8);
        cfg.meta_interval_env_steps = 50;
        let mut t = Trainer::new(cfg).unwrap();
        t.run().unwrap();
        (t.metrics, t.learner.params, t.visitation)
    };
    let a = run(1);
    let b = run(1);
    assert_eq!(a.0, b.0);
    assert_eq!(a.1, b.1);
    assert_eq!(a.2, b.2);
    assert_ne!(a.1, run(2).1);
    assert_eq!(a.0.iter().map(|r| r.env_steps).collect::<Vec<_>>(), vec![100, 200, 300]);
}

#[test]
fn baseline_runs_never_meta_step() {
    let mut cfg = small_cfg("matrix3", MixerKind::Qmix, 14);
    cfg.total_env_steps = 64;
    cfg.eval_interval = 64;
    cfg.batch_episodes = 16;
    let mut t = Trainer::new(cfg).unwrap();
    t.run().unwrap();
    assert_eq!(t.buffer.total_added(), 64);
    assert_eq!(t.train_steps, 64 - 15);
    assert!(t.metrics.iter().all(|r| r.meta_reward.is_none()));
    assert_eq!(t.metrics.len(), 1);
}

#[test]
fn zero_budget_produces_no_metrics() {
    let mut t = Trainer::new(small_cfg("matrix3", MixerKind::Vdn, 1)).unwrap();
    t.run().unwrap();
    assert!(t.metrics.is_empty());
    assert_eq!(t.env_steps, 0);
}

#[test]
fn grid_episodes_respect_horizon_and_noise_chain() {
    let cfg = small_cfg("grid_gather", MixerKind::Mnmpg, 15);
    let (_, eps) = episodes(&cfg, 3, 1.0);
    for e in &eps {
        assert!(e.len() <= 30);
        assert!(e.transitions.last().unwrap().done);
        assert!(e.transitions[..e.len() - 1].iter().all(|t| !t.done));
        assert!(e.transitions[0].last_actions.is_none());
        for w in e.transitions.windows(2) {
            assert_eq!(w[0].eps_noise_next, w[1].eps_noise);
            assert_eq!(w[1].last_actions.as_ref(), Some(&w[0].actions));
        }
        let sum: f64 = e.transitions.iter().map(|t| t.reward).sum();
        assert_eq!(sum, e.ret);
    }
}
