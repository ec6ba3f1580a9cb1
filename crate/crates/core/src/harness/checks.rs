//! Property and learning checks, shared by `mnmpg check` and the acceptance
//! tests. Every check returns a [`CheckOutcome`] instead of panicking so that
//! a failing criterion is reported next to the others.

use std::fmt;
use std::path::PathBuf;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{compare::median, run_experiment, ExperimentConfig};
use crate::agents::{utility_q, UtilityNet};
use crate::envs::{make_env, MatrixGame, MatrixGameSpec};
use crate::error::Result;
use crate::gradcore::{finite_diff_check_filtered, Matrix, ParamStore, Tape, Var};
use crate::mixer::{Mixer, MixerDims, MixerKind, Track, HIERARCHY_PREFIX, MIXER_PREFIX};
use crate::train::{collect_episode, Episode, Learner, RolloutRngs, Trainer, TrainerConfig};

/// Result of one numbered criterion.
#[derive(Clone, Debug, PartialEq)]
pub struct CheckOutcome {
    pub criterion: u8,
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl fmt::Display for CheckOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let verdict = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "criterion {:>2} {:<22} {verdict}  {}", self.criterion, self.name, self.detail)
    }
}

fn outcome(criterion: u8, name: &'static str, passed: bool, detail: String) -> CheckOutcome {
    CheckOutcome {
        criterion,
        name,
        passed,
        detail,
    }
}

fn uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize, lo: f64, hi: f64) -> Matrix {
    let data = (0..rows * cols).map(|_| rng.random_range(lo..hi)).collect();
    Matrix::from_vec(rows, cols, data).expect("sized above")
}

fn normal(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    let data = (0..rows * cols).map(|_| rng.sample(StandardNormal)).collect();
    Matrix::from_vec(rows, cols, data).expect("sized above")
}

fn small_dims(n_agents: usize, state_dim: usize) -> MixerDims {
    MixerDims {
        n_agents,
        state_dim,
        hierarchy_dim: 3,
        hierarchy_hidden: 6,
        decoder_dim: 4,
        embed: 4,
    }
}

/// Multiplies every parameter by its own random factor so that checks do not
/// only see freshly initialized scales.
fn rescale(store: &mut ParamStore, rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> Result<()> {
    let names: Vec<String> = store.names().map(str::to_string).collect();
    for name in names {
        let k = rng.random_range(lo..hi);
        let v = store.value(&name)?.map(|x| x * k);
        store.set_value(&name, v)?;
    }
    Ok(())
}

fn squared_error(tape: &mut Tape, out: Var, target: Matrix) -> Result<Var> {
    let y = tape.input(target);
    let d = tape.sub(out, y)?;
    let sq = tape.square(d);
    tape.mean_all(sq)
}

/// Criterion 1: reverse-mode gradients against central differences for the
/// utility network, both mixers (including the path into `theta` through
/// the reparameterized sample) and the hierarchy log-density.
pub fn gradient_suite(draws: u64) -> Result<CheckOutcome> {
    const STEP: f64 = 1e-5;
    const TOL: f64 = 1e-4;
    let mut worst = [0.0f64; 4];
    for draw in 0..draws {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + draw);

        let net = UtilityNet::new(5, 3, 2, 8);
        let mut store = ParamStore::new();
        net.init(&mut store, &mut rng)?;
        let x = uniform(&mut rng, 4, net.input_dim(), -1.0, 1.0);
        let target = uniform(&mut rng, 4, 3, -1.0, 1.0);
        let loss = |s: &ParamStore| -> Result<(Tape, Var)> {
            let mut tape = Tape::new();
            let xv = tape.input(x.clone());
            let q = net.forward(&mut tape, s, xv, true)?;
            let l = squared_error(&mut tape, q, target.clone())?;
            Ok((tape, l))
        };
        worst[0] = worst[0].max(finite_diff_check_filtered(loss, &store, STEP, |_| true)?);

        for (slot, kind) in [(1, MixerKind::Qmix), (2, MixerKind::Mnmpg)] {
            let mixer = Mixer::new(kind, small_dims(2, 4));
            let mut store = ParamStore::new();
            mixer.init(&mut store, &mut rng)?;
            let states = uniform(&mut rng, 3, 4, -1.0, 1.0);
            let noise = normal(&mut rng, 3, 3);
            let q = uniform(&mut rng, 3, 2, -2.0, 2.0);
            let target = uniform(&mut rng, 3, 1, -2.0, 2.0);
            let loss = |s: &ParamStore| -> Result<(Tape, Var)> {
                let mut tape = Tape::new();
                let sv = tape.input(states.clone());
                let qv = tape.input(q.clone());
                let out = mixer.forward(&mut tape, s, sv, &noise, qv, Track::ALL)?;
                let l = squared_error(&mut tape, out.q_tot, target.clone())?;
                Ok((tape, l))
            };
            worst[slot] = worst[slot].max(finite_diff_check_filtered(loss, &store, STEP, |_| true)?);
        }

        let mixer = Mixer::new(MixerKind::Mnmpg, small_dims(2, 4));
        let h = mixer.hierarchy().expect("mnmpg has a hierarchy").clone();
        let mut store = ParamStore::new();
        h.init(&mut store, &mut rng)?;
        let states = uniform(&mut rng, 3, 4, -1.0, 1.0);
        let z = normal(&mut rng, 3, 3);
        let loss = |s: &ParamStore| -> Result<(Tape, Var)> {
            let mut tape = Tape::new();
            let sv = tape.input(states.clone());
            let lp = h.log_density(&mut tape, s, sv, &z, true)?;
            let out = tape.sum_all(lp);
            Ok((tape, out))
        };
        worst[3] = worst[3].max(finite_diff_check_filtered(loss, &store, STEP, |_| true)?);
    }
    let passed = worst.iter().all(|&w| w < TOL);
    Ok(outcome(
        1,
        "gradient suite",
        passed,
        format!(
            "max rel err over {draws} draws: utility {:.1e}, qmix {:.1e}, mnmpg {:.1e}, logpdf {:.1e} (tol {TOL:.0e})",
            worst[0], worst[1], worst[2], worst[3]
        ),
    ))
}

/// Smallest `dQ_tot/dQ_i` over `configs` random configurations per mixer.
pub fn min_mixing_slope(kind: MixerKind, configs: usize, seed: u64) -> Result<f64> {
    const ROWS: usize = 10;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut least = f64::INFINITY;
    for _ in 0..configs.div_ceil(ROWS) {
        let n = rng.random_range(2..5);
        let state_dim = rng.random_range(1..6);
        let mixer = Mixer::new(kind, small_dims(n, state_dim));
        let mut store = ParamStore::new();
        mixer.init(&mut store, &mut rng)?;
        rescale(&mut store, &mut rng, 0.2, 4.0)?;
        let states = uniform(&mut rng, ROWS, state_dim, -3.0, 3.0);
        let noise = normal(&mut rng, ROWS, 3);
        let q = uniform(&mut rng, ROWS, n, -10.0, 10.0);
        let mut tape = Tape::new();
        let sv = tape.input(states);
        let qv = tape.input(q);
        let out = mixer.forward(&mut tape, &store, sv, &noise, qv, Track::NONE)?;
        let g = tape.backward_inputs(out.q_tot, &[1.0; ROWS])?;
        let slopes = g.get_or_zeros(qv, (ROWS, n));
        least = slopes.as_slice().iter().copied().fold(least, f64::min);
    }
    Ok(least)
}

/// Criterion 2: non-negative mixing slopes.
pub fn monotonicity(configs: usize) -> Result<CheckOutcome> {
    let mut parts = Vec::new();
    let mut passed = true;
    for (i, kind) in [MixerKind::Qmix, MixerKind::Mnmpg, MixerKind::MnmpgNoState].into_iter().enumerate() {
        let least = min_mixing_slope(kind, configs, 2000 + i as u64)?;
        passed &= least >= -1e-12;
        parts.push(format!("{kind} min {least:.3e}"));
    }
    Ok(outcome(
        2,
        "monotonicity",
        passed,
        format!("dQtot/dQi over {configs} configs each: {}", parts.join(", ")),
    ))
}

/// IGM violations over `draws` random draws of utilities, mixer, state and
/// noise with two agents and three actions.
pub fn igm_violations(kind: MixerKind, draws: usize, seed: u64) -> Result<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let net = UtilityNet::new(4, 3, 2, 8);
    let mixer = Mixer::new(kind, small_dims(2, 4));
    let mut bad = 0;
    for _ in 0..draws {
        let mut store = ParamStore::new();
        net.init(&mut store, &mut rng)?;
        mixer.init(&mut store, &mut rng)?;
        rescale(&mut store, &mut rng, 0.5, 3.0)?;
        let qs = (0..2)
            .map(|i| {
                let obs: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
                let last = rng.random_bool(0.5).then(|| rng.random_range(0..3));
                Ok(utility_q(&store, &net, &obs, last, i)?.q)
            })
            .collect::<Result<Vec<_>>>()?;
        let s: Vec<f64> = (0..4).map(|_| rng.random_range(-2.0..2.0)).collect();
        let noise: Vec<f64> = (0..3).map(|_| rng.sample(StandardNormal)).collect();
        if !mixer.igm_check(&store, &s, &noise, &qs)? {
            bad += 1;
        }
    }
    Ok(bad)
}

/// Criterion 3: brute-force joint argmax equals the per-agent argmaxes.
pub fn igm(draws: usize) -> Result<CheckOutcome> {
    let mut parts = Vec::new();
    let mut total = 0;
    for (i, kind) in [MixerKind::Mnmpg, MixerKind::Qmix].into_iter().enumerate() {
        let bad = igm_violations(kind, draws, 3000 + i as u64)?;
        total += bad;
        parts.push(format!("{kind} {bad}/{draws}"));
    }
    Ok(outcome(3, "IGM", total == 0, format!("violations: {}", parts.join(", "))))
}

/// Settings of the meta-gradient estimator check.
#[derive(Clone, Debug)]
pub struct MetaEstimatorConfig {
    pub samples: usize,
    /// Central-difference half width on each `theta` coordinate.
    pub step: f64,
    /// Exploration rate of the rollouts and of the expected returns.
    pub eps: f64,
    /// Environment steps of ordinary training before `phi`, `zeta` are frozen
    /// (warms the RMSprop statistics used by the exercise move).
    pub warmup_env_steps: u64,
    pub trainer: TrainerConfig,
}

/// The default warm-up seed and length leave the greedy actions close enough
/// to a tie that the exercise move flips them on a good share of draws; far
/// from a tie `E[R1 - R0]` is flat in `theta` and both estimates are zero.
impl Default for MetaEstimatorConfig {
    fn default() -> Self {
        let mut trainer = TrainerConfig::new("matrix3", MixerKind::Mnmpg, 34, 0);
        trainer.hierarchy_hidden = 0;
        trainer.utility_hidden = 16;
        trainer.mixer_embed = 8;
        trainer.decoder_dim = 8;
        trainer.meta_batch_episodes = Some(8);
        trainer.batch_episodes = 8;
        trainer.lr = 5e-3;
        Self {
            samples: 10_000,
            step: 0.05,
            eps: 0.3,
            warmup_env_steps: 150,
            trainer,
        }
    }
}

/// Per-coordinate estimates of the meta-objective gradient.
#[derive(Clone, Debug, PartialEq)]
pub struct MetaEstimatorReport {
    pub reinforce_mean: Vec<f64>,
    pub reinforce_se: Vec<f64>,
    pub fd_mean: Vec<f64>,
    pub fd_se: Vec<f64>,
    /// Fraction of draws where the exercise move changed the expected return.
    pub changed: f64,
}

impl MetaEstimatorReport {
    /// Coordinates whose finite difference exceeds three standard errors.
    pub fn significant(&self) -> Vec<usize> {
        (0..self.fd_mean.len())
            .filter(|&k| self.fd_mean[k].abs() > 3.0 * self.fd_se[k])
            .collect()
    }

    pub fn disagreements(&self) -> Vec<usize> {
        self.significant()
            .into_iter()
            .filter(|&k| self.reinforce_mean[k].signum() != self.fd_mean[k].signum())
            .collect()
    }
}

/// Expected return of the epsilon-greedy joint policy in the matrix game.
fn matrix_expected_return(learner: &Learner, game: &MatrixGame, eps: f64) -> Result<f64> {
    let a = learner.utility.action_count;
    let probs = (0..2)
        .map(|i| {
            let q = utility_q(&learner.params, &learner.utility, &[1.0], None, i)?.q;
            let best = crate::agents::greedy(&q)?;
            Ok((0..a)
                .map(|j| eps / a as f64 + if j == best { 1.0 - eps } else { 0.0 })
                .collect::<Vec<f64>>())
        })
        .collect::<Result<Vec<_>>>()?;
    let mut r = 0.0;
    for (j, p) in probs[0].iter().enumerate() {
        for (k, q) in probs[1].iter().enumerate() {
            r += p * q * game.payoff(j, k);
        }
    }
    Ok(r)
}

fn mean_se(samples: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let n = samples.len() as f64;
    let dim = samples.first().map_or(0, Vec::len);
    let mut mean = vec![0.0; dim];
    for s in samples {
        for (m, v) in mean.iter_mut().zip(s) {
            *m += v / n;
        }
    }
    let mut var = vec![0.0; dim];
    for s in samples {
        for ((v, x), m) in var.iter_mut().zip(s).zip(&mean) {
            *v += (x - m) * (x - m) / (n - 1.0).max(1.0);
        }
    }
    let se = var.iter().map(|v| (v / n).sqrt()).collect();
    (mean, se)
}

/// Estimates the gradient of `J(theta) = E[R1 - R0]` on the matrix game
/// with `phi`, `zeta` frozen, two ways:
///
/// * REINFORCE: `(R1 - R0) * sum_t grad log pi_theta(z_t | s_t)` per draw;
/// * central finite differences of `J`, with common random numbers.
///
/// Each draw collects D0 with the frozen policy, runs the exercise move on it
/// and scores the updated policy. Because the game lasts one step, `R0` and
/// `R1` are the exact expected returns of the epsilon-greedy policies before
/// and after the exercise move rather than D1 rollout averages (same
/// expectation, less variance).
pub fn meta_gradient_estimates(cfg: &MetaEstimatorConfig) -> Result<MetaEstimatorReport> {
    let mut trainer_cfg = cfg.trainer.clone();
    trainer_cfg.total_env_steps = cfg.warmup_env_steps;
    trainer_cfg.eval_interval = cfg.warmup_env_steps.max(1);
    trainer_cfg.eval_episodes = 1;
    let mut trainer = Trainer::new(trainer_cfg)?;
    trainer.run()?;
    let base = trainer.learner.clone();
    let game = MatrixGame::new(MatrixGameSpec::default())?;
    let r0 = matrix_expected_return(&base, &game, cfg.eps)?;
    let theta0 = base.params.flat_values(HIERARCHY_PREFIX);
    let dim = theta0.len();
    let m = cfg.trainer.meta_batch();

    let score = |theta: &[f64], d0: &[Episode]| -> Result<f64> {
        let mut l = base.clone();
        l.params.set_flat_values(HIERARCHY_PREFIX, theta)?;
        l.exercise_move(d0)?;
        matrix_expected_return(&l, &game, cfg.eps)
    };

    let mut env = make_env("matrix3")?;
    let mut seeds = ChaCha8Rng::seed_from_u64(cfg.trainer.seed ^ 0x5eed);
    let mut reinforce = Vec::with_capacity(cfg.samples);
    let mut fd = Vec::with_capacity(cfg.samples);
    let mut changed = 0.0;
    for _ in 0..cfg.samples {
        let draw = seeds.next_u64();
        let mut rngs = RolloutRngs {
            env: ChaCha8Rng::seed_from_u64(draw),
            explore: ChaCha8Rng::seed_from_u64(draw ^ 1),
            noise: ChaCha8Rng::seed_from_u64(draw ^ 2),
        };
        let d0 = (0..m)
            .map(|_| collect_episode(env.as_mut(), &base.utility, &base.params, base.noise_dim, cfg.eps, &mut rngs))
            .collect::<Result<Vec<_>>>()?;
        let r1 = score(&theta0, &d0)?;
        if r1 != r0 {
            changed += 1.0;
        }
        let g = base.meta_gradient(&d0)?;
        reinforce.push(g.iter().map(|gi| (r1 - r0) * gi).collect::<Vec<f64>>());
        let mut row = Vec::with_capacity(dim);
        for k in 0..dim {
            let mut plus = theta0.clone();
            plus[k] += cfg.step;
            let mut minus = theta0.clone();
            minus[k] -= cfg.step;
            row.push((score(&plus, &d0)? - score(&minus, &d0)?) / (2.0 * cfg.step));
        }
        fd.push(row);
    }
    let (reinforce_mean, reinforce_se) = mean_se(&reinforce);
    let (fd_mean, fd_se) = mean_se(&fd);
    Ok(MetaEstimatorReport {
        reinforce_mean,
        reinforce_se,
        fd_mean,
        fd_se,
        changed: changed / cfg.samples.max(1) as f64,
    })
}

/// Criterion 4: REINFORCE and finite differences agree in sign wherever the
/// finite difference is statistically clear. At least one coordinate must be
/// clear, otherwise the comparison says nothing.
pub fn meta_gradient_estimator(cfg: &MetaEstimatorConfig) -> Result<CheckOutcome> {
    let r = meta_gradient_estimates(cfg)?;
    let sig = r.significant();
    let bad = r.disagreements();
    let coords: Vec<String> = (0..r.fd_mean.len())
        .map(|k| format!("{:+.3e}/{:+.3e}", r.reinforce_mean[k], r.fd_mean[k]))
        .collect();
    Ok(outcome(
        4,
        "meta-gradient sign",
        !sig.is_empty() && bad.is_empty(),
        format!(
            "{} samples, exercise move changed the return on {:.0}% of draws; {} of {} coordinates significant, {} sign disagreements; reinforce/fd: {}",
            cfg.samples,
            100.0 * r.changed,
            sig.len(),
            r.fd_mean.len(),
            bad.len(),
            coords.join(" ")
        ),
    ))
}

/// Criterion 5: the hierarchy update is linear in the meta reward.
pub fn meta_update_exactness() -> Result<CheckOutcome> {
    let mut cfg = TrainerConfig::new("grid_gather", MixerKind::Mnmpg, 5, 0);
    cfg.meta_batch_episodes = Some(2);
    let mut trainer = Trainer::new(cfg)?;
    let d0 = trainer.collect(2)?;
    let base = trainer.learner.clone();
    let bits = |s: &ParamStore, prefix: &str| -> Vec<u64> { s.flat_values(prefix).iter().map(|v| v.to_bits()).collect() };

    let mut zero = base.clone();
    zero.meta_update(&d0, 0.0)?;
    let zero_ok = bits(&zero.params, "") == bits(&base.params, "");

    let c = 3.5;
    let plus = base.meta_delta(&d0, c)?;
    let minus = base.meta_delta(&d0, -c)?;
    let exact = plus.iter().zip(&minus).all(|(p, m)| p.to_bits() == (-m).to_bits());
    let nonzero = plus.iter().filter(|d| **d != 0.0).count();

    let mut up = base.clone();
    up.meta_update(&d0, c)?;
    let mut down = base.clone();
    down.meta_update(&d0, -c)?;
    let theta = base.params.flat_values(HIERARCHY_PREFIX);
    let mut worst_ulps = 0.0f64;
    for ((t, u), d) in theta
        .iter()
        .zip(up.params.flat_values(HIERARCHY_PREFIX))
        .zip(down.params.flat_values(HIERARCHY_PREFIX))
    {
        let (du, dd) = (u - t, d - t);
        let ulp = f64::EPSILON * t.abs().max(du.abs()).max(f64::MIN_POSITIVE);
        worst_ulps = worst_ulps.max((du + dd).abs() / ulp);
    }
    let others_fixed = ["phi", MIXER_PREFIX]
        .iter()
        .all(|p| bits(&up.params, p) == bits(&base.params, p) && bits(&down.params, p) == bits(&base.params, p));
    let passed = zero_ok && exact && nonzero > 0 && worst_ulps <= 1.0 && others_fixed;
    Ok(outcome(
        5,
        "meta update exactness",
        passed,
        format!(
            "reward 0 keeps params bit-identical: {zero_ok}; +/-c steps exact negatives: {exact} ({nonzero} nonzero); \
             applied deltas within {worst_ulps:.1} ulp; phi/zeta untouched: {others_fixed}"
        ),
    ))
}

/// Criterion 6: ablation variants are wired as described.
pub fn ablation_wiring() -> Result<CheckOutcome> {
    // No gradient into theta from the TD loss.
    let theta_grad = |kind: MixerKind| -> Result<Vec<f64>> {
        let mut cfg = TrainerConfig::new("grid_gather", kind, 6, 0);
        cfg.meta_batch_episodes = Some(2);
        let mut trainer = Trainer::new(cfg)?;
        let eps = trainer.collect(2)?;
        let refs: Vec<&Episode> = eps.iter().collect();
        let learner = &trainer.learner;
        let mut l = learner.td_loss(&refs, true)?;
        let mut store = learner.params.clone();
        store.zero_grads();
        l.tape.backward(l.loss, &[1.0], &mut store)?;
        Ok(store.flat_grads(HIERARCHY_PREFIX))
    };
    let blocked = theta_grad(MixerKind::MnmpgNoGrad)?;
    let no_grad_zero = blocked.iter().all(|&g| g == 0.0);
    let live_nonzero = theta_grad(MixerKind::Mnmpg)?.iter().any(|&g| g != 0.0);

    // Hypernetwork outputs ignore the state when z is fixed.
    let mut rng = ChaCha8Rng::seed_from_u64(60);
    let mixer = Mixer::new(MixerKind::MnmpgNoState, MixerDims::new(2, 5));
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let mut store = ParamStore::new();
        mixer.init(&mut store, &mut rng)?;
        let z = normal(&mut rng, 1, 3);
        let q = uniform(&mut rng, 1, 2, -5.0, 5.0);
        let mixed = |s: Matrix| -> Result<f64> {
            let mut tape = Tape::new();
            let sv = tape.input(s);
            let zv = tape.input(z.clone());
            let qv = tape.input(q.clone());
            let out = mixer.mix(&mut tape, &store, sv, Some(zv), qv, false)?;
            Ok(tape.scalar(out.mixed.expect("hypernetwork mixers report the mixed term")))
        };
        let a = mixed(uniform(&mut rng, 1, 5, -3.0, 3.0))?;
        let b = mixed(uniform(&mut rng, 1, 5, -3.0, 3.0))?;
        worst = worst.max((a - b).abs());
    }
    let no_state_ok = worst == 0.0;

    // Parameter-matched QMIX.
    let mut ratios = Vec::new();
    for env in ["matrix3", "grid_gather"] {
        let spec = make_env(env)?.spec().clone();
        let dims = TrainerConfig::new(env, MixerKind::Mnmpg, 0, 0).mixer_dims(&spec);
        let target = Mixer::new(MixerKind::Mnmpg, dims.clone()).param_count() as f64;
        let large = Mixer::new(MixerKind::QmixLarge, dims).param_count() as f64;
        ratios.push(large / target);
    }
    let large_ok = ratios.iter().all(|r| (r - 1.0).abs() <= 0.1);

    let passed = no_grad_zero && live_nonzero && no_state_ok && large_ok;
    Ok(outcome(
        6,
        "ablation wiring",
        passed,
        format!(
            "no_grad theta grads all zero: {no_grad_zero} (mnmpg nonzero: {live_nonzero}); \
             no_state max |dQ| under s change: {worst:e}; qmix_large/mnmpg params: {}",
            ratios.iter().map(|r| format!("{r:.3}")).collect::<Vec<_>>().join(", ")
        ),
    ))
}

/// Scratch directory removed on drop.
struct Scratch(PathBuf);

impl Scratch {
    fn new(tag: &str) -> Result<Self> {
        let nanos = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map_or(0, |d| d.as_nanos());
        let dir = std::env::temp_dir().join(format!("mnmpg-{tag}-{}-{nanos}", std::process::id()));
        std::fs::create_dir_all(&dir)?;
        Ok(Self(dir))
    }
}

impl Drop for Scratch {
    fn drop(&mut self) {
        let _ = std::fs::remove_dir_all(&self.0);
    }
}

/// Criterion 9: two runs of one config produce byte-identical files.
pub fn determinism() -> Result<CheckOutcome> {
    let scratch = Scratch::new("determinism")?;
    let mut identical = true;
    let mut files = 0;
    for (env, steps) in [("matrix3", 1500), ("grid_gather", 1500)] {
        let mut trainer = TrainerConfig::new(env, MixerKind::Mnmpg, 11, steps);
        trainer.eval_interval = 500;
        trainer.meta_interval_env_steps = 250;
        trainer.batch_episodes = 8;
        let dirs: Vec<PathBuf> = ["a", "b"].iter().map(|t| scratch.0.join(format!("{env}-{t}"))).collect();
        for d in &dirs {
            run_experiment(&ExperimentConfig {
                name: env.into(),
                output_dir: d.clone(),
                seeds: vec![11],
                trainer: trainer.clone(),
            })?;
        }
        for name in ["metrics_11.csv", "visitation_11.csv", "final_11"] {
            let a = std::fs::read(dirs[0].join(name))?;
            let b = std::fs::read(dirs[1].join(name))?;
            identical &= a == b;
            files += 1;
        }
    }
    Ok(outcome(
        9,
        "determinism",
        identical,
        format!("{files} file pairs compared, byte-identical: {identical}"),
    ))
}

/// Criterion 10: defaults of a minimal config.
pub fn defaults() -> Result<CheckOutcome> {
    let text = "env = \"matrix3\"\nmixer = \"mnmpg\"\nseed = 1\ntotal_env_steps = 10000\n";
    let c = ExperimentConfig::parse_str(text, "minimal.toml")?.trainer;
    let sched = c.eps_schedule();
    let linear = sched.eps_at(0) == 1.0
        && (sched.eps_at(c.eps_anneal_steps / 2) - 0.525).abs() < 1e-12
        && sched.eps_at(c.eps_anneal_steps) == 0.05
        && sched.eps_at(10 * c.eps_anneal_steps) == 0.05;
    let checks = [
        ("lr 5e-4", c.lr == 5e-4),
        ("alpha 0.99", c.rms_alpha == 0.99),
        ("eps 1.0->0.05 linear", linear),
        ("batch 32", c.batch_episodes == 32),
        ("eval 24", c.eval_episodes == 24),
        ("meta interval 500", c.meta_interval_env_steps == 500),
        ("K 3", c.hierarchy_dim == 3),
    ];
    let failed: Vec<&str> = checks.iter().filter(|(_, ok)| !ok).map(|(n, _)| *n).collect();
    Ok(outcome(
        10,
        "config defaults",
        failed.is_empty(),
        if failed.is_empty() {
            checks.iter().map(|(n, _)| *n).collect::<Vec<_>>().join(", ")
        } else {
            format!("wrong: {}", failed.join(", "))
        },
    ))
}

/// Final evaluation returns of `seeds` independent runs.
pub fn final_returns(base: &TrainerConfig, seeds: &[u64]) -> Result<Vec<f64>> {
    seeds
        .iter()
        .map(|&seed| {
            let mut t = Trainer::new(TrainerConfig { seed, ..base.clone() })?;
            t.run()?;
            Ok(t.metrics.last().map_or(f64::NAN, |r| r.eval_mean_return))
        })
        .collect()
}

fn fmt_returns(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:.3}")).collect::<Vec<_>>().join(", ")
}

pub const LEARNING_SEEDS: [u64; 5] = [1, 2, 3, 4, 5];

/// Training setup of the matrix-game learning check.
pub fn matrix_learning_config(mixer: MixerKind) -> TrainerConfig {
    let mut c = TrainerConfig::new("matrix3", mixer, 0, 20_000);
    c.eps_anneal_steps = 10_000;
    c.eval_interval = 2_000;
    c
}

/// Training setup of the grid learning check.
pub fn grid_learning_config(mixer: MixerKind) -> TrainerConfig {
    let mut c = TrainerConfig::new("grid_gather", mixer, 0, 100_000);
    c.eval_interval = 10_000;
    c
}

/// Final returns of MNMPG and QMIX over [`LEARNING_SEEDS`].
#[derive(Clone, Debug, PartialEq)]
pub struct LearningReport {
    pub optimal: f64,
    pub mnmpg: Vec<f64>,
    pub qmix: Vec<f64>,
}

impl LearningReport {
    pub fn run(env: &str, config: fn(MixerKind) -> TrainerConfig) -> Result<Self> {
        Ok(Self {
            optimal: make_env(env)?.optimal_return()?,
            mnmpg: final_returns(&config(MixerKind::Mnmpg), &LEARNING_SEEDS)?,
            qmix: final_returns(&config(MixerKind::Qmix), &LEARNING_SEEDS)?,
        })
    }

    pub fn mnmpg_median(&self) -> Result<f64> {
        median(&self.mnmpg)
    }

    pub fn qmix_median(&self) -> Result<f64> {
        median(&self.qmix)
    }

    fn detail(&self) -> Result<String> {
        Ok(format!(
            "optimal {:.3}; median final return mnmpg {:.3} [{}], qmix {:.3} [{}]",
            self.optimal,
            self.mnmpg_median()?,
            fmt_returns(&self.mnmpg),
            self.qmix_median()?,
            fmt_returns(&self.qmix)
        ))
    }
}

/// Criterion 7: MNMPG solves the nonmonotonic matrix game, QMIX does not
/// (or, if QMIX solves it too, MNMPG at least matches it).
pub fn matrix_learning_outcome(r: &LearningReport) -> Result<CheckOutcome> {
    let (m, q) = (r.mnmpg_median()?, r.qmix_median()?);
    let passed = m == r.optimal && (q <= 0.0 || m >= q);
    Ok(outcome(7, "matrix game learning", passed, r.detail()?))
}

pub fn matrix_learning() -> Result<CheckOutcome> {
    matrix_learning_outcome(&LearningReport::run("matrix3", matrix_learning_config)?)
}

/// Criterion 8: MNMPG gets within 10% of the optimal grid return and at
/// least matches QMIX.
pub fn grid_learning_outcome(r: &LearningReport) -> Result<CheckOutcome> {
    let (m, q) = (r.mnmpg_median()?, r.qmix_median()?);
    let passed = (m - r.optimal).abs() <= 0.1 * r.optimal.abs() && m >= q;
    Ok(outcome(8, "grid learning", passed, r.detail()?))
}

pub fn grid_learning() -> Result<CheckOutcome> {
    grid_learning_outcome(&LearningReport::run("grid_gather", grid_learning_config)?)
}

/// Criteria 1-6, 9 and 10.
pub fn invariant_suite() -> Result<Vec<CheckOutcome>> {
    Ok(vec![
        gradient_suite(10)?,
        monotonicity(1000)?,
        igm(200)?,
        meta_gradient_estimator(&MetaEstimatorConfig::default())?,
        meta_update_exactness()?,
        ablation_wiring()?,
        determinism()?,
        defaults()?,
    ])
}

/// Criteria 7 and 8.
pub fn learning_suite() -> Result<Vec<CheckOutcome>> {
    Ok(vec![matrix_learning()?, grid_learning()?])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quick_property_checks_pass() {
        assert!(gradient_suite(2).unwrap().passed);
        assert!(monotonicity(50).unwrap().passed);
        assert!(igm(20).unwrap().passed);
        assert!(meta_update_exactness().unwrap().passed);
        assert!(ablation_wiring().unwrap().passed);
        assert!(defaults().unwrap().passed);
    }

    #[test]
    fn outcome_line_is_greppable() {
        let o = outcome(3, "IGM", true, "ok".into());
        assert!(o.to_string().starts_with("criterion  3 IGM"));
        assert!(o.to_string().contains("PASS"));
    }
}
