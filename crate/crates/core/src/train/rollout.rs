use std::collections::BTreeMap;
use std::sync::Arc;

use rand::{Rng, RngCore};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::buffer::{Episode, Transition};
use crate::agents::{act, LocalView, UtilityNet};
use crate::envs::DecPomdp;
use crate::error::Result;
use crate::gradcore::ParamStore;

/// Random streams consumed while acting.
#[derive(Clone, Debug)]
pub struct RolloutRngs {
    /// Seeds each reset.
    pub env: ChaCha8Rng,
    pub explore: ChaCha8Rng,
    /// Hierarchy noise stored with each transition.
    pub noise: ChaCha8Rng,
}

fn draw_noise(rng: &mut ChaCha8Rng, k: usize) -> Vec<f64> {
    (0..k).map(|_| rng.sample(StandardNormal)).collect()
}

fn joint_action(
    utility: &UtilityNet,
    params: &ParamStore,
    obs: &[Vec<f64>],
    last: Option<&[usize]>,
    eps: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<usize>> {
    let views = obs
        .iter()
        .enumerate()
        .map(|(i, o)| LocalView::new(utility, o, last.map(|l| l[i]), i))
        .collect::<Result<Vec<_>>>()?;
    act(utility, params, &views, eps, rng)
}

/// Plays one epsilon-greedy episode. Each agent acts on its own observation,
/// last action and id only.
pub fn collect_episode(
    env: &mut dyn DecPomdp,
    utility: &UtilityNet,
    params: &ParamStore,
    noise_dim: usize,
    eps: f64,
    rngs: &mut RolloutRngs,
) -> Result<Episode> {
    let (s, obs) = env.reset(rngs.env.next_u64());
    let mut s = Arc::new(s);
    let mut obs = Arc::new(obs);
    let mut noise = draw_noise(&mut rngs.noise, noise_dim);
    let mut last: Option<Vec<usize>> = None;
    let mut transitions = Vec::new();
    let mut ret = 0.0;
    let limit = env.spec().max_episode_len;
    loop {
        let actions = joint_action(utility, params, &obs, last.as_deref(), eps, &mut rngs.explore)?;
        let step = env.step(&actions)?;
        let done = step.done || transitions.len() + 1 >= limit;
        let noise_next = draw_noise(&mut rngs.noise, noise_dim);
        let s_next = Arc::new(step.next_state);
        let obs_next = Arc::new(step.next_obs);
        ret += step.reward;
        transitions.push(Transition {
            s,
            obs,
            last_actions: last,
            actions: actions.clone(),
            reward: step.reward,
            s_next: s_next.clone(),
            obs_next: obs_next.clone(),
            eps_noise: noise,
            eps_noise_next: noise_next.clone(),
            done,
        });
        if done {
            return Ok(Episode {
                transitions,
                ret,
                win: step.win.unwrap_or(false),
            });
        }
        s = s_next;
        obs = obs_next;
        noise = noise_next;
        last = Some(actions);
    }
}

/// Greedy evaluation summary.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EvalResult {
    pub mean_return: f64,
    pub win_rate: f64,
    pub returns: Vec<f64>,
    /// Visits of each state index at every decision step.
    pub visitation: BTreeMap<usize, u64>,
}

/// Runs `episodes` greedy, decentralized episodes.
pub fn evaluate_policy(
    env: &mut dyn DecPomdp,
    utility: &UtilityNet,
    params: &ParamStore,
    episodes: usize,
    rng: &mut ChaCha8Rng,
) -> Result<EvalResult> {
    let mut out = EvalResult::default();
    let mut wins = 0usize;
    let limit = env.spec().max_episode_len;
    let enumerable = env.num_states().is_some();
    for _ in 0..episodes {
        let (mut s, mut obs) = env.reset(rng.next_u64());
        let mut last: Option<Vec<usize>> = None;
        let mut ret = 0.0;
        for t in 0..limit {
            if enumerable {
                *out.visitation.entry(env.state_index(&s)?).or_insert(0) += 1;
            }
            let actions = joint_action(utility, params, &obs, last.as_deref(), 0.0, rng)?;
            let step = env.step(&actions)?;
            ret += step.reward;
            if step.done || t + 1 == limit {
                if step.win.unwrap_or(false) {
                    wins += 1;
                }
                break;
            }
            s = step.next_state;
            obs = step.next_obs;
            last = Some(actions);
        }
        out.returns.push(ret);
    }
    if episodes > 0 {
        out.mean_return = out.returns.iter().sum::<f64>() / episodes as f64;
        out.win_rate = wins as f64 / episodes as f64;
    }
    Ok(out)
}
