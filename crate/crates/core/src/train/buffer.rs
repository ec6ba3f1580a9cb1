use std::collections::VecDeque;
use std::sync::Arc;

use rand::Rng;

use crate::error::{Error, Result};

/// Per-agent observations at one timestep.
pub type Observations = Arc<Vec<Vec<f64>>>;
/// Full state at one timestep.
pub type State = Arc<Vec<f64>>;

/// One environment step. The hierarchy noise is stored instead of `z` so
/// that `z` can be recomputed from the current (or target) hierarchy policy.
#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub s: State,
    pub obs: Observations,
    /// Previous joint action; `None` at the first step.
    pub last_actions: Option<Vec<usize>>,
    pub actions: Vec<usize>,
    pub reward: f64,
    pub s_next: State,
    pub obs_next: Observations,
    pub eps_noise: Vec<f64>,
    pub eps_noise_next: Vec<f64>,
    pub done: bool,
}

/// A complete episode.
#[derive(Clone, Debug, PartialEq)]
pub struct Episode {
    pub transitions: Vec<Transition>,
    /// Undiscounted sum of rewards.
    pub ret: f64,
    pub win: bool,
}

impl Episode {
    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }
}

/// Mean return of a set of episodes (0 for an empty set).
pub fn mean_return(episodes: &[Episode]) -> f64 {
    if episodes.is_empty() {
        return 0.0;
    }
    episodes.iter().map(|e| e.ret).sum::<f64>() / episodes.len() as f64
}

/// Ring buffer of complete episodes with uniform sampling.
#[derive(Clone, Debug)]
pub struct ReplayBuffer {
    capacity: usize,
    episodes: VecDeque<Episode>,
    total_added: u64,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity,
            episodes: VecDeque::with_capacity(capacity.min(1 << 14)),
            total_added: 0,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.episodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.episodes.is_empty()
    }

    /// Episodes ever inserted, including evicted ones.
    pub fn total_added(&self) -> u64 {
        self.total_added
    }

    pub fn push(&mut self, episode: Episode) -> Result<()> {
        match episode.transitions.last() {
            Some(t) if t.done => {}
            _ => return Err(Error::InvalidArgument("only complete episodes can be stored".into())),
        }
        if self.episodes.len() == self.capacity {
            self.episodes.pop_front();
        }
        self.episodes.push_back(episode);
        self.total_added += 1;
        Ok(())
    }

    pub fn extend(&mut self, episodes: impl IntoIterator<Item = Episode>) -> Result<()> {
        for e in episodes {
            self.push(e)?;
        }
        Ok(())
    }

    /// `min(n, len)` distinct episodes drawn uniformly.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Vec<&Episode>> {
        if self.episodes.is_empty() {
            return Err(Error::Empty("replay buffer"));
        }
        let k = n.min(self.episodes.len());
        let idx = rand::seq::index::sample(rng, self.episodes.len(), k);
        Ok(idx.iter().map(|i| &self.episodes[i]).collect())
    }

    pub fn iter(&self) -> impl Iterator<Item = &Episode> {
        self.episodes.iter()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn episode(ret: f64, done: bool) -> Episode {
        let s: State = Arc::new(vec![0.0]);
        let o: Observations = Arc::new(vec![vec![0.0]; 2]);
        Episode {
            transitions: vec![Transition {
                s: s.clone(),
                obs: o.clone(),
                last_actions: None,
                actions: vec![0, 0],
                reward: ret,
                s_next: s,
                obs_next: o,
                eps_noise: vec![0.0; 3],
                eps_noise_next: vec![0.0; 3],
                done,
            }],
            ret,
            win: false,
        }
    }

    #[test]
    fn rejects_incomplete_episodes() {
        let mut b = ReplayBuffer::new(4);
        assert!(b.push(episode(1.0, false)).is_err());
        assert!(b.is_empty());
    }

    #[test]
    fn evicts_oldest_at_capacity() {
        let mut b = ReplayBuffer::new(3);
        for i in 0..5 {
            b.push(episode(i as f64, true)).unwrap();
        }
        assert_eq!(b.len(), 3);
        assert_eq!(b.total_added(), 5);
        let rets: Vec<f64> = b.iter().map(|e| e.ret).collect();
        assert_eq!(rets, vec![2.0, 3.0, 4.0]);
    }

    #[test]
    fn seeded_sampling_is_reproducible() {
        let mut b = ReplayBuffer::new(100);
        for i in 0..50 {
            b.push(episode(i as f64, true)).unwrap();
        }
        let pick = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            b.sample(8, &mut rng).unwrap().iter().map(|e| e.ret).collect::<Vec<_>>()
        };
        assert_eq!(pick(5), pick(5));
        let mut got = pick(5);
        got.sort_by(f64::total_cmp);
        got.dedup();
        assert_eq!(got.len(), 8);
        assert_eq!(b.sample(500, &mut ChaCha8Rng::seed_from_u64(0)).unwrap().len(), 50);
    }
}
