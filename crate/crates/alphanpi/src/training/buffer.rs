//! Replay buffer with positive-outcome prioritisation.
//!
//! Experiences live in two FIFO pools split by reward sign. Sampling draws
//! from the positive pool with a fixed probability (falling back to whichever
//! pool is non-empty), so successful traces stay over-represented while they
//! are rare. Total size is capped; eviction removes the globally oldest
//! entry.

use std::collections::VecDeque;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::net::Experience;
use crate::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReplayBuffer {
    capacity: usize,
    p_positive: f64,
    positive: VecDeque<(u64, Experience)>,
    other: VecDeque<(u64, Experience)>,
    seq: u64,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, p_positive: f64) -> Self {
        assert!(capacity > 0);
        assert!((0.0..=1.0).contains(&p_positive));
        Self {
            capacity,
            p_positive,
            positive: VecDeque::new(),
            other: VecDeque::new(),
            seq: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.positive.len() + self.other.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn positive_len(&self) -> usize {
        self.positive.len()
    }

    pub fn push(&mut self, exp: Experience) {
        let seq = self.seq;
        self.seq += 1;
        if exp.reward > 0.0 {
            self.positive.push_back((seq, exp));
        } else {
            self.other.push_back((seq, exp));
        }
        while self.len() > self.capacity {
            // Evict the globally oldest entry.
            let p = self.positive.front().map(|(s, _)| *s);
            let o = self.other.front().map(|(s, _)| *s);
            match (p, o) {
                (Some(a), Some(b)) if a < b => {
                    self.positive.pop_front();
                }
                (Some(_), Some(_)) => {
                    self.other.pop_front();
                }
                (Some(_), None) => {
                    self.positive.pop_front();
                }
                _ => {
                    self.other.pop_front();
                }
            }
        }
    }

    /// Draws `batch_size` samples with replacement.
    pub fn sample(&self, batch_size: usize, rng: &mut ChaCha8Rng) -> Result<Vec<Experience>> {
        if self.is_empty() {
            return Err(Error::Usage("sampling from an empty buffer".to_string()));
        }
        let mut out = Vec::with_capacity(batch_size);
        for _ in 0..batch_size {
            let use_positive = if self.positive.is_empty() {
                false
            } else if self.other.is_empty() {
                true
            } else {
                rng.random_range(0.0..1.0) < self.p_positive
            };
            let pool = if use_positive {
                &self.positive
            } else {
                &self.other
            };
            let idx = rng.random_range(0..pool.len());
            out.push(pool[idx].1.clone());
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::Observation;
    use crate::net::InterpreterState;
    use rand::SeedableRng;

    fn exp(program: usize, reward: f64) -> Experience {
        Experience {
            observation: Observation(vec![0.0]),
            program,
            state: InterpreterState::zeros(2),
            pi_mcts: vec![1.0],
            reward,
        }
    }

    #[test]
    fn empty_sampling_is_an_error() {
        let buf = ReplayBuffer::new(10, 0.5);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(buf.sample(1, &mut rng).is_err());
    }

    #[test]
    fn falls_back_to_the_non_empty_pool() {
        let mut buf = ReplayBuffer::new(10, 0.5);
        buf.push(exp(0, 0.9));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let batch = buf.sample(8, &mut rng).unwrap();
        assert!(batch.iter().all(|e| e.reward > 0.0));

        let mut buf = ReplayBuffer::new(10, 0.5);
        buf.push(exp(0, -1.0));
        let batch = buf.sample(8, &mut rng).unwrap();
        assert!(batch.iter().all(|e| e.reward < 0.0));
    }

    #[test]
    fn positive_draw_fraction_concentrates_at_p() {
        let mut buf = ReplayBuffer::new(2000, 0.5);
        for i in 0..500 {
            buf.push(exp(0, 0.9));
            buf.push(exp(0, -1.0));
            let _ = i;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let batch = buf.sample(10_000, &mut rng).unwrap();
        let pos = batch.iter().filter(|e| e.reward > 0.0).count() as f64 / 10_000.0;
        assert!((pos - 0.5).abs() < 0.03, "positive fraction {pos}");
    }

    #[test]
    fn capacity_is_enforced_fifo() {
        let mut buf = ReplayBuffer::new(2000, 0.5);
        for i in 0..2500u64 {
            buf.push(exp(i as usize, if i % 3 == 0 { 0.8 } else { -1.0 }));
        }
        assert_eq!(buf.len(), 2000);
        // The oldest 500 entries (programs 0..500) were evicted.
        let min_prog = buf
            .positive
            .iter()
            .chain(buf.other.iter())
            .map(|(_, e)| e.program)
            .min()
            .unwrap();
        assert_eq!(min_prog, 500);
    }
}
