use rand::Rng;
use serde::{Deserialize, Serialize};

/// One replay record. States are stored normalized.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: usize,
    pub reward: f64,
    pub next_state: Vec<f64>,
    pub terminal: bool,
}

/// Fixed-capacity ring of transitions with uniform batch sampling.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    ring: Vec<Transition>,
    write_idx: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        ReplayBuffer { capacity, ring: Vec::with_capacity(capacity.min(1 << 20)), write_idx: 0 }
    }

    pub fn len(&self) -> usize {
        self.ring.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ring.is_empty()
    }

    pub fn push(&mut self, t: Transition) {
        if self.ring.len() < self.capacity {
            self.ring.push(t);
        } else {
            self.ring[self.write_idx] = t;
        }
        self.write_idx = (self.write_idx + 1) % self.capacity;
    }

    /// Uniform sample without replacement within the batch (partial
    /// Fisher-Yates over the index range).
    pub fn sample<'a>(&'a self, batch_size: usize, rng: &mut impl Rng) -> Vec<&'a Transition> {
        let n = self.ring.len();
        let k = batch_size.min(n);
        let mut indices: Vec<usize> = (0..n).collect();
        for i in 0..k {
            let j = rng.gen_range(i..n);
            indices.swap(i, j);
        }
        indices[..k].iter().map(|&i| &self.ring[i]).collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.ring.iter()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn t(tag: f64) -> Transition {
        Transition {
            state: vec![tag],
            action: 0,
            reward: tag,
            next_state: vec![tag],
            terminal: false,
        }
    }

    #[test]
    fn ring_retains_exactly_last_capacity() {
        let mut buf = ReplayBuffer::new(5);
        for i in 0..12 {
            buf.push(t(i as f64));
        }
        assert_eq!(buf.len(), 5);
        let mut rewards: Vec<f64> = buf.iter().map(|t| t.reward).collect();
        rewards.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(rewards, vec![7.0, 8.0, 9.0, 10.0, 11.0]);
    }

    #[test]
    fn sample_is_without_replacement() {
        let mut buf = ReplayBuffer::new(64);
        for i in 0..64 {
            buf.push(t(i as f64));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let batch = buf.sample(64, &mut rng);
        let mut seen: Vec<f64> = batch.iter().map(|t| t.reward).collect();
        seen.sort_by(|a, b| a.partial_cmp(b).unwrap());
        seen.dedup();
        assert_eq!(seen.len(), 64);
    }

    #[test]
    fn sample_is_deterministic_for_a_seed() {
        let mut buf = ReplayBuffer::new(32);
        for i in 0..32 {
            buf.push(t(i as f64));
        }
        let a: Vec<f64> = buf
            .sample(8, &mut ChaCha8Rng::seed_from_u64(9))
            .iter()
            .map(|t| t.reward)
            .collect();
        let b: Vec<f64> = buf
            .sample(8, &mut ChaCha8Rng::seed_from_u64(9))
            .iter()
            .map(|t| t.reward)
            .collect();
        assert_eq!(a, b);
    }
}
