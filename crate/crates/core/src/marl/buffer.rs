use rand::Rng;

use crate::env::ACTION_DIM;
use crate::error::{invalid, Result};
use crate::game::CoalitionMask;

/// One stored environment step, restricted to the learning agents.
#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub joint_obs: Vec<Vec<f64>>,
    pub joint_action: Vec<[f64; ACTION_DIM]>,
    pub coalition: CoalitionMask,
    pub rewards: Vec<f64>,
    pub next_joint_obs: Vec<Vec<f64>>,
}

impl Transition {
    pub fn n_agents(&self) -> usize {
        self.joint_obs.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n_agents();
        if self.joint_action.len() != n
            || self.rewards.len() != n
            || self.next_joint_obs.len() != n
        {
            return Err(invalid("transition fields disagree on the agent count"));
        }
        if n > 0 && !self.coalition.is_subset_of(CoalitionMask::grand(n)) {
            return Err(invalid(format!(
                "coalition {} is not a subset of the {n} agents",
                self.coalition
            )));
        }
        let finite = self
            .joint_obs
            .iter()
            .chain(&self.next_joint_obs)
            .flatten()
            .chain(self.joint_action.iter().flatten())
            .chain(&self.rewards)
            .all(|x| x.is_finite());
        if !finite {
            return Err(invalid("transition holds a non-finite value"));
        }
        Ok(())
    }
}

/// Fixed-capacity ring buffer of transitions.
#[derive(Clone, Debug, PartialEq)]
pub struct ReplayBuffer {
    capacity: usize,
    items: Vec<Transition>,
    cursor: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(invalid("replay capacity must be at least 1"));
        }
        Ok(ReplayBuffer {
            capacity,
            items: Vec::new(),
            cursor: 0,
        })
    }

    /// Rebuilds a buffer from its slots and write cursor.
    pub fn from_parts(capacity: usize, items: Vec<Transition>, cursor: usize) -> Result<Self> {
        if capacity == 0 || items.len() > capacity {
            return Err(invalid("replay slots exceed capacity"));
        }
        let full = items.len() == capacity;
        if (full && cursor >= capacity) || (!full && cursor != items.len()) {
            return Err(invalid(format!(
                "replay cursor {cursor} inconsistent with {} of {capacity} slots",
                items.len()
            )));
        }
        Ok(ReplayBuffer {
            capacity,
            items,
            cursor,
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn cursor(&self) -> usize {
        self.cursor
    }

    /// Stored transitions in slot order.
    pub fn slots(&self) -> &[Transition] {
        &self.items
    }

    pub fn push(&mut self, t: Transition) {
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.cursor] = t;
        }
        self.cursor = (self.cursor + 1) % self.capacity;
    }

    /// `k` slot indices drawn uniformly with replacement from the filled region.
    pub fn sample_indices<R: Rng + ?Sized>(&self, k: usize, rng: &mut R) -> Result<Vec<usize>> {
        if self.items.len() < k || self.items.is_empty() {
            return Err(invalid(format!(
                "cannot draw {k} samples from {} stored transitions",
                self.items.len()
            )));
        }
        Ok((0..k)
            .map(|_| rng.random_range(0..self.items.len()))
            .collect())
    }

    pub fn sample<R: Rng + ?Sized>(&self, k: usize, rng: &mut R) -> Result<Vec<&Transition>> {
        Ok(self
            .sample_indices(k, rng)?
            .into_iter()
            .map(|i| &self.items[i])
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tagged(id: usize, coalition: u32) -> Transition {
        Transition {
            joint_obs: vec![vec![id as f64]],
            joint_action: vec![[1.0, 0.0, 0.0, 0.0]],
            coalition: CoalitionMask::from_bits(coalition),
            rewards: vec![0.0],
            next_joint_obs: vec![vec![0.0]],
        }
    }

    #[test]
    fn ring_overwrites_oldest() {
        let mut b = ReplayBuffer::new(3).unwrap();
        for i in 0..5 {
            b.push(tagged(i, 1));
        }
        assert_eq!(b.len(), 3);
        let ids: Vec<f64> = b.slots().iter().map(|t| t.joint_obs[0][0]).collect();
        assert_eq!(ids, vec![3.0, 4.0, 2.0]);
        assert_eq!(b.cursor(), 2);
    }

    #[test]
    fn sampling_needs_enough_data() {
        let mut b = ReplayBuffer::new(10).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(b.sample(1, &mut rng).is_err());
        b.push(tagged(0, 1));
        assert!(b.sample(2, &mut rng).is_err());
        assert_eq!(b.sample(1, &mut rng).unwrap().len(), 1);
    }

    #[test]
    fn validation_catches_bad_coalitions() {
        let mut t = tagged(0, 1);
        t.validate().unwrap();
        t.coalition = CoalitionMask::from_bits(0b10);
        assert!(t.validate().is_err());
        let mut t = tagged(0, 1);
        t.rewards[0] = f64::NAN;
        assert!(t.validate().is_err());
    }

    proptest! {
        #[test]
        fn samples_were_stored(cap in 1usize..20, pushes in 1usize..60, seed in any::<u64>()) {
            let mut b = ReplayBuffer::new(cap).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut stored = Vec::new();
            for i in 0..pushes {
                let t = tagged(i, 1);
                stored.push(t.clone());
                b.push(t);
            }
            prop_assert!(b.len() <= cap);
            let k = b.len().min(5);
            for t in b.sample(k, &mut rng).unwrap() {
                prop_assert!(stored.contains(t));
            }
            let rebuilt = ReplayBuffer::from_parts(cap, b.slots().to_vec(), b.cursor()).unwrap();
            prop_assert_eq!(rebuilt, b);
        }
    }
}
