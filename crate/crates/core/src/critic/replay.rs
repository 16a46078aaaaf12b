//! Proportional prioritized replay on a sum tree.

use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transition<S, A> {
    pub state: S,
    pub action: A,
    pub reward: f64,
    pub next: S,
    pub terminal: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReplayConfig {
    pub capacity: usize,
    /// Sampling probability is proportional to `priority^alpha`.
    pub alpha: f64,
    pub beta_start: f64,
    pub beta_end: f64,
    /// Added to `|td error|` so no entry becomes unreachable.
    pub priority_floor: f64,
}

impl Default for ReplayConfig {
    fn default() -> Self {
        Self { capacity: 100_000, alpha: 0.6, beta_start: 0.4, beta_end: 1.0, priority_floor: 1e-4 }
    }
}

/// A sampled minibatch: buffer slots and normalized importance weights.
#[derive(Clone, Debug)]
pub struct Sample {
    pub indices: Vec<usize>,
    pub weights: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct PrioritizedReplayBuffer<S, A> {
    pub config: ReplayConfig,
    entries: Vec<Transition<S, A>>,
    /// Sum tree over `priority^alpha`; leaves start at `capacity_pow2`.
    tree: Vec<f64>,
    leaves: usize,
    next_slot: usize,
    max_priority: f64,
}

impl<S: Clone, A: Clone> PrioritizedReplayBuffer<S, A> {
    pub fn new(config: ReplayConfig) -> Self {
        assert!(config.capacity > 0, "replay capacity must be positive");
        let leaves = config.capacity.next_power_of_two();
        Self { config, entries: Vec::new(), tree: vec![0.0; 2 * leaves], leaves, next_slot: 0, max_priority: 1.0 }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, index: usize) -> &Transition<S, A> {
        &self.entries[index]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transition<S, A>> {
        self.entries.iter()
    }

    fn set_leaf(&mut self, index: usize, value: f64) {
        let mut node = self.leaves + index;
        self.tree[node] = value;
        while node > 1 {
            node /= 2;
            self.tree[node] = self.tree[2 * node] + self.tree[2 * node + 1];
        }
    }

    pub fn total(&self) -> f64 {
        self.tree[1]
    }

    /// `priority^alpha / total` for a slot.
    pub fn probability(&self, index: usize) -> f64 {
        self.tree[self.leaves + index] / self.total()
    }

    /// Appends with the largest priority seen so far, evicting the oldest
    /// entry once full.
    pub fn push(&mut self, transition: Transition<S, A>) {
        let slot = self.next_slot;
        if self.entries.len() < self.config.capacity {
            self.entries.push(transition);
        } else {
            self.entries[slot] = transition;
        }
        self.next_slot = (slot + 1) % self.config.capacity;
        self.set_leaf(slot, self.max_priority.powf(self.config.alpha));
    }

    fn find(&self, mut mass: f64) -> usize {
        let mut node = 1;
        while node < self.leaves {
            let left = 2 * node;
            if mass < self.tree[left] || self.tree[left + 1] <= 0.0 {
                node = left;
            } else {
                mass -= self.tree[left];
                node = left + 1;
            }
        }
        (node - self.leaves).min(self.entries.len() - 1)
    }

    /// Draws `batch` slots independently, proportionally to their priority,
    /// with importance weights `(n P(i))^-beta` normalized by their maximum.
    pub fn sample<R: Rng + ?Sized>(&self, batch: usize, beta: f64, rng: &mut R) -> Sample {
        assert!(!self.entries.is_empty(), "cannot sample from an empty buffer");
        let total = self.total();
        let n = self.entries.len() as f64;
        let indices: Vec<usize> = (0..batch).map(|_| self.find(rng.random::<f64>() * total)).collect();
        let mut weights: Vec<f64> = indices.iter().map(|&i| (n * self.probability(i)).powf(-beta)).collect();
        let max = weights.iter().copied().fold(0.0, f64::max);
        if max > 0.0 {
            weights.iter_mut().for_each(|w| *w /= max);
        }
        Sample { indices, weights }
    }

    pub fn update_priorities(&mut self, indices: &[usize], td_errors: &[f64]) {
        for (&i, &e) in indices.iter().zip(td_errors) {
            let p = e.abs() + self.config.priority_floor;
            self.max_priority = self.max_priority.max(p);
            self.set_leaf(i, p.powf(self.config.alpha));
        }
    }

    /// Importance exponent annealed linearly over training progress in `[0, 1]`.
    pub fn beta_at(&self, progress: f64) -> f64 {
        let c = &self.config;
        c.beta_start + (c.beta_end - c.beta_start) * progress.clamp(0.0, 1.0)
    }
}
