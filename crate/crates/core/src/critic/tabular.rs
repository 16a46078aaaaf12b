//! Time-indexed lookup-table critics for [`DiscreteMdp`]s, and the exact
//! soft-Q backward recursion used as ground truth.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Critic, TrainableCritic};
use crate::env::{DiscreteMdp, DiscreteState};
use crate::math::logsumexp;

/// `Q[t][s][a]` for `t < horizon`; states at or beyond the horizon score 0.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TabularCritic {
    pub n_states: usize,
    pub n_actions: usize,
    pub horizon: usize,
    pub q: Vec<f64>,
}

impl TabularCritic {
    pub fn zeros(mdp: &DiscreteMdp) -> Self {
        Self {
            n_states: mdp.n_states(),
            n_actions: mdp.n_actions(),
            horizon: mdp.horizon,
            q: vec![0.0; mdp.horizon * mdp.n_states() * mdp.n_actions()],
        }
    }

    /// Entries drawn uniformly from `[lo, hi)`.
    pub fn random<R: Rng + ?Sized>(mdp: &DiscreteMdp, lo: f64, hi: f64, rng: &mut R) -> Self {
        let mut critic = Self::zeros(mdp);
        critic.q.iter_mut().for_each(|q| *q = rng.random_range(lo..hi));
        critic
    }

    fn index(&self, t: usize, s: usize, a: usize) -> usize {
        (t * self.n_states + s) * self.n_actions + a
    }

    pub fn get(&self, t: usize, s: usize, a: usize) -> f64 {
        if t >= self.horizon {
            0.0
        } else {
            self.q[self.index(t, s, a)]
        }
    }

    pub fn set(&mut self, t: usize, s: usize, a: usize, value: f64) {
        let i = self.index(t, s, a);
        self.q[i] = value;
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        assert_eq!(self.q.len(), other.q.len());
        self.q.iter().zip(&other.q).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }

    fn lookup(&self, state: &DiscreteState, a: usize) -> f64 {
        self.get(state.t, state.index, a)
    }
}

impl Critic<DiscreteState, usize> for TabularCritic {
    fn evaluate_into(&self, state: &DiscreteState, actions: &[usize], out: &mut Vec<f64>) {
        out.extend(actions.iter().map(|&a| self.lookup(state, a)));
    }
}

impl TrainableCritic<DiscreteState, usize> for TabularCritic {
    fn reward_scale(&self) -> f64 {
        1.0
    }

    fn params(&self) -> &[f64] {
        &self.q
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.q
    }

    fn forward_raw(&self, pairs: &[(&DiscreteState, &usize)]) -> Vec<f64> {
        pairs.iter().map(|(s, &a)| self.lookup(s, a)).collect()
    }

    fn backward_raw(&self, pairs: &[(&DiscreteState, &usize)], dq: &[f64], grad: &mut [f64]) {
        for ((s, &a), &d) in pairs.iter().zip(dq) {
            if s.t < self.horizon {
                grad[self.index(s.t, s.index, a)] += d;
            }
        }
    }
}

/// Exact backward recursion
/// `Q_t(s, a) = r(s, a) + γ log Σ_a' π(a'|s') exp Q_{t+1}(s', a')`
/// with `Q_T ≡ 0`.
pub fn soft_q_exact(mdp: &DiscreteMdp, gamma: f64) -> TabularCritic {
    let mut table = TabularCritic::zeros(mdp);
    for t in (0..mdp.horizon).rev() {
        for s in 0..mdp.n_states() {
            for a in 0..mdp.n_actions() {
                let next = mdp.next[s][a];
                let continuation = if t + 1 < mdp.horizon {
                    let terms: Vec<f64> =
                        (0..mdp.n_actions()).map(|b| mdp.policy[next][b].ln() + table.get(t + 1, next, b)).collect();
                    logsumexp(&terms)
                } else {
                    0.0
                };
                table.set(t, s, a, mdp.reward_of(s, a) + gamma * continuation);
            }
        }
    }
    table
}

/// `log p(O_{1:T})` implied by an exact table: the initial-state and
/// first-action mixture of `exp Q_1`.
pub fn log_evidence_from_table(mdp: &DiscreteMdp, table: &TabularCritic) -> f64 {
    let mut terms = Vec::new();
    for s in 0..mdp.n_states() {
        for a in 0..mdp.n_actions() {
            terms.push(mdp.initial[s].ln() + mdp.policy[s][a].ln() + table.get(0, s, a));
        }
    }
    logsumexp(&terms)
}
