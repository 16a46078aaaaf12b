//! Small explicit-table MDPs, small enough to enumerate exactly.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::Environment;
use crate::error::{Result, SmcError};

/// A state of a [`DiscreteMdp`] together with the timestep it was reached
/// at, so that finite-horizon value tables are stationary in this state.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DiscreteState {
    pub index: usize,
    pub t: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DiscreteMdp {
    /// `next[s][a]` is the successor of state `s` under action `a`.
    pub next: Vec<Vec<usize>>,
    /// States violating the constraint.
    pub bad: Vec<bool>,
    /// `policy[s][a]` is the prior probability of `a` in `s`.
    pub policy: Vec<Vec<f64>>,
    pub initial: Vec<f64>,
    pub penalty: f64,
    pub horizon: usize,
}

impl DiscreteMdp {
    pub fn new(
        next: Vec<Vec<usize>>,
        bad: Vec<bool>,
        policy: Vec<Vec<f64>>,
        initial: Vec<f64>,
        penalty: f64,
        horizon: usize,
    ) -> Result<Self> {
        let n = next.len();
        let invalid = |msg: String| Err(SmcError::InvalidConfig(msg));
        if n == 0 || horizon == 0 {
            return invalid("empty state space or zero horizon".into());
        }
        let n_actions = next[0].len();
        if n_actions == 0 {
            return invalid("empty action space".into());
        }
        if bad.len() != n || policy.len() != n || initial.len() != n {
            return invalid("table lengths disagree with the number of states".into());
        }
        for (s, row) in next.iter().enumerate() {
            if row.len() != n_actions || row.iter().any(|&j| j >= n) {
                return invalid(format!("transition row {s} is malformed"));
            }
        }
        for (s, row) in policy.iter().enumerate() {
            let total: f64 = row.iter().sum();
            if row.len() != n_actions || row.iter().any(|&p| p < 0.0) || (total - 1.0).abs() > 1e-9 {
                return invalid(format!("policy row {s} is not a distribution"));
            }
        }
        let total: f64 = initial.iter().sum();
        if initial.iter().any(|&p| p < 0.0) || (total - 1.0).abs() > 1e-9 {
            return invalid("initial distribution does not sum to 1".into());
        }
        if !(penalty >= 0.0 && penalty.is_finite()) {
            return invalid("penalty must be finite and non-negative".into());
        }
        Ok(Self { next, bad, policy, initial, penalty, horizon })
    }

    /// The 3-state, 2-action, horizon-3 MDP used by the unbiasedness checks.
    /// State 2 violates the constraint.
    pub fn three_state() -> Self {
        Self::new(
            vec![vec![0, 1], vec![2, 0], vec![1, 2]],
            vec![false, false, true],
            vec![vec![0.7, 0.3], vec![0.4, 0.6], vec![0.5, 0.5]],
            vec![0.5, 0.3, 0.2],
            1.5,
            3,
        )
        .expect("valid built-in MDP")
    }

    pub fn n_states(&self) -> usize {
        self.next.len()
    }

    pub fn n_actions(&self) -> usize {
        self.next[0].len()
    }

    /// Immediate reward of taking `a` in state index `s`.
    pub fn reward_of(&self, s: usize, a: usize) -> f64 {
        if self.bad[self.next[s][a]] {
            -self.penalty
        } else {
            0.0
        }
    }

    fn sample_categorical<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (i, &p) in probs.iter().enumerate() {
            acc += p;
            if u < acc {
                return i;
            }
        }
        probs.iter().rposition(|&p| p > 0.0).unwrap_or(0)
    }
}

impl Environment for DiscreteMdp {
    type State = DiscreteState;
    type Action = usize;

    fn sample_initial<R: Rng + ?Sized>(&self, rng: &mut R) -> DiscreteState {
        DiscreteState { index: Self::sample_categorical(&self.initial, rng), t: 0 }
    }

    fn transition(&self, state: &DiscreteState, action: &usize) -> DiscreteState {
        if self.is_terminal(state) {
            return *state;
        }
        DiscreteState { index: self.next[state.index][*action], t: state.t + 1 }
    }

    fn prior_sample_into<R: Rng + ?Sized>(
        &self,
        state: &DiscreteState,
        rng: &mut R,
        count: usize,
        out: &mut Vec<usize>,
    ) {
        let row = &self.policy[state.index];
        out.extend((0..count).map(|_| Self::sample_categorical(row, rng)));
    }

    fn constraint_ok(&self, state: &DiscreteState) -> bool {
        !self.bad[state.index]
    }

    fn penalty(&self) -> f64 {
        self.penalty
    }

    fn horizon(&self) -> usize {
        self.horizon
    }

    fn is_terminal(&self, state: &DiscreteState) -> bool {
        state.t >= self.horizon
    }

    fn enumerate_actions(&self, state: &DiscreteState) -> Option<Vec<(usize, f64)>> {
        Some(self.policy[state.index].iter().copied().enumerate().collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn rejects_non_stochastic_policy() {
        let err = DiscreteMdp::new(vec![vec![0, 0]], vec![false], vec![vec![0.5, 0.6]], vec![1.0], 1.0, 2);
        assert!(err.is_err());
    }

    #[test]
    fn rejects_out_of_range_successor() {
        let err = DiscreteMdp::new(vec![vec![3]], vec![false], vec![vec![1.0]], vec![1.0], 1.0, 1);
        assert!(err.is_err());
    }

    #[test]
    fn reward_matches_constraint_of_successor() {
        let mdp = DiscreteMdp::three_state();
        for s in 0..3 {
            for a in 0..2 {
                let st = DiscreteState { index: s, t: 0 };
                let next = mdp.transition(&st, &a);
                let r = mdp.reward(&st, &a, &next);
                assert_eq!(r == 0.0, mdp.constraint_ok(&next));
                assert_eq!(r, mdp.reward_of(s, a));
            }
        }
    }

    #[test]
    fn prior_frequencies_follow_policy_row() {
        let mdp = DiscreteMdp::three_state();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let draws = mdp.prior_sample(&DiscreteState { index: 0, t: 0 }, &mut rng, 20_000);
        let freq = draws.iter().filter(|&&a| a == 0).count() as f64 / 20_000.0;
        let sigma = (0.7f64 * 0.3 / 20_000.0).sqrt();
        assert!((freq - 0.7).abs() < 4.0 * sigma);
    }
}
