//! Deterministic-transition environments behind one interface.
//!
//! An [`Environment`] bundles the initial-state sampler, the deterministic
//! transition `f`, the prior policy (as a sampler only), the hard constraint
//! `C(s)` and the sparse penalty reward derived from it.

use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;
use serde::Serialize;

pub mod discrete;
pub mod lgssm;
pub mod pursuit;

pub use discrete::{DiscreteMdp, DiscreteState};
pub use lgssm::{LgssmConfig, LgssmWorld};
pub use pursuit::{PursuitConfig, PursuitState, PursuitWorld};

pub trait Environment: Sync {
    type State: Clone + Send + Sync + std::fmt::Debug + Serialize;
    type Action: Clone + Send + Sync + std::fmt::Debug + Serialize;

    fn sample_initial<R: Rng + ?Sized>(&self, rng: &mut R) -> Self::State;

    /// Deterministic transition `f(s, a)`. Must be a pure function.
    fn transition(&self, state: &Self::State, action: &Self::Action) -> Self::State;

    /// Appends `count` draws from the prior policy at `state` to `out`.
    fn prior_sample_into<R: Rng + ?Sized>(
        &self,
        state: &Self::State,
        rng: &mut R,
        count: usize,
        out: &mut Vec<Self::Action>,
    );

    fn prior_sample<R: Rng + ?Sized>(&self, state: &Self::State, rng: &mut R, count: usize) -> Vec<Self::Action> {
        let mut out = Vec::with_capacity(count);
        self.prior_sample_into(state, rng, count, &mut out);
        out
    }

    /// Hard constraint `C(s)`.
    fn constraint_ok(&self, state: &Self::State) -> bool;

    /// Penalty coefficient; the reward is either `0` or `-penalty`.
    fn penalty(&self) -> f64;

    fn horizon(&self) -> usize;

    /// Absorbing states (episode over). Transitions out of them are the
    /// identity and carry no reward.
    fn is_terminal(&self, _state: &Self::State) -> bool {
        false
    }

    /// Sparse reward: `0` if `C(s')` holds, `-penalty` otherwise.
    fn reward(&self, state: &Self::State, _action: &Self::Action, next: &Self::State) -> f64 {
        if self.is_terminal(state) || self.constraint_ok(next) {
            0.0
        } else {
            -self.penalty()
        }
    }

    /// Full support of the prior with probabilities, when it is finite.
    fn enumerate_actions(&self, _state: &Self::State) -> Option<Vec<(Self::Action, f64)>> {
        None
    }
}

/// Environments with a fixed-size numeric encoding for neural critics.
pub trait Featurize: Environment {
    fn state_dim(&self) -> usize;
    fn action_dim(&self) -> usize;
    fn state_features(&self, state: &Self::State, out: &mut [f64]);
    fn action_features(&self, action: &Self::Action, out: &mut [f64]);

    /// Normalization constants `[state, action]` applied by the features.
    fn feature_scales(&self) -> [f64; 2] {
        [1.0, 1.0]
    }
}

/// Counts transition calls of the wrapped environment.
#[derive(Debug)]
pub struct Instrumented<E> {
    pub inner: E,
    transitions: AtomicU64,
}

impl<E> Instrumented<E> {
    pub fn new(inner: E) -> Self {
        Self { inner, transitions: AtomicU64::new(0) }
    }

    pub fn transition_calls(&self) -> u64 {
        self.transitions.load(Ordering::Relaxed)
    }

    pub fn reset(&self) {
        self.transitions.store(0, Ordering::Relaxed);
    }
}

impl<E: Environment> Environment for Instrumented<E> {
    type State = E::State;
    type Action = E::Action;

    fn sample_initial<R: Rng + ?Sized>(&self, rng: &mut R) -> Self::State {
        self.inner.sample_initial(rng)
    }

    fn transition(&self, state: &Self::State, action: &Self::Action) -> Self::State {
        self.transitions.fetch_add(1, Ordering::Relaxed);
        self.inner.transition(state, action)
    }

    fn prior_sample_into<R: Rng + ?Sized>(
        &self,
        state: &Self::State,
        rng: &mut R,
        count: usize,
        out: &mut Vec<Self::Action>,
    ) {
        self.inner.prior_sample_into(state, rng, count, out)
    }

    fn constraint_ok(&self, state: &Self::State) -> bool {
        self.inner.constraint_ok(state)
    }

    fn penalty(&self) -> f64 {
        self.inner.penalty()
    }

    fn horizon(&self) -> usize {
        self.inner.horizon()
    }

    fn is_terminal(&self, state: &Self::State) -> bool {
        self.inner.is_terminal(state)
    }

    fn reward(&self, state: &Self::State, action: &Self::Action, next: &Self::State) -> f64 {
        self.inner.reward(state, action, next)
    }

    fn enumerate_actions(&self, state: &Self::State) -> Option<Vec<(Self::Action, f64)>> {
        self.inner.enumerate_actions(state)
    }
}

impl<E: Featurize> Featurize for Instrumented<E> {
    fn state_dim(&self) -> usize {
        self.inner.state_dim()
    }
    fn action_dim(&self) -> usize {
        self.inner.action_dim()
    }
    fn state_features(&self, state: &Self::State, out: &mut [f64]) {
        self.inner.state_features(state, out)
    }
    fn action_features(&self, action: &Self::Action, out: &mut [f64]) {
        self.inner.action_features(action, out)
    }
    fn feature_scales(&self) -> [f64; 2] {
        self.inner.feature_scales()
    }
}
