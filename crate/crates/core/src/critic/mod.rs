//! Evaluators and learners of the soft-Q function
//! `Q(s, a) = log p(O_{t:T} | s_t, a_t)`.

use std::sync::atomic::{AtomicU64, Ordering};

pub mod analytic;
pub mod checkpoint;
pub mod mlp;
pub mod neural;
pub mod replay;
pub mod tabular;
pub mod targets;

pub use analytic::AnalyticLgssmCritic;
pub use checkpoint::Checkpoint;
pub use mlp::{FusedMlp, MlpCritic, MlpShape};
pub use neural::NeuralCritic;
pub use replay::{PrioritizedReplayBuffer, ReplayConfig, Transition};
pub use tabular::{log_evidence_from_table, soft_q_exact, TabularCritic};
pub use targets::{
    hard_q_target, polyak_update, q_target, soft_q_target, td_loss, td_loss_grad, NextActions, TargetKind,
};

/// Anything that scores a batch of actions at one state with `Q(s, a)`.
///
/// Implementations must be deterministic for fixed parameters and safe to
/// call concurrently.
pub trait Critic<S, A>: Sync {
    /// Appends `Q(state, a)` for every `a` in `actions` to `out`.
    fn evaluate_into(&self, state: &S, actions: &[A], out: &mut Vec<f64>);

    fn evaluate(&self, state: &S, actions: &[A]) -> Vec<f64> {
        let mut out = Vec::with_capacity(actions.len());
        self.evaluate_into(state, actions, &mut out);
        out
    }
}

impl<S, A, C: Critic<S, A> + ?Sized> Critic<S, A> for &C {
    fn evaluate_into(&self, state: &S, actions: &[A], out: &mut Vec<f64>) {
        (**self).evaluate_into(state, actions, out)
    }
}

/// A critic with a flat parameter vector trained in raw units, where
/// `evaluate = reward_scale * raw`.
pub trait TrainableCritic<S, A>: Critic<S, A> + Clone + Send {
    fn reward_scale(&self) -> f64;
    fn params(&self) -> &[f64];
    fn params_mut(&mut self) -> &mut [f64];

    /// Rebuilds cached inference state after the parameters changed.
    fn refresh(&mut self) {}

    /// Raw outputs for a batch of `(state, action)` pairs.
    fn forward_raw(&self, pairs: &[(&S, &A)]) -> Vec<f64>;

    /// Accumulates `Σ_i dq[i] ∂raw_i/∂params` into `grad`.
    fn backward_raw(&self, pairs: &[(&S, &A)], dq: &[f64], grad: &mut [f64]);
}

/// `Q ≡ c`. With `c = 0` every heuristic sampler reduces to plain SMC.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ConstantCritic(pub f64);

impl<S, A> Critic<S, A> for ConstantCritic {
    fn evaluate_into(&self, _state: &S, actions: &[A], out: &mut Vec<f64>) {
        out.extend(std::iter::repeat_n(self.0, actions.len()));
    }
}

/// Wraps a plain function of `(state, action)`.
pub struct FnCritic<F>(pub F);

impl<S, A, F> Critic<S, A> for FnCritic<F>
where
    F: Fn(&S, &A) -> f64 + Sync,
{
    fn evaluate_into(&self, state: &S, actions: &[A], out: &mut Vec<f64>) {
        out.extend(actions.iter().map(|a| (self.0)(state, a)));
    }
}

/// Counts `(state, action)` evaluations and batch calls.
#[derive(Debug)]
pub struct CountingCritic<C> {
    pub inner: C,
    evaluations: AtomicU64,
    batches: AtomicU64,
}

impl<C> CountingCritic<C> {
    pub fn new(inner: C) -> Self {
        Self { inner, evaluations: AtomicU64::new(0), batches: AtomicU64::new(0) }
    }

    pub fn evaluations(&self) -> u64 {
        self.evaluations.load(Ordering::Relaxed)
    }

    pub fn batches(&self) -> u64 {
        self.batches.load(Ordering::Relaxed)
    }

    pub fn reset(&self) {
        self.evaluations.store(0, Ordering::Relaxed);
        self.batches.store(0, Ordering::Relaxed);
    }
}

impl<S, A, C: Critic<S, A>> Critic<S, A> for CountingCritic<C> {
    fn evaluate_into(&self, state: &S, actions: &[A], out: &mut Vec<f64>) {
        self.evaluations.fetch_add(actions.len() as u64, Ordering::Relaxed);
        self.batches.fetch_add(1, Ordering::Relaxed);
        self.inner.evaluate_into(state, actions, out)
    }
}
