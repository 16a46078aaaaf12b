//! MLP critic over environment features.

use rand::Rng;

use super::mlp::{FusedMlp, MlpCritic, MlpShape};
use super::{Critic, TrainableCritic};
use crate::env::Featurize;
use crate::error::{Result, SmcError};

/// `Q(s, a) = reward_scale * mlp(φ(s), ψ(a))`, and `0` at terminal states.
#[derive(Clone, Debug)]
pub struct NeuralCritic<E> {
    pub env: E,
    mlp: MlpCritic,
    fused: FusedMlp,
    pub reward_scale: f64,
}

/// Output logit of a fresh critic: `Q` starts just below zero, so untrained
/// values sit near "no infraction ahead" rather than at an arbitrary cost.
pub const INITIAL_LOGIT: f64 = -4.0;

impl<E: Featurize + Clone> NeuralCritic<E> {
    pub fn new<R: Rng + ?Sized>(env: E, hidden: usize, reward_scale: f64, rng: &mut R) -> Self {
        let shape = MlpShape { state_dim: env.state_dim(), action_dim: env.action_dim(), hidden };
        let mut mlp = MlpCritic::init(shape, rng);
        mlp.constant_output(INITIAL_LOGIT);
        Self::from_mlp(env, mlp, reward_scale).expect("shape derived from the environment")
    }

    pub fn from_mlp(env: E, mlp: MlpCritic, reward_scale: f64) -> Result<Self> {
        if mlp.shape.state_dim != env.state_dim() {
            return Err(SmcError::ShapeMismatch { expected: env.state_dim(), got: mlp.shape.state_dim });
        }
        if mlp.shape.action_dim != env.action_dim() {
            return Err(SmcError::ShapeMismatch { expected: env.action_dim(), got: mlp.shape.action_dim });
        }
        let fused = mlp.fused();
        Ok(Self { env, mlp, fused, reward_scale })
    }

    pub fn mlp(&self) -> &MlpCritic {
        &self.mlp
    }

    fn features(&self, pairs: &[(&E::State, &E::Action)]) -> (Vec<f64>, Vec<f64>) {
        let (ds, da) = (self.env.state_dim(), self.env.action_dim());
        let mut xs = vec![0.0; pairs.len() * ds];
        let mut us = vec![0.0; pairs.len() * da];
        for (i, (s, a)) in pairs.iter().enumerate() {
            self.env.state_features(s, &mut xs[i * ds..(i + 1) * ds]);
            self.env.action_features(a, &mut us[i * da..(i + 1) * da]);
        }
        (xs, us)
    }
}

impl<E: Featurize> Critic<E::State, E::Action> for NeuralCritic<E> {
    fn evaluate_into(&self, state: &E::State, actions: &[E::Action], out: &mut Vec<f64>) {
        if self.env.is_terminal(state) {
            out.extend(std::iter::repeat_n(0.0, actions.len()));
            return;
        }
        let (ds, da) = (self.env.state_dim(), self.env.action_dim());
        let mut x = vec![0.0; ds];
        self.env.state_features(state, &mut x);
        let mut us = vec![0.0; actions.len() * da];
        for (a, u) in actions.iter().zip(us.chunks_exact_mut(da)) {
            self.env.action_features(a, u);
        }
        let start = out.len();
        self.fused.evaluate_into(&x, &us, out);
        out[start..].iter_mut().for_each(|q| *q *= self.reward_scale);
    }
}

impl<E> TrainableCritic<E::State, E::Action> for NeuralCritic<E>
where
    E: Featurize + Clone + Send,
{
    fn reward_scale(&self) -> f64 {
        self.reward_scale
    }

    fn params(&self) -> &[f64] {
        &self.mlp.params
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.mlp.params
    }

    fn refresh(&mut self) {
        self.fused = self.mlp.fused();
    }

    fn forward_raw(&self, pairs: &[(&E::State, &E::Action)]) -> Vec<f64> {
        let (xs, us) = self.features(pairs);
        self.mlp.forward(&xs, &us)
    }

    fn backward_raw(&self, pairs: &[(&E::State, &E::Action)], dq: &[f64], grad: &mut [f64]) {
        let (xs, us) = self.features(pairs);
        self.mlp.backward(&xs, &us, dq, grad);
    }
}
