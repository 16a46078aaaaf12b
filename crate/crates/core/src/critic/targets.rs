//! TD targets, the TD objective and target-network averaging.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Critic, TrainableCritic};
use crate::env::Environment;
use crate::error::{Result, SmcError};
use crate::math::logsumexp;

/// How the next-state actions of a target are chosen.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NextActions {
    /// `K` draws from the prior.
    Sampled(usize),
    /// The full prior support with its probabilities. Requires
    /// [`Environment::enumerate_actions`].
    Exhaustive,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetKind {
    #[default]
    Soft,
    Hard,
}

/// Next-state actions paired with their log prior mass within the backup.
fn next_actions<E: Environment, R: Rng + ?Sized>(
    env: &E,
    next: &E::State,
    mode: NextActions,
    rng: &mut R,
) -> (Vec<E::Action>, Vec<f64>) {
    match mode {
        NextActions::Sampled(k) => {
            assert!(k >= 1, "at least one target action is required");
            let actions = env.prior_sample(next, rng, k);
            (actions, vec![-(k as f64).ln(); k])
        }
        NextActions::Exhaustive => {
            let support = env.enumerate_actions(next).expect("exhaustive targets need an enumerable prior");
            support.into_iter().filter(|(_, p)| *p > 0.0).map(|(a, p)| (a, p.ln())).unzip()
        }
    }
}

/// `r + γ log Σ_j m_j exp Q_ψ(s', â_j)`, or `r` for terminal transitions.
/// With sampled actions `m_j = 1/K`.
#[allow(clippy::too_many_arguments)]
pub fn soft_q_target<E, C, R>(
    env: &E,
    reward: f64,
    next: &E::State,
    terminal: bool,
    target: &C,
    mode: NextActions,
    gamma: f64,
    rng: &mut R,
) -> f64
where
    E: Environment,
    C: Critic<E::State, E::Action> + ?Sized,
    R: Rng + ?Sized,
{
    if terminal {
        return reward;
    }
    let (actions, log_mass) = next_actions(env, next, mode, rng);
    let mut q = target.evaluate(next, &actions);
    q.iter_mut().zip(&log_mass).for_each(|(q, m)| *q += m);
    reward + gamma * logsumexp(&q)
}

/// `r + γ max_j Q_ψ(s', â_j)`, or `r` for terminal transitions.
#[allow(clippy::too_many_arguments)]
pub fn hard_q_target<E, C, R>(
    env: &E,
    reward: f64,
    next: &E::State,
    terminal: bool,
    target: &C,
    mode: NextActions,
    gamma: f64,
    rng: &mut R,
) -> f64
where
    E: Environment,
    C: Critic<E::State, E::Action> + ?Sized,
    R: Rng + ?Sized,
{
    if terminal {
        return reward;
    }
    let (actions, _) = next_actions(env, next, mode, rng);
    let q = target.evaluate(next, &actions);
    reward + gamma * q.into_iter().fold(f64::NEG_INFINITY, f64::max)
}

#[allow(clippy::too_many_arguments)]
pub fn q_target<E, C, R>(
    kind: TargetKind,
    env: &E,
    reward: f64,
    next: &E::State,
    terminal: bool,
    target: &C,
    mode: NextActions,
    gamma: f64,
    rng: &mut R,
) -> f64
where
    E: Environment,
    C: Critic<E::State, E::Action> + ?Sized,
    R: Rng + ?Sized,
{
    match kind {
        TargetKind::Soft => soft_q_target(env, reward, next, terminal, target, mode, gamma, rng),
        TargetKind::Hard => hard_q_target(env, reward, next, terminal, target, mode, gamma, rng),
    }
}

/// Importance-weighted mean squared TD error `(1/B) Σ w_i (Q_φ(s_i, a_i) - y_i)²`
/// in raw (scaled) units, and `|Q_φ - y|` per entry. The targets are plain
/// numbers, so nothing flows back through them.
pub fn td_loss<S, A, C: TrainableCritic<S, A>>(
    critic: &C,
    pairs: &[(&S, &A)],
    targets: &[f64],
    weights: &[f64],
) -> Result<(f64, Vec<f64>)> {
    check_len(pairs.len(), targets.len())?;
    check_len(pairs.len(), weights.len())?;
    let q = critic.forward_raw(pairs);
    Ok(loss_from(&q, targets, weights))
}

/// [`td_loss`] plus its gradient with respect to the critic parameters,
/// accumulated into `grad`.
pub fn td_loss_grad<S, A, C: TrainableCritic<S, A>>(
    critic: &C,
    pairs: &[(&S, &A)],
    targets: &[f64],
    weights: &[f64],
    grad: &mut [f64],
) -> Result<(f64, Vec<f64>)> {
    check_len(pairs.len(), targets.len())?;
    check_len(pairs.len(), weights.len())?;
    check_len(critic.params().len(), grad.len())?;
    let q = critic.forward_raw(pairs);
    let b = pairs.len() as f64;
    let dq: Vec<f64> = q.iter().zip(targets).zip(weights).map(|((q, y), w)| 2.0 * w * (q - y) / b).collect();
    critic.backward_raw(pairs, &dq, grad);
    Ok(loss_from(&q, targets, weights))
}

fn loss_from(q: &[f64], targets: &[f64], weights: &[f64]) -> (f64, Vec<f64>) {
    let b = q.len().max(1) as f64;
    let mut loss = 0.0;
    let mut errors = Vec::with_capacity(q.len());
    for ((q, y), w) in q.iter().zip(targets).zip(weights) {
        let d = q - y;
        loss += w * d * d;
        errors.push(d.abs());
    }
    (loss / b, errors)
}

fn check_len(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(SmcError::ShapeMismatch { expected, got })
    }
}

/// `ψ ← ρ φ + (1 - ρ) ψ`.
pub fn polyak_update(phi: &[f64], psi: &mut [f64], rho: f64) -> Result<()> {
    check_len(phi.len(), psi.len())?;
    if !(rho > 0.0 && rho <= 1.0) {
        return Err(SmcError::InvalidConfig(format!("polyak coefficient {rho} outside (0, 1]")));
    }
    if rho == 1.0 {
        psi.copy_from_slice(phi);
        return Ok(());
    }
    for (p, f) in psi.iter_mut().zip(phi) {
        *p = rho * f + (1.0 - rho) * *p;
    }
    Ok(())
}
