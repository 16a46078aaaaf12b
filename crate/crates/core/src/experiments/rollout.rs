//! Single-trajectory planners and the per-rollout dispatch shared by the
//! experiments.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::critic::{ConstantCritic, Critic};
use crate::env::Environment;
use crate::error::{Result, SmcError};
use crate::math::{derive_seed, log_mean_exp};
use crate::smc::{resample, run_critic_smc, run_smc, run_smc_value_heuristic, ResamplingScheme, SmcConfig, SmcRun};
use crate::train::lineage_infracted;

const PICK_STREAM: u64 = 0xF1A1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Prior,
    Rejection,
    Smc,
    SmcValueHeuristic,
    CriticSmc,
    ModelFreeControl,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Prior => "prior",
            Variant::Rejection => "rejection",
            Variant::Smc => "smc",
            Variant::SmcValueHeuristic => "smc_value_heuristic",
            Variant::CriticSmc => "critic_smc",
            Variant::ModelFreeControl => "model_free_control",
        }
    }

    pub fn needs_critic(self) -> bool {
        matches!(self, Variant::SmcValueHeuristic | Variant::CriticSmc | Variant::ModelFreeControl)
    }
}

/// A realized trajectory: the start state and `(a_t, r_t, s_{t+1})` steps.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Trajectory<S, A> {
    pub initial: S,
    pub steps: Vec<(A, f64, S)>,
}

impl<S: Clone, A: Clone> Trajectory<S, A> {
    pub fn infracted<E: Environment<State = S, Action = A>>(&self, env: &E) -> bool {
        !env.constraint_ok(&self.initial) || self.steps.iter().any(|(_, _, s)| !env.constraint_ok(s))
    }

    pub fn total_reward(&self) -> f64 {
        self.steps.iter().map(|(_, r, _)| r).sum()
    }

    /// The trajectory of final particle `n` of a run recorded with history.
    pub fn from_run(run: &SmcRun<S, A>, n: usize) -> Self {
        let history = run.system.history.as_ref().expect("run recorded without history");
        let lineage = history.lineage(n);
        let initial = match lineage.first() {
            Some((s0, ..)) => s0.clone(),
            None => run.system.states[n].clone(),
        };
        Self { initial, steps: lineage.into_iter().map(|(_, a, r, s)| (a, r, s)).collect() }
    }
}

fn start_state<E: Environment>(env: &E, start: Option<&E::State>, rng: &mut ChaCha8Rng) -> E::State {
    match start {
        Some(s) => s.clone(),
        None => env.sample_initial(rng),
    }
}

/// Rolls out the prior policy until the horizon or a terminal state.
pub fn prior_rollout<E: Environment>(
    env: &E,
    horizon: usize,
    start: Option<&E::State>,
    seed: u64,
) -> Trajectory<E::State, E::Action> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let initial = start_state(env, start, &mut rng);
    let mut steps = Vec::with_capacity(horizon);
    let mut state = initial.clone();
    let mut actions = Vec::with_capacity(1);
    for _ in 0..horizon {
        if env.is_terminal(&state) {
            break;
        }
        actions.clear();
        env.prior_sample_into(&state, &mut rng, 1, &mut actions);
        let a = actions.pop().expect("one prior draw");
        let next = env.transition(&state, &a);
        let r = env.reward(&state, &a, &next);
        steps.push((a, r, next.clone()));
        state = next;
    }
    Trajectory { initial, steps }
}

/// Seed of trial `i` of a rejection sampler; trial 0 reuses the rollout seed
/// so a single trial is exactly the prior rollout.
pub fn trial_seed(seed: u64, trial: usize) -> u64 {
    if trial == 0 {
        seed
    } else {
        derive_seed(seed, &[trial as u64])
    }
}

/// Whole-trajectory rejection sampling: the first infraction-free prior
/// rollout, or the last attempt when every trial failed. Also returns the
/// number of trials used.
pub fn rejection_sample<E: Environment>(
    env: &E,
    horizon: usize,
    max_trials: usize,
    start: Option<&E::State>,
    seed: u64,
) -> (Trajectory<E::State, E::Action>, usize) {
    assert!(max_trials >= 1, "rejection sampling needs at least one trial");
    let mut last = None;
    for trial in 0..max_trials {
        let traj = prior_rollout(env, horizon, start, trial_seed(seed, trial));
        if !traj.infracted(env) {
            return (traj, trial + 1);
        }
        last = Some(traj);
    }
    (last.expect("at least one trial"), max_trials)
}

/// Live single-particle control: at every step `k` putative actions are
/// scored by the critic, one is drawn by resampling and executed at once.
/// Also returns the single-particle evidence estimate.
#[allow(clippy::type_complexity)]
pub fn model_free_control<E, C>(
    env: &E,
    critic: &C,
    k: usize,
    horizon: usize,
    scheme: ResamplingScheme,
    start: Option<&E::State>,
    seed: u64,
) -> Result<(Trajectory<E::State, E::Action>, f64)>
where
    E: Environment,
    C: Critic<E::State, E::Action> + ?Sized,
{
    if k == 0 {
        return Err(SmcError::InvalidConfig("K must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let initial = start_state(env, start, &mut rng);
    let mut state = initial.clone();
    let mut steps = Vec::with_capacity(horizon);
    let mut log_w = 0.0;
    let mut log_evidence = 0.0;
    let mut actions = Vec::with_capacity(k);
    let mut q = Vec::with_capacity(k);
    for t in 1..=horizon {
        if env.is_terminal(&state) {
            break;
        }
        actions.clear();
        q.clear();
        env.prior_sample_into(&state, &mut rng, k, &mut actions);
        critic.evaluate_into(&state, &actions, &mut q);
        if let Some(&value) = q.iter().find(|v| !v.is_finite()) {
            return Err(SmcError::CriticFailure { t, value });
        }
        let pre: Vec<f64> = q.iter().map(|qv| log_w + qv).collect();
        log_evidence += log_mean_exp(&pre);
        let j = resample(&pre, 1, scheme, &mut rng)?[0];
        let a = actions.swap_remove(j);
        let next = env.transition(&state, &a);
        let r = env.reward(&state, &a, &next);
        log_w = r - q[j];
        steps.push((a, r, next.clone()));
        state = next;
    }
    Ok((Trajectory { initial, steps }, log_evidence + log_w))
}

/// Knobs shared by every planner.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlannerParams {
    pub n: usize,
    pub k: usize,
    /// Prior samples per soft value estimate.
    pub value_samples: usize,
    pub max_trials: usize,
    pub horizon: usize,
    pub scheme: ResamplingScheme,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RolloutOutcome {
    pub infracted: bool,
    pub log_evidence: f64,
    pub trials: usize,
}

/// One rollout of `variant` from `start`. Multi-particle planners are scored
/// on one final particle drawn by weight.
#[allow(clippy::type_complexity)]
pub fn run_rollout<E, C>(
    variant: Variant,
    env: &E,
    critic: Option<&C>,
    params: &PlannerParams,
    start: Option<&E::State>,
    seed: u64,
) -> Result<(RolloutOutcome, Trajectory<E::State, E::Action>)>
where
    E: Environment,
    C: Critic<E::State, E::Action> + ?Sized,
{
    let need = || critic.ok_or_else(|| SmcError::InvalidConfig(format!("variant {} needs a critic", variant.name())));
    let cfg = SmcConfig::new(params.n).with_horizon(params.horizon).with_scheme(params.scheme).with_history();
    let from_run = |run: SmcRun<E::State, E::Action>| {
        let mut pick = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[PICK_STREAM]));
        let n = run.system.sample_index(&mut pick);
        let infracted = lineage_infracted(env, &run, n);
        let traj = Trajectory::from_run(&run, n);
        (RolloutOutcome { infracted, log_evidence: run.log_evidence, trials: 1 }, traj)
    };
    Ok(match variant {
        Variant::Prior => {
            let traj = prior_rollout(env, params.horizon, start, seed);
            let outcome =
                RolloutOutcome { infracted: traj.infracted(env), log_evidence: traj.total_reward(), trials: 1 };
            (outcome, traj)
        }
        Variant::Rejection => {
            let (traj, trials) = rejection_sample(env, params.horizon, params.max_trials, start, seed);
            let outcome = RolloutOutcome { infracted: traj.infracted(env), log_evidence: traj.total_reward(), trials };
            (outcome, traj)
        }
        // Putative actions with no critic: every candidate scores zero.
        Variant::Smc if params.k > 1 => {
            from_run(run_critic_smc(env, &ConstantCritic(0.0), &cfg, params.k, start, seed)?)
        }
        Variant::Smc => from_run(run_smc(env, &cfg, start, seed)?),
        Variant::SmcValueHeuristic => {
            from_run(run_smc_value_heuristic(env, need()?, &cfg, params.value_samples, start, seed)?)
        }
        Variant::CriticSmc => from_run(run_critic_smc(env, need()?, &cfg, params.k, start, seed)?),
        Variant::ModelFreeControl => {
            let (traj, log_evidence) =
                model_free_control(env, need()?, params.k, params.horizon, params.scheme, start, seed)?;
            (RolloutOutcome { infracted: traj.infracted(env), log_evidence, trials: 1 }, traj)
        }
    })
}
