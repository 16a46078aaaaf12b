//! Particle-system machinery: plain SMC, SMC with value-function heuristic
//! factors, and CriticSMC with putative action particles.
//!
//! All weights live in log space. Post-resampling weights are kept *local*:
//! `log_w_post` omits both the running normalizer and the uniform `1/N`
//! factor, so it is `0` for plain SMC. The normalizer of every step is the
//! log-mean-exp of the pre-resampling weights, which folds in the `1/N` and
//! `1/K` masses, and `log W_1 + ... + log W_t` is accumulated separately; the
//! evidence estimate is `log_evidence_acc + log_mean_exp(log_w_post)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::critic::Critic;
use crate::env::Environment;
use crate::error::{Result, SmcError};
use crate::math::log_mean_exp;

pub mod resample;

pub use resample::{effective_sample_size, flat_index_decode, flat_index_encode, resample, ResamplingScheme};

/// Deliberately wrong weight updates, used as negative controls by the
/// unbiasedness suite.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fault {
    #[default]
    None,
    /// CriticSMC forgets to divide the critic back out of `w̄`.
    KeepCriticInPostWeight,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SmcConfig {
    pub n_particles: usize,
    /// Overrides the environment horizon.
    pub horizon: Option<usize>,
    pub scheme: ResamplingScheme,
    /// Keep the full genealogy so trajectories can be reconstructed.
    pub record_history: bool,
    /// Collect a per-step diagnostics row.
    pub trace: bool,
    pub fault: Fault,
}

impl SmcConfig {
    pub fn new(n_particles: usize) -> Self {
        Self {
            n_particles,
            horizon: None,
            scheme: ResamplingScheme::Systematic,
            record_history: false,
            trace: false,
            fault: Fault::None,
        }
    }

    pub fn with_horizon(mut self, horizon: usize) -> Self {
        self.horizon = Some(horizon);
        self
    }

    pub fn with_scheme(mut self, scheme: ResamplingScheme) -> Self {
        self.scheme = scheme;
        self
    }

    pub fn with_history(mut self) -> Self {
        self.record_history = true;
        self
    }

    pub fn with_trace(mut self) -> Self {
        self.trace = true;
        self
    }

    pub fn with_fault(mut self, fault: Fault) -> Self {
        self.fault = fault;
        self
    }
}

/// One timestep of the genealogy. Entry `n` describes the particle that
/// occupies slot `n` after resampling at this step.
#[derive(Clone, Debug)]
pub struct GenerationStep<S, A> {
    pub parents: Vec<usize>,
    pub actions: Vec<A>,
    pub rewards: Vec<f64>,
    pub states: Vec<S>,
}

#[derive(Clone, Debug)]
pub struct History<S, A> {
    pub initial: Vec<S>,
    pub steps: Vec<GenerationStep<S, A>>,
}

impl<S: Clone, A: Clone> History<S, A> {
    /// `(s_t, a_t, r_t, s_{t+1})` along the ancestry of final particle `n`.
    pub fn lineage(&self, n: usize) -> Vec<(S, A, f64, S)> {
        let mut out = Vec::with_capacity(self.steps.len());
        let mut slot = n;
        for (t, step) in self.steps.iter().enumerate().rev() {
            let parent = step.parents[slot];
            let prev = if t == 0 { &self.initial[parent] } else { &self.steps[t - 1].states[parent] };
            out.push((prev.clone(), step.actions[slot].clone(), step.rewards[slot], step.states[slot].clone()));
            slot = parent;
        }
        out.reverse();
        out
    }

    /// Every executed transition, in time order.
    pub fn transitions(&self) -> Vec<(S, A, f64, S)> {
        let mut out = Vec::new();
        for (t, step) in self.steps.iter().enumerate() {
            let prev = if t == 0 { &self.initial } else { &self.steps[t - 1].states };
            for n in 0..step.parents.len() {
                out.push((
                    prev[step.parents[n]].clone(),
                    step.actions[n].clone(),
                    step.rewards[n],
                    step.states[n].clone(),
                ));
            }
        }
        out
    }
}

/// N weighted trajectories.
#[derive(Clone, Debug)]
pub struct ParticleSystem<S, A> {
    pub states: Vec<S>,
    /// Post-resampling log-weights `w̄`, without the running normalizer and
    /// without the uniform `log(1/N)`.
    pub log_w_post: Vec<f64>,
    /// `sum_t log W_t`.
    pub log_evidence_acc: f64,
    /// Number of completed steps.
    pub t: usize,
    pub history: Option<History<S, A>>,
}

impl<S: Clone, A: Clone> ParticleSystem<S, A> {
    fn new(states: Vec<S>, record: bool) -> Self {
        let n = states.len();
        let history = record.then(|| History { initial: states.clone(), steps: Vec::new() });
        Self { states, log_w_post: vec![0.0; n], log_evidence_acc: 0.0, t: 0, history }
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// Estimate of `log p(O_{1:t})`.
    pub fn log_evidence(&self) -> f64 {
        self.log_evidence_acc + log_mean_exp(&self.log_w_post)
    }

    /// Draws a particle index proportionally to the final weights.
    pub fn sample_index<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        resample(&self.log_w_post, 1, ResamplingScheme::Multinomial, rng).map(|v| v[0]).unwrap_or(0)
    }

    fn advance(
        &mut self,
        parents: Vec<usize>,
        actions: Vec<A>,
        rewards: Vec<f64>,
        states: Vec<S>,
        log_w_post: Vec<f64>,
        log_normalizer: f64,
    ) {
        if let Some(history) = self.history.as_mut() {
            history.steps.push(GenerationStep { parents, actions, rewards, states: states.clone() });
        }
        self.states = states;
        self.log_w_post = log_w_post;
        self.log_evidence_acc += log_normalizer;
        self.t += 1;
    }
}

/// Per-step diagnostics row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepTrace {
    pub t: usize,
    /// ESS of the pre-resampling population.
    pub ess: f64,
    pub log_normalizer: f64,
    /// Resampled particles whose new state violates the constraint.
    pub infractions: usize,
}

#[derive(Clone, Debug)]
pub struct SmcRun<S, A> {
    pub system: ParticleSystem<S, A>,
    pub log_evidence: f64,
    pub trace: Vec<StepTrace>,
}

/// Streams for one run: the main stream drives initial states, actions and
/// resampling; the auxiliary stream feeds the soft value estimates so that a
/// zero critic leaves the main stream untouched.
pub(crate) fn run_streams(seed: u64) -> (ChaCha8Rng, ChaCha8Rng) {
    let main = ChaCha8Rng::seed_from_u64(seed);
    let mut aux = ChaCha8Rng::seed_from_u64(seed);
    aux.set_stream(1);
    (main, aux)
}

fn validate(cfg: &SmcConfig, k: usize) -> Result<()> {
    if cfg.n_particles == 0 {
        return Err(SmcError::InvalidConfig("N must be at least 1".into()));
    }
    if k == 0 {
        return Err(SmcError::InvalidConfig("K must be at least 1".into()));
    }
    if cfg.horizon == Some(0) {
        return Err(SmcError::InvalidConfig("T must be at least 1".into()));
    }
    Ok(())
}

fn initial_system<E: Environment, R: Rng>(
    env: &E,
    cfg: &SmcConfig,
    start: Option<&E::State>,
    rng: &mut R,
) -> ParticleSystem<E::State, E::Action> {
    let states = match start {
        Some(s) => vec![s.clone(); cfg.n_particles],
        None => (0..cfg.n_particles).map(|_| env.sample_initial(rng)).collect(),
    };
    ParticleSystem::new(states, cfg.record_history)
}

fn check_finite(values: &[f64], t: usize) -> Result<()> {
    match values.iter().find(|v| !v.is_finite()) {
        Some(&value) => Err(SmcError::CriticFailure { t, value }),
        None => Ok(()),
    }
}

fn trace_row<E: Environment>(env: &E, t: usize, pre: &[f64], log_normalizer: f64, states: &[E::State]) -> StepTrace {
    StepTrace {
        t,
        ess: effective_sample_size(pre).unwrap_or(0.0),
        log_normalizer,
        infractions: states.iter().filter(|s| !env.constraint_ok(s)).count(),
    }
}

fn finish<E: Environment>(
    system: ParticleSystem<E::State, E::Action>,
    trace: Vec<StepTrace>,
) -> SmcRun<E::State, E::Action> {
    let log_evidence = system.log_evidence();
    SmcRun { system, log_evidence, trace }
}

fn all_terminal<E: Environment>(env: &E, states: &[E::State]) -> bool {
    states.iter().all(|s| env.is_terminal(s))
}

/// Bootstrap SMC: propagate, weight by the reward, resample every step.
pub fn run_smc<E: Environment>(
    env: &E,
    cfg: &SmcConfig,
    start: Option<&E::State>,
    seed: u64,
) -> Result<SmcRun<E::State, E::Action>> {
    run_smc_putative(env, cfg, 1, start, seed)
}

/// Bootstrap SMC where every particle first expands into `k` stepped
/// children weighted by their immediate reward; `N` survivors are resampled
/// from the `N·K` population. Costs `N·K` transitions per step; `k = 1` is
/// plain SMC.
pub fn run_smc_putative<E: Environment>(
    env: &E,
    cfg: &SmcConfig,
    k: usize,
    start: Option<&E::State>,
    seed: u64,
) -> Result<SmcRun<E::State, E::Action>> {
    validate(cfg, k)?;
    let n = cfg.n_particles;
    let horizon = cfg.horizon.unwrap_or_else(|| env.horizon());
    let (mut rng, _) = run_streams(seed);
    let mut system = initial_system(env, cfg, start, &mut rng);
    let mut trace = Vec::new();

    let mut actions = Vec::with_capacity(n * k);
    for t in 1..=horizon {
        if all_terminal(env, &system.states) {
            break;
        }
        actions.clear();
        for s in &system.states {
            env.prior_sample_into(s, &mut rng, k, &mut actions);
        }
        let mut next = Vec::with_capacity(n * k);
        let mut rewards = Vec::with_capacity(n * k);
        let mut pre = Vec::with_capacity(n * k);
        for (flat, a) in actions.iter().enumerate() {
            let parent = flat / k;
            let s = &system.states[parent];
            let s_next = env.transition(s, a);
            let r = env.reward(s, a, &s_next);
            pre.push(system.log_w_post[parent] + r);
            rewards.push(r);
            next.push(s_next);
        }
        let log_normalizer = log_mean_exp(&pre);
        let alpha = resample(&pre, n, cfg.scheme, &mut rng)?;
        let states: Vec<_> = alpha.iter().map(|&i| next[i].clone()).collect();
        if cfg.trace {
            trace.push(trace_row(env, t, &pre, log_normalizer, &states));
        }
        system.advance(
            alpha.iter().map(|&i| i / k).collect(),
            alpha.iter().map(|&i| actions[i].clone()).collect(),
            alpha.iter().map(|&i| rewards[i]).collect(),
            states,
            vec![0.0; n],
            log_normalizer,
        );
    }
    Ok(finish::<E>(system, trace))
}

/// Soft value estimate `log (1/J) sum_j exp Q(s, â_j)` with `â_j ~ π(·|s)`.
pub fn soft_value<E, C, R>(env: &E, critic: &C, state: &E::State, samples: usize, rng: &mut R) -> f64
where
    E: Environment,
    C: Critic<E::State, E::Action> + ?Sized,
    R: Rng + ?Sized,
{
    let actions = env.prior_sample(state, rng, samples);
    log_mean_exp(&critic.evaluate(state, &actions))
}

/// SMC with the heuristic factor `h_t = V(s_{t+1})` added before resampling
/// and divided back out afterwards, which gives the incremental weight
/// `r_t + V(s_{t+1}) - V(s_t)` along every lineage. `V` is the soft value
/// estimate over `value_samples` prior actions.
pub fn run_smc_value_heuristic<E, C>(
    env: &E,
    critic: &C,
    cfg: &SmcConfig,
    value_samples: usize,
    start: Option<&E::State>,
    seed: u64,
) -> Result<SmcRun<E::State, E::Action>>
where
    E: Environment,
    C: Critic<E::State, E::Action> + ?Sized,
{
    validate(cfg, value_samples)?;
    let n = cfg.n_particles;
    let horizon = cfg.horizon.unwrap_or_else(|| env.horizon());
    let (mut rng, mut aux) = run_streams(seed);
    let mut system = initial_system(env, cfg, start, &mut rng);
    let mut trace = Vec::new();

    let mut actions = Vec::with_capacity(n);
    for t in 1..=horizon {
        if all_terminal(env, &system.states) {
            break;
        }
        actions.clear();
        for s in &system.states {
            env.prior_sample_into(s, &mut rng, 1, &mut actions);
        }
        let mut next = Vec::with_capacity(n);
        let mut rewards = Vec::with_capacity(n);
        let mut heuristic = Vec::with_capacity(n);
        let mut pre = Vec::with_capacity(n);
        for (i, a) in actions.iter().enumerate() {
            let s = &system.states[i];
            let s_next = env.transition(s, a);
            let r = env.reward(s, a, &s_next);
            let h = soft_value(env, critic, &s_next, value_samples, &mut aux);
            if !h.is_finite() {
                return Err(SmcError::CriticFailure { t, value: h });
            }
            pre.push(system.log_w_post[i] + r + h);
            rewards.push(r);
            heuristic.push(h);
            next.push(s_next);
        }
        let log_normalizer = log_mean_exp(&pre);
        let alpha = resample(&pre, n, cfg.scheme, &mut rng)?;
        let states: Vec<_> = alpha.iter().map(|&i| next[i].clone()).collect();
        if cfg.trace {
            trace.push(trace_row(env, t, &pre, log_normalizer, &states));
        }
        let post = alpha.iter().map(|&i| -heuristic[i]).collect();
        system.advance(
            alpha.clone(),
            alpha.iter().map(|&i| actions[i].clone()).collect(),
            alpha.iter().map(|&i| rewards[i]).collect(),
            states,
            post,
            log_normalizer,
        );
    }
    Ok(finish::<E>(system, trace))
}

/// CriticSMC: every particle proposes `k` putative actions from the prior,
/// they are scored with the critic *before* any transition, `N` survivors are
/// resampled from the `N·K` population, and only the survivors are stepped.
///
/// Per step this performs exactly `N` transitions and `N·K` critic
/// evaluations.
pub fn run_critic_smc<E, C>(
    env: &E,
    critic: &C,
    cfg: &SmcConfig,
    k: usize,
    start: Option<&E::State>,
    seed: u64,
) -> Result<SmcRun<E::State, E::Action>>
where
    E: Environment,
    C: Critic<E::State, E::Action> + ?Sized,
{
    validate(cfg, k)?;
    let n = cfg.n_particles;
    let horizon = cfg.horizon.unwrap_or_else(|| env.horizon());
    let (mut rng, _) = run_streams(seed);
    let mut system = initial_system(env, cfg, start, &mut rng);
    let mut trace = Vec::new();

    let mut actions = Vec::with_capacity(n * k);
    let mut q = Vec::with_capacity(n * k);
    let mut pre = Vec::with_capacity(n * k);
    for t in 1..=horizon {
        if all_terminal(env, &system.states) {
            break;
        }
        actions.clear();
        q.clear();
        for s in &system.states {
            env.prior_sample_into(s, &mut rng, k, &mut actions);
        }
        for (i, s) in system.states.iter().enumerate() {
            critic.evaluate_into(s, &actions[i * k..(i + 1) * k], &mut q);
        }
        check_finite(&q, t)?;
        pre.clear();
        pre.extend(q.iter().enumerate().map(|(flat, &qv)| system.log_w_post[flat / k] + qv));
        let log_normalizer = log_mean_exp(&pre);
        let alpha = resample(&pre, n, cfg.scheme, &mut rng)?;

        let mut parents = Vec::with_capacity(n);
        let mut chosen = Vec::with_capacity(n);
        let mut rewards = Vec::with_capacity(n);
        let mut states = Vec::with_capacity(n);
        let mut post = Vec::with_capacity(n);
        for &flat in &alpha {
            let (i, _) = flat_index_decode(flat, k, n);
            let s = &system.states[i];
            let a = &actions[flat];
            let s_next = env.transition(s, a);
            let r = env.reward(s, a, &s_next);
            let correction = match cfg.fault {
                Fault::None => q[flat],
                Fault::KeepCriticInPostWeight => 0.0,
            };
            post.push(r - correction);
            parents.push(i);
            chosen.push(a.clone());
            rewards.push(r);
            states.push(s_next);
        }
        if cfg.trace {
            trace.push(trace_row(env, t, &pre, log_normalizer, &states));
        }
        system.advance(parents, chosen, rewards, states, post, log_normalizer);
    }
    Ok(finish::<E>(system, trace))
}
