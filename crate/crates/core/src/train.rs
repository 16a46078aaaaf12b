//! Fitted soft-Q (or hard-Q) iteration on data collected by CriticSMC.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::critic::{
    polyak_update, q_target, td_loss_grad, NextActions, PrioritizedReplayBuffer, ReplayConfig, TargetKind,
    TrainableCritic, Transition,
};
use crate::env::{DiscreteMdp, DiscreteState, Environment};
use crate::error::{Result, SmcError};
use crate::math::derive_seed;
use crate::smc::{run_critic_smc, SmcConfig, SmcRun};

const COLLECT_STREAM: u64 = 1;
const EVAL_STREAM: u64 = 2;
const TRAIN_STREAM: u64 = 3;
const START_STREAM: u64 = 4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingSchedule {
    pub total_env_steps: usize,
    pub warmup_steps: usize,
    pub train_steps_per_env_step: f64,
    /// Environment steps between evaluations.
    pub eval_every: usize,
    pub eval_episodes: usize,
    pub n_collect: usize,
    pub k_collect: usize,
    pub n_eval: usize,
    pub k_eval: usize,
}

impl Default for TrainingSchedule {
    fn default() -> Self {
        Self {
            total_env_steps: 100_000,
            warmup_steps: 2_000,
            train_steps_per_env_step: 1.0,
            eval_every: 25_000,
            eval_episodes: 250,
            n_collect: 8,
            k_collect: 256,
            n_eval: 50,
            k_eval: 1024,
        }
    }
}

impl TrainingSchedule {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            self.total_env_steps,
            self.eval_every,
            self.eval_episodes,
            self.n_collect,
            self.k_collect,
            self.n_eval,
            self.k_eval,
        ];
        if positive.contains(&0) {
            return Err(SmcError::InvalidConfig("schedule counts must be positive".into()));
        }
        if self.warmup_steps > self.total_env_steps {
            return Err(SmcError::InvalidConfig("warmup exceeds the total number of steps".into()));
        }
        if !(self.train_steps_per_env_step >= 0.0 && self.train_steps_per_env_step.is_finite()) {
            return Err(SmcError::InvalidConfig("train_steps_per_env_step must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Hyper {
    pub batch: usize,
    pub lr: f64,
    pub gamma: f64,
    pub polyak: f64,
    pub target: TargetKind,
    pub next_actions: NextActions,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Targets are clamped from below at this value. Soft-Q values far under
    /// zero carry no usable weight, and leaving them at the full penalty
    /// swamps the squared loss.
    pub target_floor: Option<f64>,
    /// Output scale of freshly initialized neural critics.
    pub critic_scale: f64,
}

impl Default for Hyper {
    fn default() -> Self {
        Self {
            batch: 256,
            lr: 1e-3,
            gamma: 0.99,
            polyak: 0.005,
            target: TargetKind::Soft,
            next_actions: NextActions::Sampled(32),
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            target_floor: Some(-10.0),
            critic_scale: 10.0,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingConfig {
    pub schedule: TrainingSchedule,
    pub hyper: Hyper,
    pub replay: ReplayConfig,
}

#[derive(Clone, Debug)]
pub struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(n_params: usize) -> Self {
        Self { m: vec![0.0; n_params], v: vec![0.0; n_params], t: 0 }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64], hyper: &Hyper) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grad.len(), self.m.len());
        self.t += 1;
        let (b1, b2) = (hyper.adam_beta1, hyper.adam_beta2);
        let c1 = 1.0 - b1.powi(self.t);
        let c2 = 1.0 - b2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = b1 * self.m[i] + (1.0 - b1) * grad[i];
            self.v[i] = b2 * self.v[i] + (1.0 - b2) * grad[i] * grad[i];
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] -= hyper.lr * m_hat / (v_hat.sqrt() + hyper.adam_eps);
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepStats {
    pub loss: f64,
    pub mean_abs_td: f64,
}

/// The online critic, its target copy and the optimizer state.
#[derive(Clone, Debug)]
pub struct Learner<C> {
    pub critic: C,
    pub target: C,
    pub adam: Adam,
}

impl<C: Clone> Learner<C> {
    pub fn new<S, A>(critic: C) -> Self
    where
        C: TrainableCritic<S, A>,
    {
        let adam = Adam::new(critic.params().len());
        Self { target: critic.clone(), critic, adam }
    }
}

/// One prioritized minibatch update: targets from the target network, one
/// Adam step on the online critic, priority refresh, Polyak averaging.
///
/// Returns `Ok(None)` while the buffer holds fewer than `batch` entries.
pub fn train_step<E, C, R>(
    env: &E,
    buffer: &mut PrioritizedReplayBuffer<E::State, E::Action>,
    learner: &mut Learner<C>,
    hyper: &Hyper,
    beta: f64,
    rng: &mut R,
) -> Result<Option<StepStats>>
where
    E: Environment,
    C: TrainableCritic<E::State, E::Action>,
    R: Rng + ?Sized,
{
    if buffer.len() < hyper.batch || hyper.batch == 0 {
        return Ok(None);
    }
    let sample = buffer.sample(hyper.batch, beta, rng);
    let scale = learner.critic.reward_scale();
    let mut targets = Vec::with_capacity(hyper.batch);
    for &i in &sample.indices {
        let tr = buffer.get(i);
        let y = q_target(
            hyper.target,
            env,
            tr.reward,
            &tr.next,
            tr.terminal,
            &learner.target,
            hyper.next_actions,
            hyper.gamma,
            rng,
        );
        let y = match hyper.target_floor {
            Some(floor) => y.max(floor),
            None => y,
        };
        targets.push(y / scale);
    }
    let pairs: Vec<(&E::State, &E::Action)> = sample
        .indices
        .iter()
        .map(|&i| {
            let tr = buffer.get(i);
            (&tr.state, &tr.action)
        })
        .collect();
    let mut grad = vec![0.0; learner.critic.params().len()];
    let (loss, errors) = td_loss_grad(&learner.critic, &pairs, &targets, &sample.weights, &mut grad)?;
    if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(SmcError::CriticFailure { t: 0, value: loss });
    }
    drop(pairs);
    learner.adam.step(learner.critic.params_mut(), &grad, hyper);
    learner.critic.refresh();
    buffer.update_priorities(&sample.indices, &errors);
    polyak_update(learner.critic.params(), learner.target.params_mut(), hyper.polyak)?;
    learner.target.refresh();
    let mean_abs_td = errors.iter().sum::<f64>() / errors.len() as f64;
    Ok(Some(StepStats { loss, mean_abs_td }))
}

/// Whether the trajectory ending in final particle `n` ever violates the
/// constraint. Requires a run with history.
pub fn lineage_infracted<E: Environment>(env: &E, run: &SmcRun<E::State, E::Action>, n: usize) -> bool {
    let history = run.system.history.as_ref().expect("run recorded without history");
    let lineage = history.lineage(n);
    match lineage.first() {
        Some((s0, ..)) if !env.constraint_ok(s0) => true,
        _ => lineage.iter().any(|(.., next)| !env.constraint_ok(next)),
    }
}

/// Scores a planner run: one final particle is drawn by its weight and its
/// trajectory is checked for infractions.
pub fn score_run<E: Environment, R: Rng + ?Sized>(env: &E, run: &SmcRun<E::State, E::Action>, rng: &mut R) -> bool {
    let n = run.system.sample_index(rng);
    lineage_infracted(env, run, n)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CollectStats {
    pub transitions: usize,
    pub infraction_transitions: usize,
    pub degenerate: bool,
}

/// Runs one CriticSMC episode with the current critic and appends every
/// executed non-terminal transition to the buffer.
pub fn collect_experience<E, C>(
    env: &E,
    critic: &C,
    n: usize,
    k: usize,
    buffer: &mut PrioritizedReplayBuffer<E::State, E::Action>,
    seed: u64,
) -> Result<CollectStats>
where
    E: Environment,
    C: crate::critic::Critic<E::State, E::Action> + ?Sized,
{
    let cfg = SmcConfig::new(n).with_history();
    let start = fixed_start(env, seed);
    let run = match run_critic_smc(env, critic, &cfg, k, Some(&start), seed) {
        Ok(run) => run,
        Err(SmcError::Degenerate { .. }) => return Ok(CollectStats { degenerate: true, ..Default::default() }),
        Err(e) => return Err(e),
    };
    let mut stats = CollectStats::default();
    for (state, action, reward, next) in run.system.history.as_ref().expect("history").transitions() {
        if env.is_terminal(&state) {
            continue;
        }
        let terminal = env.is_terminal(&next);
        stats.transitions += 1;
        if reward < 0.0 {
            stats.infraction_transitions += 1;
        }
        buffer.push(Transition { state, action, reward, next, terminal });
    }
    Ok(stats)
}

/// One initial state shared by every particle of an episode, so the planner
/// cannot pick its own starting conditions.
pub fn fixed_start<E: Environment>(env: &E, seed: u64) -> E::State {
    env.sample_initial(&mut ChaCha8Rng::seed_from_u64(derive_seed(seed, &[START_STREAM])))
}

/// Infraction rate of CriticSMC over `seeds`, one rollout per seed.
pub fn evaluate_infraction_rate<E, C>(env: &E, critic: &C, n: usize, k: usize, seeds: &[u64]) -> Result<f64>
where
    E: Environment,
    C: crate::critic::Critic<E::State, E::Action> + ?Sized,
{
    let cfg = SmcConfig::new(n).with_history();
    let mut infractions = 0usize;
    for &seed in seeds {
        let start = fixed_start(env, seed);
        let run = run_critic_smc(env, critic, &cfg, k, Some(&start), seed)?;
        let mut pick = ChaCha8Rng::seed_from_u64(seed ^ 0x5EED);
        infractions += score_run(env, &run, &mut pick) as usize;
    }
    Ok(infractions as f64 / seeds.len().max(1) as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossPoint {
    pub train_step: usize,
    pub env_steps: usize,
    pub loss: f64,
    pub elapsed_seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalPoint {
    pub env_steps: usize,
    pub train_steps: usize,
    pub infraction_rate: f64,
    /// Share of penalized transitions among those collected since the
    /// previous evaluation.
    pub recent_infraction_fraction: f64,
    /// Mean training loss since the previous evaluation.
    pub recent_loss: f64,
    pub oracle_error: Option<f64>,
    pub seeds: Vec<u64>,
    pub elapsed_seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PhaseTimes {
    pub collect_seconds: f64,
    pub train_seconds: f64,
    pub eval_seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingReport {
    pub loss_curve: Vec<LossPoint>,
    pub evals: Vec<EvalPoint>,
    pub times: PhaseTimes,
    pub best_eval: Option<usize>,
    pub env_steps: usize,
    pub train_steps: usize,
    pub degenerate_episodes: usize,
}

/// Optional distance between a critic and ground truth, logged at every
/// evaluation.
pub type OracleFn<'a, C> = &'a dyn Fn(&C) -> f64;

/// Alternates CriticSMC collection with the current critic and minibatch
/// updates, evaluates on held-out seeds every `eval_every` environment steps
/// and returns the best critic by evaluation infraction rate (ties broken by
/// the lower recent loss).
pub fn train_critic<E, C>(
    env: &E,
    init: C,
    config: &TrainingConfig,
    seed: u64,
    oracle: Option<OracleFn<'_, C>>,
    mut progress: impl FnMut(&EvalPoint),
) -> Result<(C, TrainingReport)>
where
    E: Environment,
    C: TrainableCritic<E::State, E::Action>,
{
    let schedule = &config.schedule;
    schedule.validate()?;
    let hyper = &config.hyper;
    let mut buffer = PrioritizedReplayBuffer::new(config.replay.clone());
    let mut learner = Learner::new(init);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[TRAIN_STREAM]));
    let eval_seeds: Vec<u64> =
        (0..schedule.eval_episodes as u64).map(|i| derive_seed(seed, &[EVAL_STREAM, i])).collect();

    let start = Instant::now();
    let mut report = TrainingReport::default();
    let mut best: Option<(f64, f64, C)> = None;
    let mut next_eval = schedule.eval_every;
    let mut episode = 0u64;
    let mut owed = 0.0;
    let (mut recent_transitions, mut recent_infractions) = (0usize, 0usize);
    let (mut recent_loss_sum, mut recent_loss_count) = (0.0, 0usize);

    while report.env_steps < schedule.total_env_steps {
        let t0 = Instant::now();
        let stats = collect_experience(
            env,
            &learner.critic,
            schedule.n_collect,
            schedule.k_collect,
            &mut buffer,
            derive_seed(seed, &[COLLECT_STREAM, episode]),
        )?;
        episode += 1;
        report.times.collect_seconds += t0.elapsed().as_secs_f64();
        if stats.degenerate {
            report.degenerate_episodes += 1;
            continue;
        }
        report.env_steps += stats.transitions;
        recent_transitions += stats.transitions;
        recent_infractions += stats.infraction_transitions;

        let t0 = Instant::now();
        if report.env_steps >= schedule.warmup_steps {
            owed += stats.transitions as f64 * schedule.train_steps_per_env_step;
            let beta = buffer.beta_at(report.env_steps as f64 / schedule.total_env_steps as f64);
            while owed >= 1.0 {
                owed -= 1.0;
                if let Some(step) = train_step(env, &mut buffer, &mut learner, hyper, beta, &mut rng)? {
                    report.train_steps += 1;
                    recent_loss_sum += step.loss;
                    recent_loss_count += 1;
                    if report.train_steps % 100 == 0 {
                        report.loss_curve.push(LossPoint {
                            train_step: report.train_steps,
                            env_steps: report.env_steps,
                            loss: step.loss,
                            elapsed_seconds: start.elapsed().as_secs_f64(),
                        });
                    }
                }
            }
        }
        report.times.train_seconds += t0.elapsed().as_secs_f64();

        let done = report.env_steps >= schedule.total_env_steps;
        if report.env_steps >= next_eval || done {
            next_eval = report.env_steps + schedule.eval_every;
            let t0 = Instant::now();
            let rate = evaluate_infraction_rate(env, &learner.critic, schedule.n_eval, schedule.k_eval, &eval_seeds)?;
            report.times.eval_seconds += t0.elapsed().as_secs_f64();
            let recent_loss = if recent_loss_count > 0 { recent_loss_sum / recent_loss_count as f64 } else { f64::NAN };
            let point = EvalPoint {
                env_steps: report.env_steps,
                train_steps: report.train_steps,
                infraction_rate: rate,
                recent_infraction_fraction: recent_infractions as f64 / recent_transitions.max(1) as f64,
                recent_loss,
                oracle_error: oracle.map(|f| f(&learner.critic)),
                seeds: eval_seeds.clone(),
                elapsed_seconds: start.elapsed().as_secs_f64(),
            };
            progress(&point);
            let loss_key = if recent_loss.is_nan() { f64::INFINITY } else { recent_loss };
            let better = match &best {
                None => true,
                Some((r, l, _)) => rate < *r || (rate == *r && loss_key < *l),
            };
            if better {
                best = Some((rate, loss_key, learner.critic.clone()));
                report.best_eval = Some(report.evals.len());
            }
            report.evals.push(point);
            recent_transitions = 0;
            recent_infractions = 0;
            recent_loss_sum = 0.0;
            recent_loss_count = 0;
        }
    }
    let critic = best.map(|(_, _, c)| c).unwrap_or(learner.critic);
    Ok((critic, report))
}

/// A buffer holding every `(t, s, a)` of a discrete MDP exactly once.
pub fn exhaustive_buffer(mdp: &DiscreteMdp) -> PrioritizedReplayBuffer<DiscreteState, usize> {
    let total = mdp.horizon * mdp.n_states() * mdp.n_actions();
    let mut buffer = PrioritizedReplayBuffer::new(ReplayConfig { capacity: total, ..ReplayConfig::default() });
    for t in 0..mdp.horizon {
        for s in 0..mdp.n_states() {
            for a in 0..mdp.n_actions() {
                let state = DiscreteState { index: s, t };
                let next = mdp.transition(&state, &a);
                let reward = mdp.reward(&state, &a, &next);
                buffer.push(Transition { state, action: a, reward, next, terminal: mdp.is_terminal(&next) });
            }
        }
    }
    buffer
}

/// Runs `steps` updates on a fixed buffer and returns the loss curve.
pub fn fit_offline<E, C>(
    env: &E,
    learner: &mut Learner<C>,
    buffer: &mut PrioritizedReplayBuffer<E::State, E::Action>,
    hyper: &Hyper,
    steps: usize,
    seed: u64,
) -> Result<Vec<f64>>
where
    E: Environment,
    C: TrainableCritic<E::State, E::Action>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut losses = Vec::with_capacity(steps);
    for i in 0..steps {
        let beta = buffer.beta_at(i as f64 / steps.max(1) as f64);
        if let Some(stats) = train_step(env, buffer, learner, hyper, beta, &mut rng)? {
            losses.push(stats.loss);
        }
    }
    Ok(losses)
}
