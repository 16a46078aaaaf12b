//! Pursuit-world studies: the method comparison, the particle/putative
//! ablation grid and model-free control.

use std::path::Path;
use std::time::Instant;

use anyhow::{bail, Context};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::rollout::{run_rollout, PlannerParams, Trajectory, Variant};
use super::{ExperimentConfig, ResultRow, SCHEMA_VERSION};
use crate::critic::mlp::DEFAULT_HIDDEN;
use crate::critic::{Checkpoint, Critic, NeuralCritic};
use crate::env::{Environment, PursuitWorld};
use crate::math::{bootstrap_prob_greater, derive_seed, mean, std_error};
use crate::train::{train_critic, EvalPoint, TrainingReport};

const EPISODE_STREAM: u64 = 0xE915;
const ROLLOUT_STREAM: u64 = 0x7011;
pub const BOOTSTRAP_RESAMPLES: usize = 10_000;

/// Initial state of episode `e`; identical for every variant.
pub fn episode_start<E: Environment>(env: &E, master: u64, e: usize) -> E::State {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(master, &[EPISODE_STREAM, e as u64]));
    env.sample_initial(&mut rng)
}

pub fn rollout_seed(master: u64, e: usize, r: usize) -> u64 {
    derive_seed(master, &[ROLLOUT_STREAM, e as u64, r as u64])
}

/// Per-episode results of one planner configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariantOutcome {
    pub variant: Variant,
    pub n: usize,
    pub k: usize,
    /// Infraction rate of each episode over its rollouts.
    pub episode_rates: Vec<f64>,
    /// One entry per rollout, episode-major.
    pub log_evidences: Vec<f64>,
    pub trials: Vec<usize>,
    pub rollouts: usize,
    pub seconds: f64,
}

impl VariantOutcome {
    pub fn infraction_rate(&self) -> f64 {
        mean(&self.episode_rates)
    }

    pub fn label(&self) -> String {
        format!("{}(N={},K={})", self.variant.name(), self.n, self.k)
    }

    pub fn row(&self, experiment: &str, seed: u64, config: &str) -> ResultRow {
        let total = self.log_evidences.len().max(1);
        ResultRow {
            schema_version: SCHEMA_VERSION,
            experiment: experiment.into(),
            variant: self.variant.name().into(),
            n: self.n,
            k: self.k,
            seed,
            episodes: self.episode_rates.len(),
            rollouts: self.rollouts,
            infraction_rate: self.infraction_rate(),
            mean_log_evidence: mean(&self.log_evidences),
            evidence_std_error: std_error(&self.log_evidences),
            mean_abs_nll_error: None,
            mean_trials: (self.variant == super::Variant::Rejection)
                .then(|| self.trials.iter().sum::<usize>() as f64 / total as f64),
            wall_clock_seconds: (self.seconds / total as f64).max(f64::MIN_POSITIVE),
            config: config.into(),
        }
    }
}

/// One dumped step: `(episode, rollout, t)` with the state after the step.
#[derive(Clone, Debug, Serialize)]
pub struct TrajectoryRow {
    pub variant: String,
    pub episode: usize,
    pub rollout: usize,
    pub t: usize,
    pub state: String,
    pub action: String,
    pub infraction: bool,
}

fn dump_rows<E: Environment>(
    env: &E,
    variant: Variant,
    episode: usize,
    rollout: usize,
    traj: &Trajectory<E::State, E::Action>,
) -> Vec<TrajectoryRow> {
    let mut rows = vec![TrajectoryRow {
        variant: variant.name().into(),
        episode,
        rollout,
        t: 0,
        state: json(&traj.initial),
        action: String::new(),
        infraction: !env.constraint_ok(&traj.initial),
    }];
    for (t, (a, _, s)) in traj.steps.iter().enumerate() {
        rows.push(TrajectoryRow {
            variant: variant.name().into(),
            episode,
            rollout,
            t: t + 1,
            state: json(s),
            action: json(a),
            infraction: !env.constraint_ok(s),
        });
    }
    rows
}

fn json<T: Serialize>(value: &T) -> String {
    serde_json::to_string(value).expect("states and actions serialize")
}

/// Runs `rollouts` rollouts of one planner on each of `episodes` shared
/// initial conditions. Episodes run on the rayon pool; results are merged
/// in episode order.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_variant<E, C>(
    env: &E,
    critic: Option<&C>,
    variant: Variant,
    params: &PlannerParams,
    episodes: usize,
    rollouts: usize,
    master: u64,
    dump_episodes: usize,
) -> crate::Result<(VariantOutcome, Vec<TrajectoryRow>)>
where
    E: Environment,
    C: Critic<E::State, E::Action> + ?Sized,
{
    type Episode = (f64, Vec<f64>, Vec<usize>, f64, Vec<TrajectoryRow>);
    let per_episode: Vec<crate::Result<Episode>> = (0..episodes)
        .into_par_iter()
        .map(|e| {
            let start = episode_start(env, master, e);
            let mut infractions = 0usize;
            let mut evidences = Vec::with_capacity(rollouts);
            let mut trials = Vec::with_capacity(rollouts);
            let mut seconds = 0.0;
            let mut dumped = Vec::new();
            for r in 0..rollouts {
                let t0 = Instant::now();
                let (outcome, traj) =
                    run_rollout(variant, env, critic, params, Some(&start), rollout_seed(master, e, r))?;
                seconds += t0.elapsed().as_secs_f64();
                infractions += outcome.infracted as usize;
                evidences.push(outcome.log_evidence);
                trials.push(outcome.trials);
                if e < dump_episodes {
                    dumped.extend(dump_rows(env, variant, e, r, &traj));
                }
            }
            Ok((infractions as f64 / rollouts as f64, evidences, trials, seconds, dumped))
        })
        .collect();
    let mut outcome = VariantOutcome {
        variant,
        n: params.n,
        k: params.k,
        episode_rates: Vec::with_capacity(episodes),
        log_evidences: Vec::with_capacity(episodes * rollouts),
        trials: Vec::with_capacity(episodes * rollouts),
        rollouts,
        seconds: 0.0,
    };
    let mut dump = Vec::new();
    for item in per_episode {
        let (rate, evidences, trials, seconds, rows) = item?;
        outcome.episode_rates.push(rate);
        outcome.log_evidences.extend(evidences);
        outcome.trials.extend(trials);
        outcome.seconds += seconds;
        dump.extend(rows);
    }
    Ok((outcome, dump))
}

/// The `(N, K)` reported for a variant in the method comparison.
fn variant_shape(cfg: &ExperimentConfig, variant: Variant) -> (usize, usize) {
    match variant {
        Variant::Prior => (1, 1),
        Variant::Rejection => (1, cfg.max_trials),
        Variant::Smc => (cfg.n, 1),
        Variant::SmcValueHeuristic => (cfg.n, cfg.value_samples.unwrap_or(cfg.k)),
        Variant::CriticSmc => (cfg.n, cfg.k),
        Variant::ModelFreeControl => (1, cfg.k),
    }
}

pub type ToyCritic = NeuralCritic<PursuitWorld>;

/// Trains a fresh critic or loads the configured checkpoint. `needed_by`
/// names the variants that require it, for error messages.
pub fn obtain_critic(
    cfg: &ExperimentConfig,
    env: &PursuitWorld,
    needed_by: &[Variant],
    progress: impl FnMut(&EvalPoint),
) -> anyhow::Result<(ToyCritic, Option<TrainingReport>)> {
    let names: Vec<&str> = needed_by.iter().map(|v| v.name()).collect();
    if cfg.critic == "train" {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[0xC217]));
        let init = NeuralCritic::new(env.clone(), DEFAULT_HIDDEN, cfg.training.hyper.critic_scale, &mut rng);
        let (critic, report) = train_critic(env, init, &cfg.training, cfg.seed, None, progress)?;
        if let Some(path) = &cfg.save_critic {
            Checkpoint::from_critic(&critic).save(path)?;
        }
        return Ok((critic, Some(report)));
    }
    let path = Path::new(&cfg.critic);
    if !path.exists() {
        bail!("critic checkpoint {} not found (required by variant(s): {})", path.display(), names.join(", "));
    }
    let critic = Checkpoint::load(path)
        .and_then(|c| c.into_critic(env.clone()))
        .with_context(|| format!("loading critic for variant(s) {}", names.join(", ")))?;
    Ok((critic, None))
}

/// Pairwise `P(rate_a > rate_b)` over a paired bootstrap of episodes.
pub fn ordering_confidence(a: &VariantOutcome, b: &VariantOutcome, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    bootstrap_prob_greater(&a.episode_rates, &b.episode_rates, BOOTSTRAP_RESAMPLES, &mut rng)
}

#[derive(Clone, Debug, Serialize)]
pub struct ToyBenchmark {
    pub outcomes: Vec<VariantOutcome>,
    /// `(a, b, P(rate_a > rate_b))` for consecutive variants.
    pub ordering: Vec<(String, String, f64)>,
    pub dump: Vec<TrajectoryRow>,
}

/// Runs every configured variant on the shared episodes.
pub fn toy_benchmark(cfg: &ExperimentConfig, critic: Option<&ToyCritic>) -> anyhow::Result<ToyBenchmark> {
    let env = PursuitWorld::new(cfg.pursuit.clone());
    let mut outcomes = Vec::new();
    let mut dump = Vec::new();
    for &variant in &cfg.variants {
        if variant.needs_critic() && critic.is_none() {
            bail!("variant {} needs a critic", variant.name());
        }
        let (n, k) = variant_shape(cfg, variant);
        let params = cfg.planner(n, if variant == Variant::Rejection { 1 } else { k }, env.horizon());
        let (outcome, rows) = evaluate_variant(
            &env,
            critic,
            variant,
            &params,
            cfg.episodes,
            cfg.rollouts_per_episode,
            cfg.seed,
            cfg.dump_episodes,
        )?;
        let outcome = VariantOutcome { k, ..outcome };
        outcomes.push(outcome);
        dump.extend(rows);
    }
    let ordering = outcomes
        .windows(2)
        .enumerate()
        .map(|(i, w)| {
            (w[0].label(), w[1].label(), ordering_confidence(&w[0], &w[1], derive_seed(cfg.seed, &[0xB007, i as u64])))
        })
        .collect();
    Ok(ToyBenchmark { outcomes, ordering, dump })
}

/// The `(variant, K, N)` grid, each cell on the same episodes.
pub fn ablation_grid(cfg: &ExperimentConfig, critic: &ToyCritic) -> anyhow::Result<Vec<VariantOutcome>> {
    let env = PursuitWorld::new(cfg.pursuit.clone());
    let mut cells = Vec::new();
    for &variant in &cfg.ablation.variants {
        if !matches!(variant, Variant::Smc | Variant::CriticSmc) {
            bail!("the ablation grid covers smc and critic_smc only, not {}", variant.name());
        }
        for &k in &cfg.ablation.k_values {
            for &n in &cfg.ablation.n_values {
                let params = cfg.planner(n, k, env.horizon());
                let (outcome, _) = evaluate_variant(
                    &env,
                    Some(critic),
                    variant,
                    &params,
                    cfg.episodes,
                    cfg.rollouts_per_episode,
                    cfg.seed,
                    0,
                )?;
                cells.push(outcome);
            }
        }
    }
    Ok(cells)
}

/// Model-free control for each configured `K`, plus the prior on the same
/// episodes.
pub fn model_free_study(cfg: &ExperimentConfig, critic: &ToyCritic) -> anyhow::Result<Vec<VariantOutcome>> {
    let env = PursuitWorld::new(cfg.pursuit.clone());
    let mut out = Vec::new();
    let prior = cfg.planner(1, 1, env.horizon());
    let (outcome, _) = evaluate_variant(
        &env,
        Some(critic),
        Variant::Prior,
        &prior,
        cfg.episodes,
        cfg.rollouts_per_episode,
        cfg.seed,
        0,
    )?;
    out.push(outcome);
    for &k in &cfg.model_free_k {
        let params = cfg.planner(1, k, env.horizon());
        let (outcome, _) = evaluate_variant(
            &env,
            Some(critic),
            Variant::ModelFreeControl,
            &params,
            cfg.episodes,
            cfg.rollouts_per_episode,
            cfg.seed,
            0,
        )?;
        out.push(outcome);
    }
    Ok(out)
}

/// Renders the ablation cells as rows of variant/K and columns of N.
pub fn ablation_table(cells: &[VariantOutcome]) -> String {
    let mut ns: Vec<usize> = cells.iter().map(|c| c.n).collect();
    ns.sort_unstable();
    ns.dedup();
    let mut out = format!("{:<12} {:>6}", "method", "K");
    for n in &ns {
        out += &format!(" {:>7}", format!("N={n}"));
    }
    out.push('\n');
    let mut keys: Vec<(Variant, usize)> = Vec::new();
    for c in cells {
        if !keys.contains(&(c.variant, c.k)) {
            keys.push((c.variant, c.k));
        }
    }
    for (variant, k) in keys {
        out += &format!("{:<12} {:>6}", variant.name(), k);
        for n in &ns {
            match cells.iter().find(|c| c.variant == variant && c.k == k && c.n == *n) {
                Some(c) => out += &format!(" {:>7.3}", c.infraction_rate()),
                None => out += &format!(" {:>7}", "-"),
            }
        }
        out.push('\n');
    }
    out
}
