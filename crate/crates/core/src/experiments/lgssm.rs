//! Marginal-likelihood study on the constrained linear-Gaussian world.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ExperimentConfig, ResultRow, SCHEMA_VERSION};
use crate::critic::AnalyticLgssmCritic;
use crate::env::lgssm::{LGSSM_POLICY_GAIN, LGSSM_TOLERANCE};
use crate::env::{Environment, LgssmConfig, LgssmWorld};
use crate::math::{derive_seed, mean, paired_permutation_p_less, paired_permutation_p_two_sided, std_error};
use crate::smc::{run_critic_smc, run_smc, SmcConfig};

const ORACLE_STREAM: u64 = 0x0AC1;
const REP_STREAM: u64 = 0x12E9;
pub const PERMUTATIONS: usize = 10_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub values: Vec<f64>,
}

/// Large-population bootstrap SMC estimate of `log p(O_{1:T})`: the mean and
/// standard error over independent repetitions.
pub fn lgssm_oracle(horizon: usize, particles: usize, repetitions: usize, seed: u64) -> crate::Result<OracleEstimate> {
    let world = LgssmWorld::with_horizon(horizon);
    let cfg = SmcConfig::new(particles);
    let values = (0..repetitions)
        .map(|r| run_smc(&world, &cfg, None, derive_seed(seed, &[ORACLE_STREAM, r as u64])).map(|run| run.log_evidence))
        .collect::<crate::Result<Vec<f64>>>()?;
    Ok(OracleEstimate { mean: mean(&values), std_error: std_error(&values), values })
}

/// `log p(O_1)` for `T = 1` by composite Simpson integration of the density
/// of `s_1 + a_1` over the tolerance band, plus the penalized remainder.
pub fn lgssm_t1_log_evidence_quadrature(intervals: usize) -> f64 {
    let gain = 1.0 + LGSSM_POLICY_GAIN;
    let var = gain * gain + 1.0;
    let density = |x: f64| (-x * x / (2.0 * var)).exp() / (2.0 * std::f64::consts::PI * var).sqrt();
    let n = intervals + intervals % 2;
    let (a, b) = (-LGSSM_TOLERANCE, LGSSM_TOLERANCE);
    let h = (b - a) / n as f64;
    let mut sum = density(a) + density(b);
    for i in 1..n {
        sum += density(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    let inside = sum * h / 3.0;
    let penalty = crate::env::lgssm::LGSSM_PENALTY;
    (inside + (1.0 - inside) * (-penalty).exp()).ln()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LgssmCell {
    pub sampler: String,
    pub n: usize,
    pub k: usize,
    pub log_evidences: Vec<f64>,
    pub abs_errors: Vec<f64>,
    /// Wall clock of each repetition, seconds.
    pub seconds: Vec<f64>,
}

impl LgssmCell {
    pub fn mean_abs_error(&self) -> f64 {
        mean(&self.abs_errors)
    }

    pub fn mean_seconds(&self) -> f64 {
        mean(&self.seconds)
    }

    pub fn row(&self, experiment: &str, seed: u64, config: &str) -> ResultRow {
        ResultRow {
            schema_version: SCHEMA_VERSION,
            experiment: experiment.into(),
            variant: self.sampler.clone(),
            n: self.n,
            k: self.k,
            seed,
            episodes: self.log_evidences.len(),
            rollouts: 1,
            infraction_rate: 0.0,
            mean_log_evidence: mean(&self.log_evidences),
            evidence_std_error: std_error(&self.log_evidences),
            mean_abs_nll_error: Some(self.mean_abs_error()),
            mean_trials: None,
            wall_clock_seconds: self.mean_seconds().max(f64::MIN_POSITIVE),
            config: config.into(),
        }
    }
}

/// Repeats one sampler cell; repetition `r` uses the same seed in every cell
/// so that cells are paired.
pub fn lgssm_cell(
    world: &LgssmConfig,
    critic_smc: bool,
    n: usize,
    k: usize,
    repetitions: usize,
    oracle: f64,
    seed: u64,
) -> crate::Result<LgssmCell> {
    let env = LgssmWorld::new(world.clone());
    let critic = AnalyticLgssmCritic::default();
    let cfg = SmcConfig::new(n);
    let mut cell = LgssmCell {
        sampler: if critic_smc { "critic_smc" } else { "smc" }.into(),
        n,
        k: if critic_smc { k } else { 1 },
        log_evidences: Vec::with_capacity(repetitions),
        abs_errors: Vec::with_capacity(repetitions),
        seconds: Vec::with_capacity(repetitions),
    };
    for r in 0..repetitions {
        let run_seed = derive_seed(seed, &[REP_STREAM, r as u64]);
        let t0 = Instant::now();
        let run = if critic_smc {
            run_critic_smc(&env, &critic, &cfg, k, None, run_seed)?
        } else {
            run_smc(&env, &cfg, None, run_seed)?
        };
        cell.seconds.push(t0.elapsed().as_secs_f64());
        cell.log_evidences.push(run.log_evidence);
        cell.abs_errors.push((run.log_evidence - oracle).abs());
    }
    Ok(cell)
}

#[derive(Clone, Debug, Serialize)]
pub struct LgssmStudy {
    pub oracle: OracleEstimate,
    /// An independent second oracle run, for self-consistency.
    pub oracle_check: OracleEstimate,
    pub cells: Vec<LgssmCell>,
    /// One-sided p-value that CriticSMC at the largest `N`, `K` has smaller
    /// error than SMC at the same `N`.
    pub p_critic_better: Option<f64>,
    /// Two-sided p-value comparing CriticSMC with `K = 1` and SMC at `N = 1`.
    pub p_k1_vs_smc_at_n1: Option<f64>,
}

pub fn find_cell<'a>(cells: &'a [LgssmCell], sampler: &str, n: usize, k: usize) -> Option<&'a LgssmCell> {
    cells.iter().find(|c| c.sampler == sampler && c.n == n && c.k == k)
}

pub fn lgssm_study(cfg: &ExperimentConfig) -> crate::Result<LgssmStudy> {
    let study = &cfg.lgssm;
    let horizon = cfg.horizon.unwrap_or(study.world.horizon);
    let world = LgssmConfig { horizon, ..study.world.clone() };
    let oracle = lgssm_oracle(horizon, study.oracle_particles, study.oracle_repetitions, derive_seed(cfg.seed, &[1]))?;
    let oracle_check =
        lgssm_oracle(horizon, study.oracle_particles, study.oracle_repetitions, derive_seed(cfg.seed, &[2]))?;
    let mut cells = Vec::new();
    for &n in &study.n_values {
        cells.push(lgssm_cell(&world, false, n, 1, study.repetitions, oracle.mean, cfg.seed)?);
        for &k in &study.k_values {
            cells.push(lgssm_cell(&world, true, n, k, study.repetitions, oracle.mean, cfg.seed)?);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[3]));
    let n_max = study.n_values.iter().copied().max();
    let k_max = study.k_values.iter().copied().max();
    let p_critic_better = match (n_max, k_max) {
        (Some(n), Some(k)) => match (find_cell(&cells, "critic_smc", n, k), find_cell(&cells, "smc", n, 1)) {
            (Some(c), Some(s)) => Some(paired_permutation_p_less(&c.abs_errors, &s.abs_errors, PERMUTATIONS, &mut rng)),
            _ => None,
        },
        _ => None,
    };
    let p_k1_vs_smc_at_n1 = match (find_cell(&cells, "critic_smc", 1, 1), find_cell(&cells, "smc", 1, 1)) {
        (Some(c), Some(s)) => {
            Some(paired_permutation_p_two_sided(&c.abs_errors, &s.abs_errors, PERMUTATIONS, &mut rng))
        }
        _ => None,
    };
    Ok(LgssmStudy { oracle, oracle_check, cells, p_critic_better, p_k1_vs_smc_at_n1 })
}

/// Prior mass of the constraint band after one step from `s`, by Monte
/// Carlo; used to sanity-check the quadrature in tests and reports.
pub fn lgssm_one_step_mass(state: f64, draws: usize, seed: u64) -> f64 {
    let env = LgssmWorld::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let actions = env.prior_sample(&state, &mut rng, draws);
    actions.iter().filter(|&&a| env.constraint_ok(&(state + a))).count() as f64 / draws as f64
}
