//! Unbiasedness checks of every sampler against exact enumeration on a small
//! discrete MDP.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::UnbiasednessConfig;
use crate::critic::{soft_q_exact, Critic, TabularCritic};
use crate::env::{DiscreteMdp, DiscreteState};
use crate::math::{derive_seed, mean, std_error};
use crate::smc::{run_critic_smc, run_smc, run_smc_value_heuristic, Fault, ResamplingScheme, SmcConfig, SmcRun};

/// `p(O_{1:T})` by summing over every initial state and action sequence.
pub fn enumerate_evidence(mdp: &DiscreteMdp) -> f64 {
    fn go(mdp: &DiscreteMdp, s: usize, depth: usize) -> f64 {
        if depth == mdp.horizon {
            return 1.0;
        }
        (0..mdp.n_actions())
            .map(|a| {
                let p = mdp.policy[s][a];
                if p == 0.0 {
                    0.0
                } else {
                    p * mdp.reward_of(s, a).exp() * go(mdp, mdp.next[s][a], depth + 1)
                }
            })
            .sum()
    }
    (0..mdp.n_states()).map(|s| mdp.initial[s] * go(mdp, s, 0)).sum()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplerKind {
    Smc,
    ValueHeuristic,
    CriticSmc { k: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CriticKind {
    Zero,
    Exact,
    /// Uniform random table.
    Random,
    /// Uniform random table plus a large constant.
    Adversarial,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UnbiasednessCase {
    pub name: String,
    pub sampler: SamplerKind,
    pub critic: CriticKind,
    pub scheme: ResamplingScheme,
    pub fault: Fault,
    /// Whether the case must pass (negative controls must fail).
    pub expect_pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaseResult {
    pub case: UnbiasednessCase,
    pub exact: f64,
    pub mean: f64,
    pub std_error: f64,
    pub z: f64,
    pub passed: bool,
}

impl CaseResult {
    /// Whether the outcome matches the expectation of the case.
    pub fn as_expected(&self) -> bool {
        self.passed == self.case.expect_pass
    }
}

pub fn default_cases() -> Vec<UnbiasednessCase> {
    let case = |name: &str, sampler, critic, scheme, fault, expect_pass| UnbiasednessCase {
        name: name.into(),
        sampler,
        critic,
        scheme,
        fault,
        expect_pass,
    };
    use CriticKind::*;
    use ResamplingScheme::*;
    use SamplerKind::*;
    vec![
        case("smc", Smc, Zero, Systematic, Fault::None, true),
        case("smc/multinomial", Smc, Zero, Multinomial, Fault::None, true),
        case("value_heuristic/exact", ValueHeuristic, Exact, Systematic, Fault::None, true),
        case("value_heuristic/random", ValueHeuristic, Random, Systematic, Fault::None, true),
        case("value_heuristic/adversarial", ValueHeuristic, Adversarial, Systematic, Fault::None, true),
        case("critic_smc/k1/zero", CriticSmc { k: 1 }, Zero, Systematic, Fault::None, true),
        case("critic_smc/k1/random", CriticSmc { k: 1 }, Random, Systematic, Fault::None, true),
        case("critic_smc/k4/exact", CriticSmc { k: 4 }, Exact, Systematic, Fault::None, true),
        case("critic_smc/k4/random", CriticSmc { k: 4 }, Random, Multinomial, Fault::None, true),
        case("critic_smc/k4/adversarial", CriticSmc { k: 4 }, Adversarial, Systematic, Fault::None, true),
        case(
            "critic_smc/k4/adversarial/broken-weights",
            CriticSmc { k: 4 },
            Adversarial,
            Systematic,
            Fault::KeepCriticInPostWeight,
            false,
        ),
    ]
}

fn build_critic(kind: CriticKind, mdp: &DiscreteMdp, cfg: &UnbiasednessConfig, seed: u64) -> TabularCritic {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match kind {
        CriticKind::Zero => TabularCritic::zeros(mdp),
        CriticKind::Exact => soft_q_exact(mdp, 1.0),
        CriticKind::Random => TabularCritic::random(mdp, -cfg.critic_range, cfg.critic_range, &mut rng),
        CriticKind::Adversarial => {
            let mut c = TabularCritic::random(mdp, -cfg.critic_range, cfg.critic_range, &mut rng);
            c.q.iter_mut().for_each(|q| *q += cfg.adversarial_offset);
            c
        }
    }
}

fn run_case_once<C: Critic<DiscreteState, usize>>(
    mdp: &DiscreteMdp,
    critic: &C,
    case: &UnbiasednessCase,
    cfg: &UnbiasednessConfig,
    seed: u64,
) -> crate::Result<SmcRun<DiscreteState, usize>> {
    let smc = SmcConfig::new(cfg.n).with_scheme(case.scheme).with_fault(case.fault);
    match case.sampler {
        SamplerKind::Smc => run_smc(mdp, &smc, None, seed),
        SamplerKind::ValueHeuristic => run_smc_value_heuristic(mdp, critic, &smc, cfg.value_samples, None, seed),
        SamplerKind::CriticSmc { k } => run_critic_smc(mdp, critic, &smc, k, None, seed),
    }
}

/// Mean of `exp(log Ẑ)` over `cfg.runs` runs against the enumerated value.
pub fn run_case(
    mdp: &DiscreteMdp,
    case: &UnbiasednessCase,
    cfg: &UnbiasednessConfig,
    seed: u64,
) -> crate::Result<CaseResult> {
    let exact = enumerate_evidence(mdp);
    let critic = build_critic(case.critic, mdp, cfg, derive_seed(seed, &[0xC1]));
    let mut estimates = Vec::with_capacity(cfg.runs);
    for r in 0..cfg.runs {
        let run = run_case_once(mdp, &critic, case, cfg, derive_seed(seed, &[0x5A, r as u64]))?;
        estimates.push(run.log_evidence.exp());
    }
    let m = mean(&estimates);
    let se = std_error(&estimates);
    let z = if se > 0.0 {
        (m - exact) / se
    } else if (m - exact).abs() <= 1e-12 * exact.abs() {
        0.0
    } else {
        f64::INFINITY
    };
    Ok(CaseResult { case: case.clone(), exact, mean: m, std_error: se, z, passed: z.abs() < cfg.z_threshold })
}

pub fn unbiasedness_suite(
    mdp: &DiscreteMdp,
    cases: &[UnbiasednessCase],
    cfg: &UnbiasednessConfig,
    seed: u64,
) -> crate::Result<Vec<CaseResult>> {
    cases.iter().enumerate().map(|(i, case)| run_case(mdp, case, cfg, derive_seed(seed, &[i as u64]))).collect()
}
