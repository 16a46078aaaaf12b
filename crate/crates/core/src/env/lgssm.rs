//! Linear-Gaussian state-space world with a hard box constraint on the state.
//!
//! `f(s, a) = s + a`, `s_1 ~ N(0, 1)`, `a ~ N(0.5 s, 1)` and the constraint is
//! `|s'| <= 1e-2` with a penalty of `1e4`.

use std::hint::black_box;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::Environment;

pub const LGSSM_TOLERANCE: f64 = 1e-2;
pub const LGSSM_PENALTY: f64 = 10_000.0;
pub const LGSSM_HORIZON: usize = 10;
pub const LGSSM_POLICY_GAIN: f64 = 0.5;

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct LgssmConfig {
    pub horizon: usize,
    /// Iterations of a dummy numeric kernel burned inside every transition,
    /// standing in for an expensive simulator. Does not affect the result.
    pub transition_work: u32,
}

impl Default for LgssmConfig {
    fn default() -> Self {
        Self { horizon: LGSSM_HORIZON, transition_work: 0 }
    }
}

#[derive(Clone, Debug, Default)]
pub struct LgssmWorld {
    pub config: LgssmConfig,
}

impl LgssmWorld {
    pub fn new(config: LgssmConfig) -> Self {
        Self { config }
    }

    pub fn with_horizon(horizon: usize) -> Self {
        Self::new(LgssmConfig { horizon, ..LgssmConfig::default() })
    }
}

fn burn(work: u32, seed: f64) {
    let mut x = seed;
    for _ in 0..work {
        x = (x * 0.999_999 + 0.5).sin();
    }
    black_box(x);
}

impl Environment for LgssmWorld {
    type State = f64;
    type Action = f64;

    fn sample_initial<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        StandardNormal.sample(rng)
    }

    fn transition(&self, state: &f64, action: &f64) -> f64 {
        if self.config.transition_work > 0 {
            burn(self.config.transition_work, *state);
        }
        state + action
    }

    fn prior_sample_into<R: Rng + ?Sized>(&self, state: &f64, rng: &mut R, count: usize, out: &mut Vec<f64>) {
        let mean = LGSSM_POLICY_GAIN * state;
        out.extend((0..count).map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            mean + z
        }));
    }

    fn constraint_ok(&self, state: &f64) -> bool {
        state.abs() <= LGSSM_TOLERANCE
    }

    fn penalty(&self) -> f64 {
        LGSSM_PENALTY
    }

    fn horizon(&self) -> usize {
        self.config.horizon
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reward_takes_exactly_two_values() {
        let env = LgssmWorld::default();
        for &(s, a) in &[(0.0, 0.0), (0.0, 0.0099), (0.3, -0.3), (1.0, 2.0), (0.0, -0.02)] {
            let r = env.reward(&s, &a, &env.transition(&s, &a));
            assert!(r == 0.0 || r == -10_000.0);
            assert_eq!(r == 0.0, (s + a).abs() <= 1e-2);
        }
    }

    #[test]
    fn transition_work_does_not_change_dynamics() {
        let cheap = LgssmWorld::default();
        let costly = LgssmWorld::new(LgssmConfig { transition_work: 100, ..Default::default() });
        assert_eq!(cheap.transition(&0.25, &-0.5), costly.transition(&0.25, &-0.5));
    }
}
