use serde::{Deserialize, Serialize};

use super::Critic;

/// Closed-form critic for the linear-Gaussian world:
/// `Q(s, a) = -slope * |s + a|`, maximal (zero) exactly at `a = -s`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnalyticLgssmCritic {
    pub slope: f64,
}

impl Default for AnalyticLgssmCritic {
    fn default() -> Self {
        Self { slope: 1000.0 }
    }
}

impl Critic<f64, f64> for AnalyticLgssmCritic {
    fn evaluate_into(&self, state: &f64, actions: &[f64], out: &mut Vec<f64>) {
        out.extend(actions.iter().map(|a| -self.slope * (state + a).abs()));
    }
}
