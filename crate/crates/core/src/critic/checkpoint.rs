//! JSON checkpoints for [`NeuralCritic`]s.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::mlp::{MlpCritic, MlpShape};
use super::neural::NeuralCritic;
use crate::env::Featurize;

pub const CHECKPOINT_FORMAT: &str = "critic-smc/mlp";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub shape: MlpShape,
    /// Feature normalization constants `[state, action]`.
    pub feature_scales: [f64; 2],
    pub reward_scale: f64,
    pub params: Vec<f64>,
}

impl Checkpoint {
    pub fn from_critic<E: Featurize + Clone>(critic: &NeuralCritic<E>) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            shape: critic.mlp().shape,
            feature_scales: critic.env.feature_scales(),
            reward_scale: critic.reward_scale,
            params: critic.mlp().params.clone(),
        }
    }

    pub fn save(&self, path: &Path) -> anyhow::Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir)?;
        }
        fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text =
            fs::read_to_string(path).map_err(|e| anyhow::anyhow!("cannot read checkpoint {}: {e}", path.display()))?;
        let checkpoint: Self = serde_json::from_str(&text)?;
        if checkpoint.format != CHECKPOINT_FORMAT || checkpoint.version != CHECKPOINT_VERSION {
            anyhow::bail!(
                "unsupported checkpoint {} v{} (expected {CHECKPOINT_FORMAT} v{CHECKPOINT_VERSION})",
                checkpoint.format,
                checkpoint.version
            );
        }
        Ok(checkpoint)
    }

    /// Rebuilds the critic for `env`, rejecting any shape or normalization
    /// mismatch.
    pub fn into_critic<E: Featurize + Clone>(self, env: E) -> anyhow::Result<NeuralCritic<E>> {
        if self.feature_scales != env.feature_scales() {
            anyhow::bail!(
                "checkpoint feature scales {:?} do not match the environment's {:?}",
                self.feature_scales,
                env.feature_scales()
            );
        }
        let mlp = MlpCritic::from_params(self.shape, self.params)?;
        Ok(NeuralCritic::from_mlp(env, mlp, self.reward_scale)?)
    }
}
