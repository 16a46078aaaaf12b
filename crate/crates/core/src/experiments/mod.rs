//! Experiment drivers behind the command-line tool: configuration, result
//! rows, CSV/JSON output and the individual studies.

use std::fs::{self, OpenOptions};
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};

use crate::critic::TargetKind;
use crate::env::{LgssmConfig, PursuitConfig};
use crate::smc::ResamplingScheme;
use crate::train::TrainingConfig;

pub mod lgssm;
pub mod rollout;
pub mod toy;
pub mod unbiased;

pub use rollout::{
    model_free_control, prior_rollout, rejection_sample, run_rollout, PlannerParams, RolloutOutcome, Trajectory,
    Variant,
};

pub const SCHEMA_VERSION: u32 = 1;
pub const OUT_DIR_ENV: &str = "CRITICSMC_OUT_DIR";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblationConfig {
    pub n_values: Vec<usize>,
    pub k_values: Vec<usize>,
    pub variants: Vec<Variant>,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self {
            n_values: vec![1, 5, 10, 20, 50],
            k_values: vec![1, 1024],
            variants: vec![Variant::Smc, Variant::CriticSmc],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LgssmStudyConfig {
    pub world: LgssmConfig,
    pub n_values: Vec<usize>,
    pub k_values: Vec<usize>,
    pub repetitions: usize,
    pub oracle_particles: usize,
    pub oracle_repetitions: usize,
}

impl Default for LgssmStudyConfig {
    fn default() -> Self {
        Self {
            world: LgssmConfig { transition_work: 2_000, ..LgssmConfig::default() },
            n_values: vec![1, 5, 10],
            k_values: vec![1, 100, 1000],
            repetitions: 100,
            oracle_particles: 1_000_000,
            oracle_repetitions: 50,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct UnbiasednessConfig {
    pub runs: usize,
    pub n: usize,
    pub value_samples: usize,
    /// Half-width of the random critic tables.
    pub critic_range: f64,
    /// Constant added to the adversarial critic.
    pub adversarial_offset: f64,
    pub z_threshold: f64,
}

impl Default for UnbiasednessConfig {
    fn default() -> Self {
        Self { runs: 10_000, n: 4, value_samples: 4, critic_range: 2.0, adversarial_offset: 5.0, z_threshold: 3.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub experiment: String,
    pub seed: u64,
    pub episodes: usize,
    pub rollouts_per_episode: usize,
    pub variants: Vec<Variant>,
    pub n: usize,
    pub k: usize,
    /// Prior samples per soft value estimate; defaults to `k`.
    pub value_samples: Option<usize>,
    pub max_trials: usize,
    /// Overrides the environment horizon.
    pub horizon: Option<usize>,
    pub scheme: ResamplingScheme,
    /// `"train"` or the path of a critic checkpoint.
    pub critic: String,
    /// Overrides `training.hyper.target`.
    pub critic_target: Option<TargetKind>,
    /// Where a freshly trained critic is saved.
    pub save_critic: Option<PathBuf>,
    pub out: Option<PathBuf>,
    /// Episodes whose trajectories are written to a dump file.
    pub dump_episodes: usize,
    pub pursuit: PursuitConfig,
    pub training: TrainingConfig,
    pub ablation: AblationConfig,
    pub lgssm: LgssmStudyConfig,
    pub unbiasedness: UnbiasednessConfig,
    /// Candidate counts for the model-free study.
    pub model_free_k: Vec<usize>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            experiment: "experiment".into(),
            seed: 0,
            episodes: 500,
            rollouts_per_episode: 6,
            variants: vec![Variant::Prior, Variant::Rejection, Variant::SmcValueHeuristic, Variant::CriticSmc],
            n: 50,
            k: 1024,
            value_samples: None,
            max_trials: 1000,
            horizon: None,
            scheme: ResamplingScheme::Systematic,
            critic: "train".into(),
            critic_target: None,
            save_critic: None,
            out: None,
            dump_episodes: 0,
            pursuit: PursuitConfig::default(),
            training: TrainingConfig::default(),
            ablation: AblationConfig::default(),
            lgssm: LgssmStudyConfig::default(),
            unbiasedness: UnbiasednessConfig::default(),
            model_free_k: vec![1, 1024],
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> anyhow::Result<Self> {
        toml::from_str(text).context("invalid experiment config")
    }

    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
        Self::from_toml(&text)
    }

    /// Applies cross-field defaults and checks ranges.
    pub fn resolve(mut self) -> anyhow::Result<Self> {
        if let Some(kind) = self.critic_target {
            self.training.hyper.target = kind;
        }
        self.critic_target = Some(self.training.hyper.target);
        if self.value_samples.is_none() {
            self.value_samples = Some(self.k);
        }
        if self.n == 0 || self.k == 0 || self.value_samples == Some(0) {
            bail!("n, k and value_samples must be at least 1");
        }
        if self.episodes == 0 || self.rollouts_per_episode == 0 {
            bail!("episodes and rollouts_per_episode must be at least 1");
        }
        if self.max_trials == 0 {
            bail!("max_trials must be at least 1");
        }
        if self.horizon == Some(0) {
            bail!("horizon must be at least 1");
        }
        if self.pursuit.n_adversaries > crate::env::pursuit::MAX_ADVERSARIES {
            bail!("at most {} adversaries are supported", crate::env::pursuit::MAX_ADVERSARIES);
        }
        self.training.schedule.validate()?;
        Ok(self)
    }

    pub fn planner(&self, n: usize, k: usize, horizon: usize) -> PlannerParams {
        PlannerParams {
            n,
            k,
            value_samples: self.value_samples.unwrap_or(k),
            max_trials: self.max_trials,
            horizon: self.horizon.unwrap_or(horizon),
            scheme: self.scheme,
        }
    }

    /// `out`, else `$CRITICSMC_OUT_DIR`, else `results`.
    pub fn out_dir(&self) -> PathBuf {
        self.out
            .clone()
            .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("results"))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }
}

/// One line of a results table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub schema_version: u32,
    pub experiment: String,
    pub variant: String,
    pub n: usize,
    pub k: usize,
    pub seed: u64,
    pub episodes: usize,
    pub rollouts: usize,
    pub infraction_rate: f64,
    pub mean_log_evidence: f64,
    pub evidence_std_error: f64,
    /// Mean `|log Ẑ - log Z_oracle|`, when an oracle exists.
    pub mean_abs_nll_error: Option<f64>,
    /// Mean trials per rollout for rejection sampling.
    pub mean_trials: Option<f64>,
    /// Mean inference seconds per rollout.
    pub wall_clock_seconds: f64,
    /// The resolved configuration as JSON.
    pub config: String,
}

impl ResultRow {
    /// Equality on every field except the wall clock.
    pub fn same_numbers(&self, other: &Self) -> bool {
        let strip = |r: &Self| Self { wall_clock_seconds: 0.0, ..r.clone() };
        let (a, b) = (strip(self), strip(other));
        serde_json::to_string(&a).ok() == serde_json::to_string(&b).ok()
    }
}

pub const COLUMN_DOCS: &[(&str, &str)] = &[
    ("schema_version", "results schema version"),
    ("experiment", "experiment id"),
    ("variant", "sampler variant"),
    ("n", "particles"),
    ("k", "putative actions per particle (or value samples)"),
    ("seed", "master seed"),
    ("episodes", "initial conditions"),
    ("rollouts", "rollouts per initial condition"),
    ("infraction_rate", "fraction of scored trajectories with at least one constraint violation, in [0, 1]"),
    ("mean_log_evidence", "mean log marginal-likelihood estimate, nats"),
    ("evidence_std_error", "standard error of mean_log_evidence, nats"),
    ("mean_abs_nll_error", "mean absolute log-evidence error against the oracle, nats"),
    ("mean_trials", "mean rejection-sampling trials per rollout"),
    ("wall_clock_seconds", "mean inference wall clock per rollout, seconds"),
    ("config", "resolved configuration, JSON"),
];

/// Appends rows to `<dir>/<name>.csv`, writing the header only for a new
/// file and refusing to mix schemas.
pub fn append_csv(dir: &Path, name: &str, rows: &[ResultRow]) -> anyhow::Result<PathBuf> {
    fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    let path = dir.join(format!("{name}.csv"));
    let header: Vec<&str> = COLUMN_DOCS.iter().map(|(c, _)| *c).collect();
    let exists = path.exists() && fs::metadata(&path)?.len() > 0;
    if exists {
        let mut first = String::new();
        BufReader::new(fs::File::open(&path)?).read_line(&mut first)?;
        if first.trim_end() != header.join(",") {
            bail!("{} has a different schema; refusing to append", path.display());
        }
    }
    let file = OpenOptions::new().create(true).append(true).open(&path)?;
    let mut writer = csv::WriterBuilder::new().has_headers(!exists).from_writer(file);
    for row in rows {
        writer.serialize(row)?;
    }
    writer.flush()?;
    Ok(path)
}

/// Writes `<dir>/<name>.json` with the resolved config, column semantics and
/// any experiment-specific analysis.
pub fn write_sidecar(
    dir: &Path,
    name: &str,
    config: &ExperimentConfig,
    analysis: serde_json::Value,
) -> anyhow::Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let path = dir.join(format!("{name}.json"));
    let columns: serde_json::Map<String, serde_json::Value> =
        COLUMN_DOCS.iter().map(|(c, d)| (c.to_string(), serde_json::Value::from(*d))).collect();
    let doc = serde_json::json!({
        "schema_version": SCHEMA_VERSION,
        "config": config,
        "columns": columns,
        "scoring": "multi-particle planners are scored on one final particle drawn in proportion to its final weight",
        "analysis": analysis,
    });
    fs::write(&path, serde_json::to_string_pretty(&doc)?)?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(ExperimentConfig::from_toml("experiment = \"a\"\nbogus = 1\n").is_err());
        assert!(ExperimentConfig::from_toml("[pursuit]\nwobble = 2\n").is_err());
        let cfg = ExperimentConfig::from_toml("experiment = \"a\"\nn = 5\n[pursuit]\nn_adversaries = 4\n").unwrap();
        assert_eq!(cfg.n, 5);
        assert_eq!(cfg.pursuit.n_adversaries, 4);
    }

    #[test]
    fn resolve_fills_value_samples_and_target() {
        let cfg = ExperimentConfig { k: 7, critic_target: Some(TargetKind::Hard), ..Default::default() };
        let cfg = cfg.resolve().unwrap();
        assert_eq!(cfg.value_samples, Some(7));
        assert_eq!(cfg.training.hyper.target, TargetKind::Hard);
        assert!(ExperimentConfig { n: 0, ..Default::default() }.resolve().is_err());
    }

    #[test]
    fn csv_appends_under_one_header() {
        let dir = tempfile::tempdir().unwrap();
        let row = ResultRow {
            schema_version: SCHEMA_VERSION,
            experiment: "x".into(),
            variant: "prior".into(),
            n: 1,
            k: 1,
            seed: 3,
            episodes: 2,
            rollouts: 1,
            infraction_rate: 0.5,
            mean_log_evidence: -1.0,
            evidence_std_error: 0.1,
            mean_abs_nll_error: None,
            mean_trials: Some(1.0),
            wall_clock_seconds: 0.01,
            config: "{\"a\":1}".into(),
        };
        append_csv(dir.path(), "x", std::slice::from_ref(&row)).unwrap();
        let path = append_csv(dir.path(), "x", std::slice::from_ref(&row)).unwrap();
        let mut reader = csv::Reader::from_path(&path).unwrap();
        let rows: Vec<ResultRow> = reader.deserialize().map(|r| r.unwrap()).collect();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[1], row);
        fs::write(&path, "other,header\n").unwrap();
        assert!(append_csv(dir.path(), "x", &[row]).is_err());
    }
}
