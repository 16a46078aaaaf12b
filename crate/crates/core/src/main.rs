use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use serde_json::json;

use critic_smc::critic::{Checkpoint, TargetKind};
use critic_smc::env::{DiscreteMdp, PursuitWorld};
use critic_smc::experiments::lgssm::lgssm_study;
use critic_smc::experiments::toy::{ablation_grid, ablation_table, model_free_study, obtain_critic, toy_benchmark};
use critic_smc::experiments::unbiased::{default_cases, unbiasedness_suite};
use critic_smc::experiments::{append_csv, write_sidecar, ExperimentConfig, ResultRow, Variant};

#[derive(Parser)]
#[command(name = "critic-smc", version, about = "SMC planning with soft-Q critics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Prior, rejection, value-heuristic SMC and CriticSMC on the pursuit world.
    ToyBenchmark(Common),
    /// Particles x putative particles grid for SMC and CriticSMC.
    Ablation(Common),
    /// Log-evidence error and wall clock on the linear-Gaussian world.
    Lgssm(Common),
    /// Single-particle live control with putative actions.
    ModelFree(Common),
    /// Evidence unbiasedness against exact enumeration.
    Unbiasedness(Common),
    /// Train a pursuit critic and save a checkpoint.
    TrainCritic(Common),
}

#[derive(Args, Clone)]
struct Common {
    /// TOML experiment config.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (default: $CRITICSMC_OUT_DIR, else ./results).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads; 1 gives single-worker execution.
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    episodes: Option<usize>,
    #[arg(long)]
    rollouts: Option<usize>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    value_samples: Option<usize>,
    #[arg(long)]
    max_trials: Option<usize>,
    #[arg(long)]
    horizon: Option<usize>,
    /// "train" or a checkpoint path.
    #[arg(long)]
    critic: Option<String>,
    #[arg(long, value_parser = parse_target)]
    critic_target: Option<TargetKind>,
    /// Save the trained critic here.
    #[arg(long)]
    save_critic: Option<PathBuf>,
    #[arg(long)]
    total_env_steps: Option<usize>,
    /// Variants for the toy benchmark, comma separated.
    #[arg(long, value_delimiter = ',', value_parser = parse_variant)]
    variants: Option<Vec<Variant>>,
    #[arg(long)]
    dump_episodes: Option<usize>,
    #[arg(long)]
    runs: Option<usize>,
}

fn parse_target(s: &str) -> Result<TargetKind, String> {
    match s {
        "soft" => Ok(TargetKind::Soft),
        "hard" => Ok(TargetKind::Hard),
        _ => Err(format!("unknown critic target {s:?} (soft|hard)")),
    }
}

fn parse_variant(s: &str) -> Result<Variant, String> {
    serde_json::from_value(json!(s)).map_err(|_| format!("unknown variant {s:?}"))
}

impl Common {
    fn resolve(&self, experiment: &str) -> anyhow::Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig { experiment: experiment.into(), ..ExperimentConfig::default() },
        };
        if cfg.experiment == ExperimentConfig::default().experiment {
            cfg.experiment = experiment.into();
        }
        macro_rules! set {
            ($field:ident, $value:expr) => {
                if let Some(v) = $value.clone() {
                    cfg.$field = v;
                }
            };
        }
        set!(seed, self.seed);
        set!(episodes, self.episodes);
        set!(rollouts_per_episode, self.rollouts);
        set!(n, self.n);
        set!(k, self.k);
        set!(max_trials, self.max_trials);
        set!(critic, self.critic);
        set!(variants, self.variants);
        set!(dump_episodes, self.dump_episodes);
        if self.value_samples.is_some() {
            cfg.value_samples = self.value_samples;
        }
        if self.horizon.is_some() {
            cfg.horizon = self.horizon;
        }
        if self.critic_target.is_some() {
            cfg.critic_target = self.critic_target;
        }
        if self.save_critic.is_some() {
            cfg.save_critic = self.save_critic.clone();
        }
        if self.out.is_some() {
            cfg.out = self.out.clone();
        }
        if let Some(steps) = self.total_env_steps {
            cfg.training.schedule.total_env_steps = steps;
            cfg.training.schedule.warmup_steps = cfg.training.schedule.warmup_steps.min(steps);
        }
        if let Some(runs) = self.runs {
            cfg.unbiasedness.runs = runs;
            cfg.lgssm.repetitions = runs;
        }
        cfg.resolve()
    }
}

fn emit(cfg: &ExperimentConfig, rows: &[ResultRow], analysis: serde_json::Value) -> anyhow::Result<()> {
    let dir = cfg.out_dir();
    let csv = append_csv(&dir, &cfg.experiment, rows)?;
    let sidecar = write_sidecar(&dir, &cfg.experiment, cfg, analysis)?;
    eprintln!("wrote {} and {}", csv.display(), sidecar.display());
    Ok(())
}

fn print_rows(rows: &[ResultRow]) {
    println!(
        "{:<22} {:>5} {:>6} {:>10} {:>14} {:>12}",
        "variant", "N", "K", "infraction", "log-evidence", "sec/rollout"
    );
    for r in rows {
        println!(
            "{:<22} {:>5} {:>6} {:>10.4} {:>14.3} {:>12.5}",
            r.variant, r.n, r.k, r.infraction_rate, r.mean_log_evidence, r.wall_clock_seconds
        );
    }
}

fn progress(point: &critic_smc::train::EvalPoint) {
    eprintln!(
        "train: env_steps={} train_steps={} eval_infraction={:.3} recent_infraction_fraction={:.4} loss={:.3e} t={:.0}s",
        point.env_steps,
        point.train_steps,
        point.infraction_rate,
        point.recent_infraction_fraction,
        point.recent_loss,
        point.elapsed_seconds
    );
}

fn toy_critic(
    cfg: &ExperimentConfig,
    env: &PursuitWorld,
    needed_by: &[Variant],
) -> anyhow::Result<(critic_smc::experiments::toy::ToyCritic, serde_json::Value)> {
    let (critic, report) = obtain_critic(cfg, env, needed_by, progress)?;
    let summary = match report {
        Some(r) => json!({
            "env_steps": r.env_steps,
            "train_steps": r.train_steps,
            "best_eval": r.best_eval,
            "evals": r.evals.iter().map(|e| json!({
                "env_steps": e.env_steps,
                "infraction_rate": e.infraction_rate,
                "recent_infraction_fraction": e.recent_infraction_fraction,
                "recent_loss": e.recent_loss,
            })).collect::<Vec<_>>(),
            "times": r.times,
        }),
        None => json!({ "checkpoint": cfg.critic }),
    };
    Ok((critic, summary))
}

fn run(cli: Cli) -> anyhow::Result<bool> {
    let (common, name) = match &cli.command {
        Command::ToyBenchmark(c) => (c, "toy_benchmark"),
        Command::Ablation(c) => (c, "ablation"),
        Command::Lgssm(c) => (c, "lgssm"),
        Command::ModelFree(c) => (c, "model_free"),
        Command::Unbiasedness(c) => (c, "unbiasedness"),
        Command::TrainCritic(c) => (c, "train_critic"),
    };
    if let Some(workers) = common.workers {
        rayon::ThreadPoolBuilder::new().num_threads(workers.max(1)).build_global().context("thread pool")?;
    }
    let cfg = common.resolve(name)?;
    let config_json = cfg.to_json();
    let env = PursuitWorld::new(cfg.pursuit.clone());
    match &cli.command {
        Command::ToyBenchmark(_) => {
            let needed: Vec<Variant> = cfg.variants.iter().copied().filter(|v| v.needs_critic()).collect();
            let (critic, training) = if needed.is_empty() {
                (None, serde_json::Value::Null)
            } else {
                let (c, s) = toy_critic(&cfg, &env, &needed)?;
                (Some(c), s)
            };
            let bench = toy_benchmark(&cfg, critic.as_ref())?;
            let rows: Vec<ResultRow> =
                bench.outcomes.iter().map(|o| o.row(&cfg.experiment, cfg.seed, &config_json)).collect();
            print_rows(&rows);
            for (a, b, p) in &bench.ordering {
                println!("P({a} > {b}) = {p:.4}");
            }
            if !bench.dump.is_empty() {
                let path = cfg.out_dir().join(format!("{}_trajectories.csv", cfg.experiment));
                std::fs::create_dir_all(cfg.out_dir())?;
                let mut w = csv::Writer::from_path(&path)?;
                for row in &bench.dump {
                    w.serialize(row)?;
                }
                w.flush()?;
            }
            let ordering: Vec<_> =
                bench.ordering.iter().map(|(a, b, p)| json!({"a": a, "b": b, "p_a_greater": p})).collect();
            emit(&cfg, &rows, json!({ "ordering": ordering, "training": training }))?;
        }
        Command::Ablation(_) => {
            let (critic, training) = toy_critic(&cfg, &env, &[Variant::CriticSmc])?;
            let cells = ablation_grid(&cfg, &critic)?;
            print!("{}", ablation_table(&cells));
            let rows: Vec<ResultRow> = cells.iter().map(|o| o.row(&cfg.experiment, cfg.seed, &config_json)).collect();
            emit(&cfg, &rows, json!({ "table": ablation_table(&cells), "training": training }))?;
        }
        Command::ModelFree(_) => {
            let (critic, training) = toy_critic(&cfg, &env, &[Variant::ModelFreeControl])?;
            let outcomes = model_free_study(&cfg, &critic)?;
            let rows: Vec<ResultRow> =
                outcomes.iter().map(|o| o.row(&cfg.experiment, cfg.seed, &config_json)).collect();
            print_rows(&rows);
            emit(&cfg, &rows, json!({ "training": training }))?;
        }
        Command::Lgssm(_) => {
            let study = lgssm_study(&cfg)?;
            println!("oracle log-evidence {:.4} ± {:.4}", study.oracle.mean, study.oracle.std_error);
            println!("{:<12} {:>4} {:>6} {:>16} {:>12}", "sampler", "N", "K", "mean |NLL err|", "sec/run");
            for c in &study.cells {
                println!(
                    "{:<12} {:>4} {:>6} {:>16.4} {:>12.6}",
                    c.sampler,
                    c.n,
                    c.k,
                    c.mean_abs_error(),
                    c.mean_seconds()
                );
            }
            let rows: Vec<ResultRow> =
                study.cells.iter().map(|c| c.row(&cfg.experiment, cfg.seed, &config_json)).collect();
            emit(
                &cfg,
                &rows,
                json!({
                    "oracle": { "mean": study.oracle.mean, "std_error": study.oracle.std_error },
                    "oracle_check": { "mean": study.oracle_check.mean, "std_error": study.oracle_check.std_error },
                    "p_critic_better": study.p_critic_better,
                    "p_k1_vs_smc_at_n1": study.p_k1_vs_smc_at_n1,
                }),
            )?;
        }
        Command::Unbiasedness(_) => {
            let results =
                unbiasedness_suite(&DiscreteMdp::three_state(), &default_cases(), &cfg.unbiasedness, cfg.seed)?;
            let mut ok = true;
            for r in &results {
                let status = if r.as_expected() { "ok" } else { "UNEXPECTED" };
                println!(
                    "{:<42} exact={:.6} mean={:.6} se={:.6} z={:+.3} pass={} [{status}]",
                    r.case.name, r.exact, r.mean, r.std_error, r.z, r.passed
                );
                ok &= r.as_expected();
            }
            let dir = cfg.out_dir();
            std::fs::create_dir_all(&dir)?;
            std::fs::write(
                dir.join(format!("{}.json", cfg.experiment)),
                serde_json::to_string_pretty(&json!({ "config": cfg, "cases": results }))?,
            )?;
            return Ok(ok);
        }
        Command::TrainCritic(_) => {
            let mut cfg = cfg.clone();
            if cfg.critic != "train" {
                bail!("train-critic always trains; drop --critic {}", cfg.critic);
            }
            let target = cfg
                .save_critic
                .clone()
                .unwrap_or_else(|| cfg.out_dir().join(format!("{}_critic.json", cfg.experiment)));
            cfg.save_critic = Some(target.clone());
            let (critic, training) = toy_critic(&cfg, &env, &[])?;
            let dir = cfg.out_dir();
            std::fs::create_dir_all(&dir)?;
            std::fs::write(
                dir.join(format!("{}.json", cfg.experiment)),
                serde_json::to_string_pretty(&json!({ "config": cfg, "training": training }))?,
            )?;
            Checkpoint::from_critic(&critic).save(&target)?;
            eprintln!("saved critic to {}", target.display());
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("{}", json!({ "error": "unbiasedness suite failed", "kind": "check_failed" }));
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("{}", json!({ "error": format!("{e:#}"), "kind": "runtime" }));
            ExitCode::from(2)
        }
    }
}
