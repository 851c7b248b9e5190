//! Command-line harness: config handling, subcommands, and run directories.
//!
//! Exit codes are 0 on success, 1 for invalid input (config, overrides,
//! checkpoint/scenario mismatch, oracle bounds) and 2 for runtime failures.

pub mod config;
pub mod manifest;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use uav_aou::baselines::train_offpolicy;
use uav_aou::env::{write_trace_csv, ConstraintReport, Environment};
use uav_aou::mappo::{evaluate, init_actor_critic, train, write_metrics_csv, EpisodeStats, EvalMode};
use uav_aou::meta::{adapt_and_eval, meta_train, write_curve_csv, write_meta_csv, TaskDistribution};
use uav_aou::nn::{load_checkpoint, save_checkpoint, Mlp};
use uav_aou::oracle;
use uav_aou::seed::SeedTree;

use config::{Algorithm, ConfigError, ResolvedConfig};
use manifest::RunManifest;

#[derive(Debug, Parser)]
#[command(name = "uav-aou", version = manifest::VERSION, about = "UAV data-collection trainers and tools")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// Experiment config (TOML).
    #[arg(long, short)]
    pub config: PathBuf,
    /// Replaces the top-level seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Dotted-path override, e.g. `training.epochs=50`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train MAPPO, VDN or QMIX according to `algorithm`.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Run directory; defaults to `runs/<algorithm>-seed<seed>`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Meta-train over the task distribution in `[meta]`.
    MetaTrain {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: Option<PathBuf>,
        /// After meta-training, adapt meta and scratch initializations on a
        /// held-out task for this many updates and write `curve.csv`.
        #[arg(long, default_value_t = 0)]
        curve: usize,
    },
    /// Evaluate a frozen policy checkpoint on the configured scenario.
    Eval {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 10)]
        episodes: usize,
        /// Greedy actions instead of sampling.
        #[arg(long)]
        argmax: bool,
        /// Per-slot trace of the first episode.
        #[arg(long)]
        trace: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Exact optimum of a tiny scenario by enumeration.
    Oracle {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Parse and validate a config, printing the resolved form.
    ValidateConfig {
        #[command(flatten)]
        cfg: ConfigArgs,
    },
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("invalid config: {0}")]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Invalid(String),
    #[error("{0:#}")]
    Runtime(anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Invalid(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

impl From<uav_aou::Error> for CliError {
    fn from(e: uav_aou::Error) -> Self {
        match e {
            uav_aou::Error::Invalid { .. } | uav_aou::Error::Bounds(_) => CliError::Invalid(e.to_string()),
            other => CliError::Runtime(other.into()),
        }
    }
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        CliError::Runtime(e)
    }
}

type CliResult<T> = Result<T, CliError>;

/// Parses `args` (including the program name) and runs the command.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(command: Command) -> CliResult<()> {
    match command {
        Command::Train { cfg, out } => cmd_train(&cfg, out),
        Command::MetaTrain { cfg, out, curve } => cmd_meta_train(&cfg, out, curve),
        Command::Eval { cfg, checkpoint, episodes, argmax, trace, out } => {
            cmd_eval(&cfg, &checkpoint, episodes, argmax, trace.as_deref(), out)
        }
        Command::Oracle { cfg, out } => cmd_oracle(&cfg, out),
        Command::ValidateConfig { cfg } => {
            let resolved = load_config(&cfg)?;
            print!("{}", resolved.to_toml());
            Ok(())
        }
    }
}

pub fn load_config(args: &ConfigArgs) -> CliResult<ResolvedConfig> {
    let text = fs::read_to_string(&args.config)
        .map_err(|e| ConfigError::new("config", format!("cannot read {}: {e}", args.config.display())))?;
    Ok(config::load(&text, &args.overrides, args.seed)?)
}

fn algorithm_name(a: Algorithm) -> &'static str {
    match a {
        Algorithm::Mappo => "mappo",
        Algorithm::Vdn => "vdn",
        Algorithm::Qmix => "qmix",
    }
}

fn create(path: &Path) -> anyhow::Result<fs::File> {
    fs::File::create(path).with_context(|| format!("creating {}", path.display()))
}

pub fn cmd_train(args: &ConfigArgs, out: Option<PathBuf>) -> CliResult<()> {
    let cfg = load_config(args)?;
    let name = algorithm_name(cfg.algorithm);
    let out = out.unwrap_or_else(|| PathBuf::from(format!("runs/{name}-seed{}", cfg.seed)));
    let mut m = RunManifest::begin("train", &cfg, &args.overrides, &out)?;
    let metrics_path = m.artifact("metrics.csv");
    let ckpt_path = m.artifact("checkpoint.json");

    let metrics = match cfg.mixer() {
        None => {
            let every = cfg.training.checkpoint_every;
            let mut saved = Vec::new();
            let outcome = train(cfg.scenario.clone(), &cfg.training, |tr, _| {
                if every > 0 && tr.epoch() % every == 0 {
                    let name = format!("checkpoint_epoch{:05}.json", tr.epoch());
                    save_checkpoint(&out.join(&name), &[("actor", &tr.ac.actor.params), ("critic", &tr.ac.critic.params)])?;
                    saved.push(name);
                }
                Ok(())
            })?;
            for s in saved {
                m.artifact(&s);
            }
            save_checkpoint(&ckpt_path, &[("actor", &outcome.ac.actor.params), ("critic", &outcome.ac.critic.params)])
                .map_err(uav_aou::Error::from)?;
            outcome.metrics
        }
        Some(mixer) => {
            let outcome = train_offpolicy(cfg.scenario.clone(), &mixer, cfg.baseline_budget())?;
            let mut nets: Vec<(String, &uav_aou::nn::ParamSet)> = vec![("agent".into(), &outcome.agent.params)];
            for (k, n) in outcome.mixer.nets().iter().enumerate() {
                nets.push((format!("mixer{k}"), &n.params));
            }
            let refs: Vec<(&str, &uav_aou::nn::ParamSet)> = nets.iter().map(|(k, p)| (k.as_str(), *p)).collect();
            save_checkpoint(&ckpt_path, &refs).map_err(uav_aou::Error::from)?;
            outcome.metrics
        }
    };
    write_metrics_csv(&metrics, create(&metrics_path)?)?;
    m.finish()?;
    if let Some(last) = metrics.last() {
        println!(
            "{name}: {} rows, final reward {:.4}, total AoU {:.1}; wrote {}",
            metrics.len(),
            last.mean_reward,
            last.total_aou,
            out.display()
        );
    }
    Ok(())
}

pub fn cmd_meta_train(args: &ConfigArgs, out: Option<PathBuf>, curve: usize) -> CliResult<()> {
    let cfg = load_config(args)?;
    let out = out.unwrap_or_else(|| PathBuf::from(format!("runs/meta-seed{}", cfg.seed)));
    let mut m = RunManifest::begin("meta-train", &cfg, &args.overrides, &out)?;
    let outcome = meta_train(cfg.scenario.clone(), &cfg.training, &cfg.meta, |_, _| Ok(()))?;
    write_meta_csv(&outcome.records, create(&m.artifact("meta_metrics.csv"))?)?;
    save_checkpoint(
        &m.artifact("meta_checkpoint.json"),
        &[("actor", &outcome.meta.actor.params), ("critic", &outcome.meta.critic.params)],
    )
    .map_err(uav_aou::Error::from)?;

    if curve > 0 {
        let seeds = SeedTree::new(cfg.seed);
        let dist = TaskDistribution::new(cfg.scenario.clone(), &cfg.meta, &seeds)?;
        let task = dist.held_out(&mut seeds.rng("held_out", &[]));
        let scenario = dist.scenario(&task);
        let scratch_init = init_actor_critic(&Environment::new(scenario.clone()).map_err(uav_aou::Error::from)?, &cfg.training, &seeds)?;
        let meta_curve = adapt_and_eval(&outcome.meta, scenario.clone(), &cfg.training, curve)?;
        let scratch_curve = adapt_and_eval(&scratch_init, scenario, &cfg.training, curve)?;
        write_curve_csv(&meta_curve, &scratch_curve, create(&m.artifact("curve.csv"))?)?;
        fs::write(m.artifact("held_out.json"), serde_json::to_string_pretty(&task).context("held-out task")?)
            .context("writing held_out.json")?;
        println!("held-out task T={} R_min={:.1}: curve.csv has {} points", task.horizon, task.rate_min, curve + 1);
    }
    m.finish()?;
    println!("meta-train: {} task rows; wrote {}", outcome.records.len(), out.display());
    Ok(())
}

#[derive(Debug, Serialize)]
struct EvalRow {
    episode: usize,
    reward: f64,
    total_aou: f64,
    data_collected_bits: f64,
    devices_served: f64,
    terminal_distance: f64,
}

#[derive(Debug, Serialize)]
struct EvalSummary<'a> {
    mode: EvalMode,
    episodes: usize,
    mean: &'a EpisodeStats,
    all_hard_constraints_ok: bool,
    constraints: &'a [ConstraintReport],
}

/// Loads the policy network: an actor, or the agent Q-network of a baseline.
fn load_policy(path: &Path) -> CliResult<(Mlp, bool)> {
    let nn = |e: uav_aou::nn::NnError| CliError::Invalid(format!("checkpoint {}: {e}", path.display()));
    if !path.exists() {
        return Err(CliError::Invalid(format!("checkpoint {} does not exist", path.display())));
    }
    match load_checkpoint(path, "actor") {
        Ok(p) => Ok((Mlp::from_layout(p).map_err(nn)?, false)),
        Err(_) => Ok((Mlp::from_layout(load_checkpoint(path, "agent").map_err(nn)?).map_err(nn)?, true)),
    }
}

pub fn cmd_eval(
    args: &ConfigArgs,
    checkpoint: &Path,
    episodes: usize,
    argmax: bool,
    trace: Option<&Path>,
    out: Option<PathBuf>,
) -> CliResult<()> {
    let cfg = load_config(args)?;
    let (policy, q_net) = load_policy(checkpoint)?;
    // Q-networks act greedily.
    let mode = if argmax || q_net { EvalMode::Argmax } else { EvalMode::Sample };
    let env = Environment::new(cfg.scenario.clone()).map_err(uav_aou::Error::from)?;
    let report = evaluate(&policy, &env, episodes, mode, cfg.seed)?;

    let out = out.unwrap_or_else(|| PathBuf::from(format!("runs/eval-seed{}", cfg.seed)));
    let mut m = RunManifest::begin("eval", &cfg, &args.overrides, &out)?;
    let mut w = csv::Writer::from_writer(create(&m.artifact("eval.csv"))?);
    for (k, e) in report.episodes.iter().enumerate() {
        w.serialize(EvalRow {
            episode: k,
            reward: e.reward,
            total_aou: e.total_aou,
            data_collected_bits: e.data_bits,
            devices_served: e.devices_served,
            terminal_distance: e.terminal_distance,
        })
        .context("writing eval.csv")?;
    }
    w.flush().context("writing eval.csv")?;
    let ok = report.constraints.iter().all(ConstraintReport::hard_ok);
    let summary = EvalSummary {
        mode,
        episodes,
        mean: &report.mean,
        all_hard_constraints_ok: ok,
        constraints: &report.constraints,
    };
    fs::write(m.artifact("report.json"), serde_json::to_string_pretty(&summary).context("report")?)
        .context("writing report.json")?;
    if let Some(path) = trace {
        write_trace_csv(&report.traces[0], &env, create(path)?).map_err(uav_aou::Error::from)?;
    }
    m.finish()?;
    println!(
        "eval ({mode:?}, {episodes} episodes): reward {:.4}, total AoU {:.1}, devices served {:.2}, terminal distance {:.4}, constraints {}",
        report.mean.reward,
        report.mean.total_aou,
        report.mean.devices_served,
        report.mean.terminal_distance,
        if ok { "ok" } else { "VIOLATED" }
    );
    Ok(())
}

#[derive(Debug, Serialize)]
struct OracleFile<'a> {
    optimal_return: f64,
    uniform_expected_return: f64,
    trajectory: &'a [Vec<usize>],
    slots: &'a [oracle::SlotBreakdown],
}

pub fn cmd_oracle(args: &ConfigArgs, out: Option<PathBuf>) -> CliResult<()> {
    let cfg = load_config(args)?;
    let sol = oracle::solve(&cfg.scenario)?;
    let uniform = oracle::uniform_expected_return(&cfg.scenario)?;
    let out = out.unwrap_or_else(|| PathBuf::from("runs/oracle"));
    let mut m = RunManifest::begin("oracle", &cfg, &args.overrides, &out)?;
    let file = OracleFile {
        optimal_return: sol.optimal_return,
        uniform_expected_return: uniform,
        trajectory: &sol.trajectory,
        slots: &sol.slots,
    };
    let text = toml::to_string(&file).context("serializing oracle solution")?;
    fs::write(m.artifact("oracle.toml"), text).context("writing oracle.toml")?;
    let env = Environment::new(cfg.scenario.clone()).map_err(uav_aou::Error::from)?;
    write_trace_csv(&sol.trace, &env, create(&m.artifact("oracle_trace.csv"))?).map_err(uav_aou::Error::from)?;
    m.finish()?;
    let mut stdout = std::io::stdout().lock();
    writeln!(stdout, "optimal return {:.12}", sol.optimal_return).context("stdout")?;
    writeln!(stdout, "uniform-policy expected return {uniform:.12}").context("stdout")?;
    for s in &sol.slots {
        writeln!(stdout, "slot {}: actions {:?} cells {:?} served {:?} reward {:.6}", s.slot, s.actions, s.cells, s.served, s.reward)
            .context("stdout")?;
    }
    Ok(())
}
