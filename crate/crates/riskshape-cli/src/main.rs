//! Command-line front end: track generation, training, evaluation and the
//! default-vs-reshaped comparison grid.
//!
//! Exit codes: 0 success, 2 usage/config error, 1 runtime failure.

mod config;

use clap::{Args, Parser, Subcommand};
use config::ExperimentConfig;
use riskshape::agents::{AgentCheckpoint, AgentKind};
use riskshape::harness::{
    self, AgentSpec, CompareOptions, EvalOptions, TrainOptions,
};
use riskshape::reward::Preset;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;
use std::time::{SystemTime, UNIX_EPOCH};

#[derive(Parser)]
#[command(
    name = "riskshape",
    version,
    about = "2D racing RL laboratory: risk-aware reward shaping with DQN, DDPG and PPO"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a track and dump it as JSON.
    GenTrack(GenTrackArgs),
    /// Train one agent and write the run directory.
    Train(TrainArgs),
    /// Evaluate a checkpoint with the test protocol (no step limit).
    Eval(EvalArgs),
    /// Full factorial agents x presets x seeds, with a markdown report.
    Compare(CompareArgs),
}

#[derive(Args)]
struct GenTrackArgs {
    /// Track generation seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output JSON path.
    #[arg(long)]
    out: PathBuf,
    /// Experiment config supplying world parameters.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    /// Experiment config (TOML); defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Agent to train: dqn | ddpg | ppo | random.
    #[arg(long)]
    agent: String,
    /// Reward preset: default | reshaped. Overrides the config section.
    #[arg(long)]
    reward: Option<String>,
    /// Run seed driving all randomness.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Run directory; defaults to <output.dir>/<agent>_<preset>_<seed>_<timestamp>.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override [harness] episodes.
    #[arg(long)]
    episodes: Option<usize>,
    /// Write per-step JSONL traces.
    #[arg(long, default_value_t = false)]
    trace: bool,
}

#[derive(Args)]
struct EvalArgs {
    /// checkpoint.json produced by `train`.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Number of test episodes.
    #[arg(long, default_value_t = 100)]
    episodes: usize,
    /// Base seed; episode i uses base + i.
    #[arg(long, default_value_t = 1_000_000)]
    seed: u64,
    /// Output directory; defaults to the checkpoint's directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Evaluate on a fresh track generated from this seed instead of the
    /// training track.
    #[arg(long)]
    track_seed: Option<u64>,
}

#[derive(Args)]
struct CompareArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Comma-separated agent list.
    #[arg(long, default_value = "dqn,ddpg,ppo")]
    agents: String,
    /// Number of run seeds (0..k); omit to use the config's seed list.
    #[arg(long)]
    seeds: Option<usize>,
    /// Output directory; defaults to <output.dir>/compare_<timestamp>.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override [harness] episodes.
    #[arg(long)]
    episodes: Option<usize>,
}

enum CliError {
    Usage(String),
    Runtime(String),
}

impl CliError {
    fn usage<E: std::fmt::Display>(e: E) -> CliError {
        CliError::Usage(e.to_string())
    }

    fn runtime<E: std::fmt::Display>(e: E) -> CliError {
        CliError::Runtime(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenTrack(args) => cmd_gen_track(args),
        Command::Train(args) => cmd_train(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Compare(args) => cmd_compare(args),
    };
    match result {
        Ok(code) => code,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}

fn load_config(path: &Option<PathBuf>) -> Result<ExperimentConfig, CliError> {
    match path {
        Some(path) => ExperimentConfig::load(path).map_err(CliError::Usage),
        None => Ok(ExperimentConfig::default()),
    }
}

fn timestamp() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

fn threads_from_env() -> usize {
    std::env::var("RISKSHAPE_THREADS")
        .ok()
        .and_then(|v| v.parse().ok())
        .unwrap_or(1)
}

fn agent_spec(config: &ExperimentConfig, kind: AgentKind) -> AgentSpec {
    match kind {
        AgentKind::Dqn => AgentSpec::Dqn(config.agent.dqn.clone()),
        AgentKind::Ddpg => AgentSpec::Ddpg(config.agent.ddpg.clone()),
        AgentKind::Ppo => AgentSpec::Ppo(config.agent.ppo.clone()),
        AgentKind::Random => AgentSpec::Random,
    }
}

fn cmd_gen_track(args: GenTrackArgs) -> Result<ExitCode, CliError> {
    let mut config = load_config(&args.config)?;
    config.world.track_seed = args.seed;
    let track = config.world.build_track().map_err(CliError::runtime)?;
    if let Some(parent) = args.out.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(CliError::runtime)?;
        }
    }
    std::fs::write(&args.out, track.to_json()).map_err(CliError::runtime)?;
    println!(
        "track seed {}: {} tiles, {} obstacles -> {}",
        args.seed,
        track.num_tiles(),
        track.obstacles.len(),
        args.out.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_train(args: TrainArgs) -> Result<ExitCode, CliError> {
    let config = load_config(&args.config)?;
    let kind = AgentKind::from_str(&args.agent).map_err(CliError::Usage)?;
    let (reward, preset) = config
        .reward
        .resolve(args.reward.as_deref())
        .map_err(CliError::Usage)?;
    let obs_mode = config.harness.obs_mode().map_err(CliError::Usage)?;
    let episodes = args.episodes.unwrap_or(config.harness.episodes);

    let preset_label = preset.map(Preset::as_str).unwrap_or("custom");
    let out = args.out.clone().unwrap_or_else(|| {
        Path::new(&config.output.dir).join(format!(
            "{}_{}_{}_{}",
            kind,
            preset_label,
            args.seed,
            timestamp()
        ))
    });
    std::fs::create_dir_all(&out).map_err(CliError::runtime)?;

    let opts = TrainOptions {
        episodes,
        obs_mode,
        trace: args.trace || config.harness.trace,
        out: Some(out.clone()),
    };
    let spec = agent_spec(&config, kind);

    // resolved snapshot + run parameters, enough to reproduce the run
    std::fs::write(
        out.join("config.toml"),
        config.resolved_snapshot(&reward).to_toml(),
    )
    .map_err(CliError::runtime)?;
    let run_info = serde_json::json!({
        "command": "train",
        "agent": kind.as_str(),
        "reward_preset": preset_label,
        "run_seed": args.seed,
        "episodes": episodes,
        "observation": config.harness.observation,
    });
    std::fs::write(
        out.join("run.json"),
        serde_json::to_string_pretty(&run_info).expect("run info serializes"),
    )
    .map_err(CliError::runtime)?;

    let trained = harness::train(&config.world, &spec, reward, preset, &opts, args.seed)
        .map_err(CliError::runtime)?;
    let last = trained.curve.points.last();
    println!(
        "trained {} ({} preset) for {} episodes -> {} (final r_cum {})",
        kind,
        preset_label,
        trained.curve.points.len(),
        out.display(),
        last.map(|p| p.r_cum.to_string()).unwrap_or_default()
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_eval(args: EvalArgs) -> Result<ExitCode, CliError> {
    let json = std::fs::read_to_string(&args.checkpoint)
        .map_err(|e| CliError::runtime(format!("{}: {e}", args.checkpoint.display())))?;
    let ckpt = AgentCheckpoint::from_json(&json).map_err(CliError::runtime)?;
    let out = args.out.clone().unwrap_or_else(|| {
        args.checkpoint
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from("."))
    });
    let opts = EvalOptions {
        n_episodes: args.episodes,
        base_seed: args.seed,
        track_seed_override: args.track_seed,
        out: Some(out.clone()),
    };
    let summary = harness::evaluate(&ckpt, &opts).map_err(CliError::runtime)?;
    println!(
        "evaluated {} over {} episodes: mean_t_srv {}, mean_r_cum {}, std_r_cum {} -> {}",
        summary.agent,
        summary.n_episodes,
        summary.mean_t_srv,
        summary.mean_r_cum,
        summary.std_r_cum,
        out.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_compare(args: CompareArgs) -> Result<ExitCode, CliError> {
    let config = load_config(&args.config)?;
    let agents: Vec<AgentSpec> = args
        .agents
        .split(',')
        .filter(|s| !s.is_empty())
        .map(|s| AgentKind::from_str(s.trim()).map(|k| agent_spec(&config, k)))
        .collect::<Result<_, _>>()
        .map_err(CliError::Usage)?;
    if agents.is_empty() {
        return Err(CliError::Usage("no agents given".to_string()));
    }
    let obs_mode = config.harness.obs_mode().map_err(CliError::Usage)?;
    let seeds = match args.seeds {
        Some(k) => (0..k as u64).collect(),
        None => config.harness.seeds.clone(),
    };
    if seeds.is_empty() {
        return Err(CliError::Usage("no seeds given".to_string()));
    }
    let out = args
        .out
        .clone()
        .unwrap_or_else(|| Path::new(&config.output.dir).join(format!("compare_{}", timestamp())));
    std::fs::create_dir_all(&out).map_err(CliError::runtime)?;

    let opts = CompareOptions {
        episodes: args.episodes.unwrap_or(config.harness.episodes),
        eval_episodes: config.harness.eval_episodes,
        eval_base_seed: config.harness.eval_base_seed,
        obs_mode,
        seeds,
        threads: threads_from_env(),
        out: Some(out.clone()),
    };
    let report = harness::compare(
        &config.world,
        &agents,
        &[Preset::Default, Preset::Reshaped],
        &opts,
    )
    .map_err(CliError::runtime)?;

    println!("report -> {}", out.join("report.md").display());
    if report.any_failed() {
        for cell in report.cells.iter().filter(|c| c.result.is_err()) {
            eprintln!(
                "cell {} {} seed {} failed: {}",
                cell.agent,
                cell.preset,
                cell.run_seed,
                cell.result.as_ref().err().unwrap()
            );
        }
        return Err(CliError::Runtime("one or more cells failed".to_string()));
    }
    Ok(ExitCode::SUCCESS)
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }
}
