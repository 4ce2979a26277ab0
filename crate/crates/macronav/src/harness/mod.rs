//! Command-line experiment harness.
//!
//! Five subcommands drive the library end to end:
//!
//! * `train`    — learn a Q-network, recording the learning curve and a
//!   checkpoint;
//! * `eval`     — greedy evaluation of a checkpoint on held-out scenes;
//! * `baseline` — the uniform-random macro policy on the same held-out
//!   scenes;
//! * `plot`     — render one or more curve CSVs as a smoothed SVG
//!   comparison;
//! * `dump-map` — run a single mapping episode and dump the resulting
//!   topological map.
//!
//! Every run directory receives a `config.txt` echo of the resolved
//! configuration, and reruns with identical flags produce byte-identical
//! CSV files (all randomness derives from `--seed`).

mod config;
mod csv;
mod plot;

pub use config::{apply_config_text, apply_key, echo_config};
pub use csv::{read_csv, write_csv, RunRecord, CSV_HEADER};
pub use plot::{emit_svg, moving_average, Series, DEFAULT_SMOOTHING_WINDOW};

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::agent::{
    evaluate, random_baseline, run_episode, train_with_observer, AgentError, EpisodeRecord,
    EvalSummary, Mode, NullOracle, TrainConfig,
};
use crate::qnet::{load_params, save_params, QNetError};
use crate::rng::derive_seed;
use crate::sim::{generate_scene, RewardMode};

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    /// Bad flags or flag combinations (exit code 1).
    #[error("{0}")]
    Usage(String),
    /// Bad config-file content (exit code 1).
    #[error("config line {line}: {reason}")]
    Config { line: usize, reason: String },
    /// Malformed CSV content; `row` is the 1-based file line.
    #[error("csv row {row}: {reason}")]
    Parse { row: usize, reason: String },
    /// A plot series with no data points.
    #[error("series `{0}` has no data")]
    EmptySeries(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Network(#[from] QNetError),
}

impl HarnessError {
    /// Process exit code: 1 for usage errors, 2 for runtime failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Usage(_)
            | HarnessError::Config { .. }
            | HarnessError::Agent(AgentError::Config(_)) => 1,
            _ => 2,
        }
    }
}

// ---------------------------------------------------------------------------
// CLI surface
// ---------------------------------------------------------------------------

#[derive(Debug, Parser)]
#[command(
    name = "macronav",
    about = "Topological-map navigation experiments",
    disable_help_subcommand = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train the Q-network; writes curve.csv, checkpoint.qnet, config.txt.
    Train(RunFlags),
    /// Evaluate a checkpoint greedily on held-out scenes; writes eval.csv.
    Eval(EvalFlags),
    /// Run the uniform-random baseline on held-out scenes; writes curve.csv.
    Baseline(RunFlags),
    /// Render curve CSVs as an SVG learning-curve comparison.
    Plot(PlotFlags),
    /// Map one episode's exploration and dump the graph (map.txt, patches.bin).
    DumpMap(DumpFlags),
}

/// Flags shared by the config-driven subcommands. Unset flags fall back to
/// the config file (if given), then to built-in defaults.
#[derive(Debug, Args, Default)]
struct RunFlags {
    /// Number of targets in the task sequence.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..=3))]
    targets: Option<u64>,
    /// Reward schedule: `immediate` (+1 per target) or `terminal` (+1 once).
    #[arg(long, value_parser = parse_reward)]
    reward: Option<RewardMode>,
    /// Episode count (training episodes, or baseline episodes).
    #[arg(long)]
    episodes: Option<usize>,
    /// Number of distinct training scenes.
    #[arg(long)]
    scenes: Option<usize>,
    /// Master seed; every random stream derives from it.
    #[arg(long)]
    seed: Option<u64>,
    /// Exploration rate for training-time action selection.
    #[arg(long)]
    epsilon: Option<f64>,
    /// Boltzmann temperature for training-time action selection.
    #[arg(long)]
    temperature: Option<f64>,
    /// Additive preference for unexplored nodes.
    #[arg(long)]
    bonus_q: Option<f64>,
    /// Discount factor per macro decision.
    #[arg(long)]
    gamma: Option<f64>,
    /// Adam learning rate.
    #[arg(long)]
    lr: Option<f64>,
    /// Minibatch size per update.
    #[arg(long)]
    batch: Option<usize>,
    /// Replay buffer capacity.
    #[arg(long)]
    replay: Option<usize>,
    /// Held-out evaluation episode count.
    #[arg(long)]
    eval_episodes: Option<usize>,
    /// Optional `key = value` config file applied beneath the flags.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory for run artifacts.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct EvalFlags {
    /// Checkpoint written by `train`; defines the network architecture.
    #[arg(long)]
    checkpoint: PathBuf,
    #[command(flatten)]
    run: RunFlags,
}

#[derive(Debug, Args)]
struct PlotFlags {
    /// Input curve CSVs, one series per file.
    #[arg(long = "in", required = true, num_args = 1..)]
    inputs: Vec<PathBuf>,
    /// Moving-average window in episodes.
    #[arg(long, default_value_t = DEFAULT_SMOOTHING_WINDOW)]
    window: usize,
    /// Output SVG path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct DumpFlags {
    #[command(flatten)]
    run: RunFlags,
}

fn parse_reward(s: &str) -> Result<RewardMode, String> {
    s.parse()
}

/// Resolve the configuration for one run: defaults, then the config file,
/// then flags.
fn resolve_config(flags: &RunFlags) -> Result<TrainConfig, HarnessError> {
    let mut cfg = TrainConfig::default();
    if let Some(path) = &flags.config {
        let text = read_to_string(path)?;
        apply_config_text(&mut cfg, &text)?;
    }
    if let Some(t) = flags.targets {
        cfg.set_targets(t as usize);
    }
    if let Some(r) = flags.reward {
        cfg.reward_mode = r;
    }
    if let Some(v) = flags.episodes {
        cfg.episodes = v;
    }
    if let Some(v) = flags.scenes {
        cfg.scenes = v;
    }
    if let Some(v) = flags.seed {
        cfg.seed = v;
    }
    if let Some(v) = flags.epsilon {
        cfg.policy.epsilon = v;
    }
    if let Some(v) = flags.temperature {
        cfg.policy.temperature = v;
    }
    if let Some(v) = flags.bonus_q {
        cfg.policy.bonus_q = v;
    }
    if let Some(v) = flags.gamma {
        cfg.gamma = v;
    }
    if let Some(v) = flags.lr {
        cfg.lr = v;
    }
    if let Some(v) = flags.batch {
        cfg.batch = v;
    }
    if let Some(v) = flags.replay {
        cfg.replay_capacity = v;
    }
    if let Some(v) = flags.eval_episodes {
        cfg.eval_episodes = v;
    }
    Ok(cfg)
}

// ---------------------------------------------------------------------------
// File helpers
// ---------------------------------------------------------------------------

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn read_to_string(path: &Path) -> Result<String, HarnessError> {
    std::fs::read_to_string(path).map_err(io_err(path))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<(), HarnessError> {
    std::fs::write(path, bytes).map_err(io_err(path))
}

/// Create the run directory and record the resolved configuration.
fn prepare_run_dir(out: &Path, cfg: &TrainConfig) -> Result<(), HarnessError> {
    std::fs::create_dir_all(out).map_err(io_err(out))?;
    write_bytes(&out.join("config.txt"), echo_config(cfg).as_bytes())
}

fn to_rows(records: &[EpisodeRecord], cfg: &TrainConfig) -> Vec<RunRecord> {
    records
        .iter()
        .map(|r| RunRecord::from_episode(r, cfg.n_targets, cfg.reward_mode))
        .collect()
}

fn print_summary(label: &str, summary: &EvalSummary) {
    println!(
        "{label}: {} episodes, median steps {}, mean steps {:.1}, success rate {:.0}%",
        summary.records.len(),
        summary.median_steps,
        summary.mean_steps,
        summary.success_rate * 100.0,
    );
}

// ---------------------------------------------------------------------------
// Subcommands
// ---------------------------------------------------------------------------

fn cmd_train(flags: &RunFlags) -> Result<(), HarnessError> {
    let cfg = resolve_config(flags)?;
    cfg.validate()?;
    prepare_run_dir(&flags.out, &cfg)?;
    let progress_every = (cfg.episodes / 10).max(1);
    let (params, records) = train_with_observer(&cfg, |episode, _, record| {
        if (episode + 1) % progress_every == 0 || episode + 1 == cfg.episodes {
            eprintln!(
                "episode {:>4}/{} [{}] steps={:<5} return={}",
                episode + 1,
                cfg.episodes,
                record.mode.as_str(),
                record.stats.elementary_steps,
                record.stats.episode_return,
            );
        }
    })?;

    let csv_path = flags.out.join("curve.csv");
    write_bytes(&csv_path, write_csv(&to_rows(&records, &cfg)).as_bytes())?;
    let ck_path = flags.out.join("checkpoint.qnet");
    write_bytes(&ck_path, &save_params(&params))?;
    println!(
        "trained {} episodes ({} warm-up); wrote {} and {}",
        records.len(),
        cfg.warmup_episodes,
        csv_path.display(),
        ck_path.display(),
    );
    Ok(())
}

fn cmd_eval(flags: &EvalFlags) -> Result<(), HarnessError> {
    let mut cfg = resolve_config(&flags.run)?;
    let bytes = std::fs::read(&flags.checkpoint).map_err(io_err(&flags.checkpoint))?;
    let params = load_params(&bytes)?;
    // The checkpoint defines the network; an explicit --targets must agree.
    if let Some(t) = flags.run.targets {
        if t as usize != params.arch.n_targets {
            return Err(HarnessError::Usage(format!(
                "--targets {} contradicts the checkpoint ({} targets)",
                t, params.arch.n_targets
            )));
        }
    }
    cfg.set_targets(params.arch.n_targets);
    cfg.arch = params.arch;
    cfg.validate()?;
    prepare_run_dir(&flags.run.out, &cfg)?;

    let summary = evaluate(&params, &cfg, cfg.eval_episodes)?;
    let csv_path = flags.run.out.join("eval.csv");
    write_bytes(&csv_path, write_csv(&to_rows(&summary.records, &cfg)).as_bytes())?;
    print_summary("eval", &summary);
    println!("wrote {}", csv_path.display());
    Ok(())
}

fn cmd_baseline(flags: &RunFlags) -> Result<(), HarnessError> {
    let mut cfg = resolve_config(flags)?;
    // A random run has no replay warm-up; don't let the episode budget
    // validation trip over it.
    cfg.warmup_episodes = 0;
    cfg.validate()?;
    prepare_run_dir(&flags.out, &cfg)?;
    let summary = random_baseline(&cfg, cfg.episodes)?;
    let csv_path = flags.out.join("curve.csv");
    write_bytes(&csv_path, write_csv(&to_rows(&summary.records, &cfg)).as_bytes())?;
    print_summary("baseline", &summary);
    println!("wrote {}", csv_path.display());
    Ok(())
}

fn cmd_plot(flags: &PlotFlags) -> Result<(), HarnessError> {
    let mut series = Vec::with_capacity(flags.inputs.len());
    for path in &flags.inputs {
        let rows = read_csv(&read_to_string(path)?)?;
        series.push(Series::new(
            path.display().to_string(),
            rows.iter()
                .map(|r| r.elementary_steps as f64)
                .collect::<Vec<f64>>(),
        ));
    }
    let svg = emit_svg(&series, flags.window)?;
    if let Some(parent) = flags.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    write_bytes(&flags.out, svg.as_bytes())?;
    println!("wrote {} ({} series)", flags.out.display(), series.len());
    Ok(())
}

fn cmd_dump_map(flags: &DumpFlags) -> Result<(), HarnessError> {
    let cfg = {
        let mut cfg = resolve_config(&flags.run)?;
        cfg.warmup_episodes = 0;
        cfg
    };
    cfg.validate()?;
    prepare_run_dir(&flags.run.out, &cfg)?;

    let scene = generate_scene(derive_seed(cfg.seed, "dump-scene", 0), &cfg.scene_config())
        .map_err(AgentError::from)?;
    let episode_seed = derive_seed(cfg.seed, "dump-episode", 0);
    let output = run_episode(&scene, &cfg, Mode::Random, episode_seed, &mut NullOracle);

    let map_path = flags.run.out.join("map.txt");
    write_bytes(&map_path, output.map.serialize().as_bytes())?;
    let patches_path = flags.run.out.join("patches.bin");
    write_bytes(&patches_path, &output.map.serialize_patches())?;
    println!(
        "mapped one episode: {} nodes, {} edges, {} elementary steps; wrote {} and {}",
        output.map.node_count(),
        output.map.edge_count(),
        output.stats.elementary_steps,
        map_path.display(),
        patches_path.display(),
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// Entry point
// ---------------------------------------------------------------------------

/// Parse `argv` (including the program name) and run the selected
/// subcommand. Returns the process exit code: 0 success, 1 usage error,
/// 2 runtime failure.
pub fn cli_main(argv: &[String]) -> i32 {
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            // --help / --version land here too; they are not failures.
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let result = match &cli.command {
        Command::Train(flags) => cmd_train(flags),
        Command::Eval(flags) => cmd_eval(flags),
        Command::Baseline(flags) => cmd_baseline(flags),
        Command::Plot(flags) => cmd_plot(flags),
        Command::DumpMap(flags) => cmd_dump_map(flags),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
