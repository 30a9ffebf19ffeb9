//! Command-line entry point.
//!
//! Subcommands: `gen-rooms`, `train`, `eval`, `compare`, `dump-episode`.
//! Every run writes the resolved configuration beside its outputs, so any
//! artifact can be reproduced from its directory alone.
//!
//! Exit statuses: 0 ok, 2 usage, 3 configuration, 4 io, 5 runtime.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::checkpoint::load_checkpoint;
use crate::config::{parse_config, RunConfig};
use crate::error::{Error, Result};
use crate::orchestrator;
use crate::runner::{self, AgentKind};

#[derive(Parser)]
#[command(
    name = "navgate",
    about = "Grid-world object navigation with a reward-supervised termination judge",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Configuration file (flat key = value); defaults apply when absent.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the configuration's base seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; created if missing.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the held-out evaluation rooms as JSON fixtures.
    GenRooms {
        #[command(flatten)]
        common: Common,
    },
    /// Train policy and judge; writes checkpoint and logs.
    Train {
        #[command(flatten)]
        common: Common,
    },
    /// Evaluate a checkpoint with and without the termination gate.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Random vs gate-off vs gate-on on identical episodes.
    Compare {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Dump one evaluation episode step by step as JSON.
    DumpEpisode {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Index into the evaluation episode list.
        #[arg(long, default_value_t = 0)]
        episode: usize,
        /// Run with the termination gate ("on") or without ("off").
        #[arg(long, default_value = "on")]
        gate: String,
    },
}

fn load_config(common: &Common) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(path) => parse_config(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn prepare_out_dir(common: &Common, cfg: &RunConfig) -> Result<()> {
    std::fs::create_dir_all(&common.out)?;
    std::fs::write(common.out.join("config_resolved.txt"), cfg.to_text())?;
    Ok(())
}

fn write_metrics(
    out: &Path,
    stem: &str,
    report: &crate::metrics::MetricsReport,
) -> Result<()> {
    std::fs::write(
        out.join(format!("{stem}.json")),
        serde_json::to_string_pretty(report)?,
    )?;
    std::fs::write(out.join(format!("{stem}.csv")), report.to_csv())?;
    Ok(())
}

fn cmd_gen_rooms(common: &Common) -> Result<()> {
    let cfg = load_config(common)?;
    prepare_out_dir(common, &cfg)?;
    let specs = runner::build_eval_specs(&cfg, cfg.seed)?;
    let mut rooms = Vec::new();
    let mut seen = std::collections::BTreeSet::new();
    for spec in &specs {
        if seen.insert(spec.room_id.clone()) {
            rooms.push(&spec.room);
        }
    }
    std::fs::write(
        common.out.join("rooms.json"),
        serde_json::to_string_pretty(&rooms)?,
    )?;
    println!(
        "gen-rooms: wrote {} rooms over {} presets to {}",
        rooms.len(),
        cfg.eval.presets.len(),
        common.out.join("rooms.json").display()
    );
    Ok(())
}

fn cmd_train(common: &Common) -> Result<()> {
    let cfg = load_config(common)?;
    prepare_out_dir(common, &cfg)?;
    let outcome = orchestrator::train(&cfg, &common.out)?;
    let successes = outcome
        .episode_rows
        .iter()
        .filter(|r| r.success)
        .count();
    println!(
        "train: {} episodes ({} successful), {} judge batches, checkpoint at {}",
        outcome.episode_rows.len(),
        successes,
        outcome.judge_rows.len(),
        outcome.checkpoint_path.display()
    );
    Ok(())
}

fn cmd_eval(common: &Common, checkpoint: &Path) -> Result<()> {
    let cfg = load_config(common)?;
    prepare_out_dir(common, &cfg)?;
    let agent = runner::load_agent(&cfg, load_checkpoint(checkpoint)?)?;
    for (kind, stem) in [
        (AgentKind::GateOn, "metrics_gate_on"),
        (AgentKind::GateOff, "metrics_gate_off"),
    ] {
        let (report, _) = runner::evaluate(&cfg, &agent, kind, cfg.seed)?;
        write_metrics(&common.out, stem, &report)?;
        println!(
            "eval [{}]: n {} sr {:.4} spl {:.4} | {} n {} sr {:.4} spl {:.4}",
            kind.name(),
            report.overall.n,
            report.overall.sr,
            report.overall.spl,
            report.long_episodes.filter,
            report.long_episodes.n,
            report.long_episodes.sr,
            report.long_episodes.spl
        );
    }
    Ok(())
}

fn cmd_compare(common: &Common, checkpoint: &Path) -> Result<()> {
    let cfg = load_config(common)?;
    prepare_out_dir(common, &cfg)?;
    let agent = runner::load_agent(&cfg, load_checkpoint(checkpoint)?)?;
    let report = runner::compare(&cfg, &agent, cfg.seed)?;
    std::fs::write(
        common.out.join("compare.json"),
        serde_json::to_string_pretty(&report)?,
    )?;
    std::fs::write(common.out.join("compare.csv"), report.to_csv())?;
    println!("agent      filter   n      sr      spl");
    for row in &report.agents {
        for bucket in [&row.report.overall, &row.report.long_episodes] {
            println!(
                "{:<10} {:<8} {:<6} {:<7.4} {:<7.4}",
                row.agent, bucket.filter, bucket.n, bucket.sr, bucket.spl
            );
        }
    }
    Ok(())
}

fn cmd_dump_episode(
    common: &Common,
    checkpoint: &Path,
    episode: usize,
    gate: &str,
) -> Result<()> {
    let cfg = load_config(common)?;
    prepare_out_dir(common, &cfg)?;
    let kind = match gate {
        "on" => AgentKind::GateOn,
        "off" => AgentKind::GateOff,
        other => {
            return Err(Error::Config(format!(
                "`--gate`: expected `on` or `off`, got `{other}`"
            )))
        }
    };
    let agent = runner::load_agent(&cfg, load_checkpoint(checkpoint)?)?;
    let specs = runner::build_eval_specs(&cfg, cfg.seed)?;
    let spec = specs.get(episode).ok_or_else(|| {
        Error::Config(format!(
            "`--episode`: index {episode} outside the evaluation list of {}",
            specs.len()
        ))
    })?;
    let path = common.out.join("trajectory.json");
    let dump = runner::dump_episode(&cfg, &agent, kind, spec, &path)?;
    println!(
        "dump-episode: {} steps, success {}, wrote {}",
        dump.outcome.steps,
        dump.outcome.success,
        path.display()
    );
    Ok(())
}

/// Parse arguments and run; returns the process exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version requests are not usage errors.
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let result = match &cli.command {
        Command::GenRooms { common } => cmd_gen_rooms(common),
        Command::Train { common } => cmd_train(common),
        Command::Eval { common, checkpoint } => cmd_eval(common, checkpoint),
        Command::Compare { common, checkpoint } => cmd_compare(common, checkpoint),
        Command::DumpEpisode {
            common,
            checkpoint,
            episode,
            gate,
        } => cmd_dump_episode(common, checkpoint, *episode, gate),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
