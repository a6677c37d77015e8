//! Command-line front end: run scenarios (from a file or a named preset),
//! export the CSVs and summary, and compare two finished runs.

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};
use lora_cluster_core::engine::{run_scenario, EngineOptions};
use lora_cluster_core::scenario::{parse_duration, preset, ScenarioConfig, PRESET_NAMES};
use lora_cluster_core::summary::{compare_runs, write_outputs, RunSummary};
use std::path::PathBuf;

#[derive(Parser)]
#[command(
    name = "lora-cluster-sim",
    about = "Deterministic simulator for a self-healing LoRa edge cluster",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and write latency/transmission/failover CSVs,
    /// the time-series log, and the run summary into the output directory.
    Simulate {
        /// Scenario config file (TOML).
        #[arg(long, conflicts_with = "preset")]
        scenario: Option<PathBuf>,
        /// Named preset from the standard experiment suite.
        #[arg(long)]
        preset: Option<String>,
        /// Override the scenario's random seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the scenario's duration (e.g. "2h", "45m", "90s").
        #[arg(long)]
        duration: Option<String>,
        /// Output directory for CSVs and summaries.
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Print signed deltas (median, p95, delivery ratio, collisions)
    /// between two summary.json files.
    Compare {
        summary_a: PathBuf,
        summary_b: PathBuf,
    },
    /// List the available presets.
    Presets,
}

fn load_config(
    scenario: Option<PathBuf>,
    preset_name: Option<String>,
    seed: Option<u64>,
    duration: Option<String>,
) -> anyhow::Result<ScenarioConfig> {
    let mut cfg = match (scenario, preset_name) {
        (Some(path), None) => ScenarioConfig::load(&path)
            .with_context(|| format!("loading scenario {}", path.display()))?,
        (None, Some(name)) => preset(&name)?,
        (None, None) => bail!("provide either --scenario <path> or --preset <name>"),
        (Some(_), Some(_)) => unreachable!("clap forbids both"),
    };
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    if let Some(text) = duration {
        cfg.duration = parse_duration(&text)
            .map_err(|e| anyhow::anyhow!("invalid --duration: {e}"))?;
    }
    Ok(cfg)
}

fn main() -> anyhow::Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Simulate {
            scenario,
            preset,
            seed,
            duration,
            out,
        } => {
            let cfg = load_config(scenario, preset, seed, duration)?;
            let result = run_scenario(&cfg, EngineOptions::default());
            write_outputs(&result, &out)
                .with_context(|| format!("writing outputs to {}", out.display()))?;
            print!("{}", result.summary.render_text());
            println!("outputs written to {}", out.display());
            // A scenario full of node failures is still a completed
            // simulation: failures are results, not errors.
            Ok(())
        }
        Command::Compare {
            summary_a,
            summary_b,
        } => {
            let a = RunSummary::from_json(
                &std::fs::read_to_string(&summary_a)
                    .with_context(|| format!("reading {}", summary_a.display()))?,
            )?;
            let b = RunSummary::from_json(
                &std::fs::read_to_string(&summary_b)
                    .with_context(|| format!("reading {}", summary_b.display()))?,
            )?;
            let delta = compare_runs(&a, &b)?;
            print!("{}", delta.render_text());
            Ok(())
        }
        Command::Presets => {
            for name in PRESET_NAMES {
                println!("{name}");
            }
            Ok(())
        }
    }
}
