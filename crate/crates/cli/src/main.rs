//! `fsaudio`: prepare corpora, train few-shot learners, evaluate and report.

mod commands;
mod config;
mod failure;
mod workspace;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand, ValueEnum};
use fsaudio_core::pipeline::spectrogram::SpectrogramConfig;
use fsaudio_core::sampler::SamplerMode;
use fsaudio_core::Partition;
use fsaudio_meta::Algorithm;

use crate::commands::{EvalArgs, PrepareArgs, SweepArgs, SweepAxis};
use crate::config::Overrides;
use crate::failure::{invalid, ErrorRecord};
use crate::workspace::Workspace;

#[derive(Parser)]
#[command(name = "fsaudio", version, about = "Few-shot audio classification benchmark")]
struct Cli {
    /// Workspace root; relative paths in flags and configs start here.
    #[arg(long, global = true, default_value = ".")]
    root: PathBuf,
    /// Spectrogram cache root [env: FSAUDIO_CACHE] [default: <root>/cache].
    #[arg(long, global = true)]
    cache: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum SpectrogramPreset {
    /// 64 mels, 25 ms window, 10 ms hop.
    Full,
    /// 32 mels, 40 ms window and hop.
    Desk,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus (WAV files plus manifest).
    Synth {
        #[arg(long)]
        preset: String,
        /// Output directory [default: <root>/data/<preset>].
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        noise_std: Option<f64>,
    },
    /// Ingest a manifest, optionally prune it, and fill the spectrogram cache.
    Prepare {
        #[arg(long)]
        dataset: String,
        #[arg(long)]
        manifest: PathBuf,
        /// Drop clips longer than this many seconds.
        #[arg(long)]
        max_duration: Option<f64>,
        /// Then drop classes with fewer clips than this.
        #[arg(long)]
        min_class_count: Option<usize>,
        #[arg(long, value_enum, default_value = "full", conflicts_with = "config")]
        spectrogram: SpectrogramPreset,
        /// Take the spectrogram settings from an experiment config instead.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Write a class-disjoint train/val/test split file.
    Split {
        #[arg(long)]
        dataset: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "7/1/2")]
        ratios: String,
    },
    /// Train one learner and checkpoint its best validation state.
    Train(TrainArgs),
    /// Task-sampled evaluation of a trained run.
    Evaluate {
        #[arg(long)]
        run: PathBuf,
        /// Datasets to test on [default: training test splits plus cross datasets].
        #[arg(long = "dataset")]
        datasets: Vec<String>,
        #[arg(long)]
        partition: Option<Partition>,
        #[arg(long)]
        n_tasks: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Shot or way sweep of a trained run.
    Sweep {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        dataset: String,
        #[arg(long)]
        partition: Option<Partition>,
        /// Shot grid, e.g. 1..30 or 1,5,10.
        #[arg(long, conflicts_with = "ways", required_unless_present = "ways")]
        shots: Option<String>,
        /// Way grid, e.g. 5..30:5.
        #[arg(long)]
        ways: Option<String>,
        #[arg(long)]
        n_tasks: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Rank tables and plot data from a run directory or a directory of runs.
    Report { dir: PathBuf },
}

#[derive(Args)]
struct TrainArgs {
    /// Experiment config (TOML); flags below override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    algo: Option<Algorithm>,
    #[arg(long)]
    mode: Option<SamplerMode>,
    /// Training dataset; repeat for joint modes.
    #[arg(long = "dataset")]
    datasets: Vec<String>,
    /// Held-out dataset; repeatable.
    #[arg(long)]
    cross: Vec<String>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    n_way: Option<usize>,
    #[arg(long)]
    k_shot: Option<usize>,
    #[arg(long)]
    n_tasks: Option<usize>,
    /// Run directory [default: runs/<algorithm>].
    #[arg(long)]
    out: Option<PathBuf>,
}

fn run(cli: Cli) -> Result<()> {
    let root = std::fs::canonicalize(&cli.root).map_err(|e| invalid(format!("root {}: {e}", cli.root.display())))?;
    let ws = Workspace::new(root, cli.cache);
    match cli.command {
        Command::Synth {
            preset,
            out,
            seed,
            noise_std,
        } => commands::synth(&ws, &preset, out.as_deref(), seed, noise_std),
        Command::Prepare {
            dataset,
            manifest,
            max_duration,
            min_class_count,
            spectrogram,
            config,
        } => {
            let spectrogram = match (config, spectrogram) {
                (Some(p), _) => config::ExperimentConfig::load(&ws.resolve(&p))?.spectrogram,
                (None, SpectrogramPreset::Full) => SpectrogramConfig::default(),
                (None, SpectrogramPreset::Desk) => SpectrogramConfig::desk(),
            };
            commands::prepare(
                &ws,
                PrepareArgs {
                    dataset: &dataset,
                    manifest: &manifest,
                    max_duration,
                    min_class_count,
                    spectrogram,
                },
            )
        }
        Command::Split { dataset, seed, ratios } => {
            commands::split(&ws, &dataset, seed, commands::parse_ratios(&ratios)?)
        }
        Command::Train(a) => {
            let overrides = Overrides {
                output_dir: a.out,
                datasets: a.datasets,
                cross: a.cross,
                mode: a.mode,
                algorithm: a.algo,
                steps: a.steps,
                seed: a.seed,
                n_way: a.n_way,
                k_shot: a.k_shot,
                n_tasks: a.n_tasks,
            };
            commands::train_cmd(&ws, a.config.as_deref(), &overrides)
        }
        Command::Evaluate {
            run,
            datasets,
            partition,
            n_tasks,
            seed,
        } => commands::evaluate_cmd(
            &ws,
            EvalArgs {
                run: &run,
                datasets: &datasets,
                partition,
                n_tasks,
                seed,
            },
        ),
        Command::Sweep {
            run,
            dataset,
            partition,
            shots,
            ways,
            n_tasks,
            seed,
        } => {
            let axis = match (shots, ways) {
                (Some(s), None) => SweepAxis::Shots(commands::parse_grid(&s)?),
                (None, Some(w)) => SweepAxis::Ways(commands::parse_grid(&w)?),
                _ => return Err(invalid("give exactly one of --shots and --ways")),
            };
            commands::sweep_cmd(
                &ws,
                SweepArgs {
                    run: &run,
                    dataset: &dataset,
                    partition,
                    axis,
                    n_tasks,
                    seed,
                },
            )
        }
        Command::Report { dir } => commands::report_cmd(&ws, &dir),
    }
}

fn command_name(cli: &Cli) -> &'static str {
    match cli.command {
        Command::Synth { .. } => "synth",
        Command::Prepare { .. } => "prepare",
        Command::Split { .. } => "split",
        Command::Train(_) => "train",
        Command::Evaluate { .. } => "evaluate",
        Command::Sweep { .. } => "sweep",
        Command::Report { .. } => "report",
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let name = command_name(&cli);
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let record = ErrorRecord::new(name, &e);
            eprintln!("{}", serde_json::to_string(&record).expect("error record serialises"));
            ExitCode::from(record.exit_code() as u8)
        }
    }
}
