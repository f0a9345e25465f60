mod commands;
mod config;
mod error;
mod manifest;

use std::net::{IpAddr, Ipv4Addr};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use sscl_core::corpus::Split;
use sscl_core::workspace::Workspace;

use commands::{Ctx, EvaluateArgs, Report, ServeArgs};
use config::Config;
use error::{CliError, CliResult};
use manifest::WorkspaceLock;

/// Unsupervised aspect detection: contrastive teacher, aspect mapping and
/// distilled student.
#[derive(Debug, Parser)]
#[command(name = "sscl", version)]
struct Cli {
    /// Working directory holding every artifact.
    #[arg(long, global = true, default_value = ".")]
    workdir: PathBuf,
    /// TOML config; defaults to <workdir>/sscl.toml when present.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one config key, e.g. --set teacher.lambda=1.0 (repeatable).
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Machine-readable output.
    #[arg(long, global = true)]
    json: bool,
    /// Rerun stages whose manifests still match and replace their outputs.
    #[arg(long, global = true)]
    force: bool,
    /// More logging (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Tokenize the corpus, build the vocabulary and encode every split.
    Preprocess,
    /// Train skip-gram word vectors (or align pretrained ones).
    TrainEmbeddings,
    /// Seed aspect embeddings with k-means over the word vectors.
    InitAspects,
    /// Train the contrastive teacher.
    TrainTeacher,
    /// Write the top keywords of every model-inferred aspect.
    Keywords,
    /// Map aspects from a token → aspect lexicon instead of by hand.
    MapAuto,
    /// Serve the mapping workbench.
    ServeMap {
        #[arg(long, default_value_t = map_server::DEFAULT_PORT)]
        port: u16,
        #[arg(long, default_value_t = IpAddr::V4(Ipv4Addr::LOCALHOST))]
        host: IpAddr,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        static_dir: Option<PathBuf>,
    },
    /// Label a split with the teacher and the committed mapping.
    Infer {
        #[arg(long, default_value = "dev")]
        split: Split,
    },
    /// Train the student on entropy-filtered teacher labels.
    Distill,
    /// Score a predictions file against gold labels.
    Evaluate {
        #[arg(long)]
        predictions: PathBuf,
        /// Labeled segments (`id<TAB>aspect<TAB>text`); defaults to the workspace corpus.
        #[arg(long, requires = "aspects")]
        gold: Option<PathBuf>,
        /// Gold aspect names, one per line; used with --gold.
        #[arg(long, requires = "gold")]
        aspects: Option<PathBuf>,
        #[arg(long)]
        general: Option<String>,
        /// Output name under eval/; defaults to the predictions file stem.
        #[arg(long)]
        name: Option<String>,
    },
    /// Teacher ablation over attention kind, λ, batch size and seed.
    Ablate,
    /// Generate a planted-topic corpus and a matching sscl.toml.
    Synth {
        #[arg(long)]
        out: PathBuf,
        /// A quarter of content words drawn from other topics.
        #[arg(long)]
        noisy: bool,
    },
    /// Print the effective configuration.
    ShowConfig,
}

impl Command {
    /// Commands that write into the working directory take its lock.
    fn locks_workspace(&self) -> bool {
        !matches!(self, Command::ServeMap { .. } | Command::Synth { .. } | Command::ShowConfig)
    }
}

fn run(cli: Cli) -> CliResult<Report> {
    let ws = Workspace::new(&cli.workdir);
    let default_config = cli.workdir.join("sscl.toml");
    let file = cli.config.clone().or_else(|| default_config.exists().then_some(default_config));
    let config = Config::load(file.as_deref(), &cli.set)?;
    let _lock = if cli.command.locks_workspace() { Some(WorkspaceLock::acquire(&ws)?) } else { None };
    let ctx = Ctx { ws, config, force: cli.force };
    match cli.command {
        Command::Preprocess => commands::preprocess(&ctx),
        Command::TrainEmbeddings => commands::train_embeddings(&ctx),
        Command::InitAspects => commands::init_aspects(&ctx),
        Command::TrainTeacher => commands::train_teacher_cmd(&ctx),
        Command::Keywords => commands::keywords(&ctx),
        Command::MapAuto => commands::map_auto(&ctx),
        Command::ServeMap { port, host, checkpoint, static_dir } => {
            commands::serve_map(&ctx, ServeArgs { port, host, checkpoint, static_dir })
        }
        Command::Infer { split } => commands::infer(&ctx, split),
        Command::Distill => commands::distill(&ctx),
        Command::Evaluate { predictions, gold, aspects, general, name } => {
            commands::evaluate_cmd(&ctx, EvaluateArgs { predictions, gold, aspects, general, name })
        }
        Command::Ablate => commands::ablate(&ctx),
        Command::Synth { out, noisy } => commands::synth(&ctx, &out, noisy),
        Command::ShowConfig => commands::show_config(&ctx),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let json = cli.json;
    match run(cli) {
        Ok(report) => {
            if json {
                println!("{}", serde_json::to_string_pretty(&report.summary).expect("json"));
            } else {
                for line in report.lines {
                    println!("{line}");
                }
            }
            ExitCode::SUCCESS
        }
        Err(e) => report_error(&e, json),
    }
}

fn report_error(e: &CliError, json: bool) -> ExitCode {
    if json {
        println!("{}", serde_json::json!({ "error": e.message, "exit_code": e.code() }));
    }
    eprintln!("sscl: error: {e}");
    ExitCode::from(e.code())
}
