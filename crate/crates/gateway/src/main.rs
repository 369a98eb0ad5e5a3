use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use divex_core::colorfeat::load_concept_scores;
use divex_core::corpus::load_manifest;
use divex_core::som::{build_map_catalog, write_catalog, SomConfig, DEFAULT_CONCEPT_THRESHOLD, DEFAULT_MIN_MEMBERS};
use divex_core::taskserver::{load_tasks, parse_usage_log, usage_report, UsageLog, UsageReport};
use divex_gateway::{GatewayError, ServiceConfig};

#[derive(Parser)]
#[command(name = "divex", version, about = "Interactive video exploration service and tools")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the HTTP/WebSocket service.
    Serve {
        #[arg(long)]
        config: PathBuf,
    },
    /// Train the color map and all qualifying concept maps and write them
    /// as JSON.
    BuildMaps {
        #[arg(long)]
        manifest: PathBuf,
        /// Concept score CSV (`keyframe_id,concept_label,score`).
        #[arg(long)]
        concepts: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_MIN_MEMBERS)]
        min_members: usize,
        #[arg(long, default_value_t = DEFAULT_CONCEPT_THRESHOLD)]
        threshold: f64,
        /// Grid size as WIDTHxHEIGHT.
        #[arg(long, default_value = "16x16", value_parser = parse_grid)]
        grid: (usize, usize),
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        /// Leave SOM weights out of the map files (smaller, but the
        /// result cannot be reloaded as a catalog).
        #[arg(long)]
        no_weights: bool,
    },
    /// Aggregate a usage log into (role, task_type, feature) counts.
    Report {
        #[arg(long)]
        log: PathBuf,
        /// Task file; when given, every event must reference one of its
        /// tasks and task types are taken from it.
        #[arg(long)]
        tasks: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Format::Csv)]
        format: Format,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

fn parse_grid(s: &str) -> Result<(usize, usize), String> {
    let (w, h) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected WIDTHxHEIGHT, got {s:?}"))?;
    let parse = |v: &str| v.trim().parse::<usize>().map_err(|e| format!("{v:?}: {e}"));
    Ok((parse(w)?, parse(h)?))
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<(), GatewayError> {
    match cli.command {
        Command::Serve { config } => {
            let config = ServiceConfig::load(&config)?;
            tokio::runtime::Runtime::new()?.block_on(divex_gateway::serve(config))
        }
        Command::BuildMaps {
            manifest,
            concepts,
            min_members,
            threshold,
            grid,
            epochs,
            seed,
            out,
            no_weights,
        } => {
            let mut corpus = load_manifest(&manifest)?;
            if let Some(path) = concepts {
                corpus = corpus.with_concept_scores(&load_concept_scores(path)?)?;
            }
            let mut som = SomConfig::new(grid.0, grid.1);
            if let Some(e) = epochs {
                som = som.with_epochs(e);
            }
            if let Some(s) = seed {
                som = som.with_seed(s);
            }
            let catalog = build_map_catalog(&corpus, &som, min_members, threshold)?;
            write_catalog(&out, &catalog, !no_weights)?;
            println!("{} maps written to {}", catalog.len(), out.display());
            Ok(())
        }
        Command::Report { log, tasks, format } => {
            let lines = parse_usage_log(&std::fs::read_to_string(&log)?)?;
            let report = match tasks {
                Some(path) => {
                    let tasks = load_tasks(path)?;
                    let mut events = UsageLog::new();
                    for l in lines {
                        events.record(l.event);
                    }
                    usage_report(&events, &tasks)?
                }
                None => UsageReport::from_log_lines(&lines),
            };
            match format {
                Format::Csv => print!("{}", report.to_csv()),
                Format::Json => println!("{}", report.to_json()),
            }
            Ok(())
        }
    }
}
