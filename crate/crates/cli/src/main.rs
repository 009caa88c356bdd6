//! `ckprobe`: probe masked language models for common sense knowledge and analyze the results.

mod commands;
mod config;
mod output;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::*;
use config::{GlobalArgs, Settings};

#[derive(Parser)]
#[command(name = "ckprobe", version, about, arg_required_else_help = true)]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse an assertion dump into triples, relation counts and probe groups
    Ingest(IngestArgs),
    /// Render cloze queries and score them
    Probe(ProbeArgs),
    /// hits@K per relation with micro and macro averages
    Metrics(ResultsArgs),
    /// Top-K overlap between two relations on shared subjects
    Overlap(PairArgs),
    /// Grade each relation's predictions against the other's answers
    CrossGrade(PairArgs),
    /// Classify distribution shapes and emit rank/probability plot data
    Shapes(ShapeArgs),
    /// Most frequent tokens across one relation's top-K lists
    Redundancy(RedundancyArgs),
    /// Model performance by context/question TF-IDF similarity
    RcAnalyze(RcArgs),
    /// Split low-similarity questions into domains by which models answer them
    Partition(PartitionArgs),
    /// Check fusion-layer gradients against central differences
    FusionCheck(FusionCheckArgs),
    /// metrics, overlap, cross-grade and shapes in one run
    Report(ReportArgs),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Ingest(_) => "ingest",
            Command::Probe(_) => "probe",
            Command::Metrics(_) => "metrics",
            Command::Overlap(_) => "overlap",
            Command::CrossGrade(_) => "cross-grade",
            Command::Shapes(_) => "shapes",
            Command::Redundancy(_) => "redundancy",
            Command::RcAnalyze(_) => "rc-analyze",
            Command::Partition(_) => "partition",
            Command::FusionCheck(_) => "fusion-check",
            Command::Report(_) => "report",
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<bool> {
    let settings = Settings::new(cli.global)?;
    let outcome = match &cli.command {
        Command::Ingest(a) => ingest(&settings, a),
        Command::Probe(a) => probe(&settings, a),
        Command::Metrics(a) => metrics(&settings, a),
        Command::Overlap(a) => overlap(&settings, a),
        Command::CrossGrade(a) => cross_grade_cmd(&settings, a),
        Command::Shapes(a) => shapes(&settings, a),
        Command::Redundancy(a) => redundancy(&settings, a),
        Command::RcAnalyze(a) => rc_analyze(&settings, a),
        Command::Partition(a) => partition(&settings, a),
        Command::FusionCheck(a) => fusion_check(&settings, a),
        Command::Report(a) => report(&settings, a),
    }?;
    for line in &outcome.summary {
        println!("{line}");
    }
    if let Some(out) = &outcome.out {
        for path in outcome.artifacts.write(out, cli.command.name())? {
            tracing::info!(path = %path.display(), "wrote");
        }
    }
    Ok(outcome.success)
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_ansi(std::io::IsTerminal::is_terminal(&std::io::stderr()))
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into()),
        )
        .init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
