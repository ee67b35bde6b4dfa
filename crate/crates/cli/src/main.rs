mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// Demonstration-driven personalisation for mobile-use agents.
#[derive(Debug, Parser)]
#[command(name = "ifragent", version, about)]
struct Cli {
    /// TOML configuration (backends, embedder, prompts, policy).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Log backend traffic and record assembled prompts in traces.
    #[arg(long, short, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Analyse support demonstrations into SOP store entries and habits.
    Extract(ExtractArgs),
    /// Predict an action for every test step; writes predictions and traces.
    Run(RunArgs),
    /// Score predictions against the annotated test steps.
    Eval(EvalArgs),
    /// Write rewriter warm-up records as JSON lines.
    ExportSft(ExportSftArgs),
}

#[derive(Debug, Args)]
pub struct ExtractArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    /// Store directory; created when missing.
    #[arg(long)]
    pub store: PathBuf,
    /// Retrieval threshold, overrides `[store] threshold`.
    #[arg(long)]
    pub tau: Option<f64>,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub store: PathBuf,
    /// Output directory for predictions.jsonl and traces.jsonl.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub tau: Option<f64>,
    /// Number of retrieved demonstrations shown to the SOP extractor.
    #[arg(long)]
    pub k_shots: Option<usize>,
    /// Agent output grammar: canonical, uitars, osatlas or qwenvl.
    #[arg(long)]
    pub adapter: Option<String>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    pub jobs: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub predictions: PathBuf,
    /// Directory for report.json (default: next to the predictions).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Match-policy overrides, e.g. `click_rel_err=0.1,intent_match=exact`.
    #[arg(long)]
    pub policy: Option<String>,
}

#[derive(Debug, Args)]
pub struct ExportSftArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    /// Build records from a traces.jsonl instead of the dataset's `sft` list.
    #[arg(long)]
    pub traces: Option<PathBuf>,
    /// Store directory holding learned habits (used with --traces).
    #[arg(long)]
    pub store: Option<PathBuf>,
    /// Output JSON-lines file.
    #[arg(long)]
    pub out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let result = commands::load_config(cli.config.as_deref(), cli.verbose).and_then(|cfg| match &cli.command {
        Command::Extract(a) => commands::extract(a, &cfg),
        Command::Run(a) => commands::run(a, &cfg, cli.verbose),
        Command::Eval(a) => commands::eval(a, &cfg),
        Command::ExportSft(a) => commands::export_sft(a, &cfg),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<commands::UsageError>().is_some() {
                eprintln!("\nRun `ifragent --help` for usage.");
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
