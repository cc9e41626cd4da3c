use std::path::PathBuf;

use anyhow::Result;
use clap::{Parser, Subcommand};

mod commands;

#[derive(Parser)]
#[command(name = "kgselect", version, about = "Knowledge selection over a text-augmented knowledge graph")]
struct Cli {
    /// TOML config file.
    #[arg(long, global = true, env = "AKG_CONFIG")]
    config: Option<PathBuf>,
    /// Overrides trainer.seed and generator.seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides env.horizon.
    #[arg(long, global = true)]
    horizon: Option<usize>,
    /// Overrides policy.beam_width and turns on beam search in chat.
    #[arg(long, global = true)]
    beam: Option<usize>,
    /// Overrides service.port.
    #[arg(long, global = true)]
    port: Option<u16>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build the augmented graph from triples and documents.
    BuildGraph,
    /// Train the knowledge selector.
    TrainSelect,
    /// Train the response generator.
    TrainGen,
    /// Evaluate a trained selector on the held-out split.
    Eval,
    /// Run the head ablation over the configured seeds.
    Ablate,
    /// Train on fractions of the data and report held-out Hit@1.
    Reduce,
    /// Interactive chat on stdin.
    Chat,
    /// HTTP API.
    Serve,
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = commands::load_config(cli.config)?;
    if let Some(s) = cli.seed {
        cfg.trainer.seed = s;
        cfg.generator.seed = s;
    }
    if let Some(h) = cli.horizon {
        cfg.env.horizon = h;
    }
    if let Some(b) = cli.beam {
        cfg.policy.beam_width = b;
        cfg.chat.beam = true;
    }
    if let Some(p) = cli.port {
        cfg.service.port = p;
    }
    cfg.validate()?;
    match cli.command {
        Command::BuildGraph => commands::build_graph_cmd(&cfg),
        Command::TrainSelect => commands::train_select(&cfg),
        Command::TrainGen => commands::train_gen(&cfg),
        Command::Eval => commands::eval(&cfg),
        Command::Ablate => commands::ablate(&cfg),
        Command::Reduce => commands::reduce(&cfg),
        Command::Chat => commands::chat(&cfg),
        Command::Serve => commands::serve(&cfg),
    }
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
