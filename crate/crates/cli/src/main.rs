use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand, ValueEnum};

mod commands;
mod config;

use config::Config;

/// Geo-aware speech recognition on synthetic POI data.
#[derive(Parser)]
#[command(name = "geoasr", version)]
struct Cli {
    /// TOML configuration file; defaults are used for anything missing.
    #[arg(short, long, global = true)]
    config: Option<PathBuf>,
    /// Override a configuration value, e.g. `--set decode.beam=12`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the POI corpus, lexicon and test manifests.
    GenCorpus,
    /// Train the baseline models, one province's models, or all of them.
    TrainLm {
        /// `baseline`, `all`, or a province id.
        #[arg(long, default_value = "all")]
        scope: String,
    },
    /// Build the static lexicon-times-bigram graph.
    BuildGraph,
    /// First-pass decoding of a manifest into n-best lists.
    Decode {
        /// Defaults to the generated test manifest.
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Directory of `<utt>.post` posterior files; simulated when absent.
        #[arg(long)]
        emissions: Option<PathBuf>,
        /// Overrides interpolation.lambda.
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Rescore n-best lists with the character models.
    Rescore {
        #[arg(long)]
        nbest: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Character error rates of top hypotheses against a manifest.
    Eval {
        /// Reference manifest; defaults to the generated test manifest.
        #[arg(long)]
        refs: Option<PathBuf>,
        /// N-best or rescored file.
        #[arg(long)]
        hyps: PathBuf,
        /// Second hypothesis file to compute relative reductions against.
        #[arg(long)]
        baseline: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "province")]
        group: Grouping,
        /// Score utterances without a hypothesis as empty output instead of
        /// failing.
        #[arg(long)]
        allow_missing: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum Grouping {
    Province,
    Region,
    Accent,
}

fn run(cli: Cli) -> Result<()> {
    let cfg = Config::load(cli.config.as_deref(), &cli.overrides)?;
    match cli.command {
        Command::GenCorpus => commands::gen_corpus(&cfg),
        Command::TrainLm { scope } => commands::train_lm(&cfg, &scope),
        Command::BuildGraph => commands::build_graph(&cfg),
        Command::Decode {
            manifest,
            emissions,
            lambda,
            out,
        } => commands::decode(&cfg, manifest, emissions, lambda, out),
        Command::Rescore { nbest, out } => commands::rescore(&cfg, &nbest, out),
        Command::Eval {
            refs,
            hyps,
            baseline,
            group,
            allow_missing,
            out,
        } => commands::eval(&cfg, refs, &hyps, baseline.as_deref(), group, allow_missing, out),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
