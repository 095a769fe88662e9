use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use enzyme_cli::commands::{self, Suite};
use enzyme_cli::CliError;

/// Enzyme design from conserved sites, EC family tags and substrates.
#[derive(Parser)]
#[command(version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Mine conserved-site annotations from a directory of family alignments.
    MineSites {
        #[arg(long)]
        alignments: PathBuf,
        /// Conservation threshold, strictly between 0 and 1.
        #[arg(long, default_value_t = 0.30)]
        tau: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Assemble the corpus and write the site and split manifests.
    BuildDataset {
        #[arg(long)]
        config: PathBuf,
    },
    /// Train a model as described by a run config.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Run the masked-residue pretraining steps of the schedule first.
        #[arg(long)]
        pretrain_mlm: bool,
        /// Continue from the checkpoint in the output directory.
        #[arg(long)]
        resume: bool,
    },
    /// Design sequences and backbones around a motif.
    Generate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        motif: PathBuf,
        /// Fourth-level EC tag, e.g. 1.1.1.1.
        #[arg(long)]
        tag: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        num_candidates: usize,
        /// Coordinate-initialisation seed of the first candidate.
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Check equivariance and gradient properties of a checkpoint.
    Verify {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_enum, default_value_t = Suite::All)]
        suite: Suite,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Write every EC tag embedding as `tag <tab> floats`.
    ExportEmbeddings {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::MineSites { alignments, tau, out } => commands::mine_sites_cmd(&alignments, tau, &out),
        Command::BuildDataset { config } => commands::build_dataset_cmd(&config),
        Command::Train {
            config,
            pretrain_mlm,
            resume,
        } => commands::train_cmd(&config, pretrain_mlm, resume),
        Command::Generate {
            checkpoint,
            motif,
            tag,
            out,
            num_candidates,
            seed,
        } => commands::generate_cmd(&checkpoint, &motif, &tag, &out, num_candidates, seed),
        Command::Verify { checkpoint, suite, seed } => commands::verify_cmd(&checkpoint, suite, seed),
        Command::ExportEmbeddings { checkpoint, out } => commands::export_embeddings_cmd(&checkpoint, &out),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
