//! `tldr`: mine neighbors, train reducers, encode, quantize and evaluate.
//!
//! Exit status is 0 on success, 2 for invalid flags or inputs and 1 for
//! failures while running. Diagnostics go to stderr; stdout only carries
//! data and metric lines.

mod commands;
mod config;
mod error;
mod io;

use std::collections::HashSet;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgAction, CommandFactory, Parser, Subcommand};

use config::ConfigFile;
use error::{usage, CliResult};

#[derive(Parser, Debug)]
#[command(name = "tldr", version, about = "Neighbor-pair dimensionality reduction toolkit")]
struct Cli {
    /// Worker threads; defaults to all cores. `--threads 1` is bit-reproducible.
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Flat key=value file supplying defaults for any flag of the command.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// More logging on stderr (-v info, -vv debug).
    #[arg(short, long, global = true, action = ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build a k-NN table (ivecs) over a training set.
    Knn(commands::KnnArgs),
    /// Train a reducer (tldr, tldr-g, mse, contrastive) or fit PCA.
    Train(commands::TrainArgs),
    /// Reduce vectors with a trained checkpoint.
    Encode(commands::EncodeArgs),
    /// Retrieval or classification metrics as JSON (and optional CSV).
    Eval(commands::EvalArgs),
    /// Product quantization: train a codebook, encode, decode, search.
    Quantize(commands::QuantizeArgs),
    /// Convert IDX image/label files to fvecs plus a label file.
    Convert(commands::ConvertArgs),
    /// Generate a Gaussian-mixture dataset.
    Synth(commands::SynthArgs),
}

/// Every long flag (and alias) of every command, as accepted in config files.
fn known_keys() -> HashSet<String> {
    let cmd = Cli::command();
    let mut keys = HashSet::new();
    let mut add = |arg: &clap::Arg| {
        if let Some(long) = arg.get_long() {
            keys.insert(long.to_string());
        }
        for alias in arg.get_all_aliases().unwrap_or_default() {
            keys.insert(alias.to_string());
        }
    };
    cmd.get_arguments().for_each(&mut add);
    for sub in cmd.get_subcommands() {
        sub.get_arguments().for_each(&mut add);
    }
    keys.remove("config");
    keys.remove("help");
    keys.remove("version");
    keys
}

fn run(cli: Cli) -> CliResult<()> {
    let cfg = match &cli.config {
        Some(p) => ConfigFile::load(p, &known_keys())?,
        None => ConfigFile::default(),
    };
    if let Some(n) = cfg.opt(cli.threads, "threads")? {
        if n == 0 {
            return Err(usage("--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| usage(format!("cannot configure thread pool: {e}")))?;
    }
    match cli.command {
        Command::Knn(a) => commands::knn(a, &cfg),
        Command::Train(a) => commands::train(a, &cfg),
        Command::Encode(a) => commands::encode(a, &cfg),
        Command::Eval(a) => commands::eval(a, &cfg),
        Command::Quantize(a) => commands::quantize(a, &cfg),
        Command::Convert(a) => commands::convert(a, &cfg),
        Command::Synth(a) => commands::synth(a, &cfg),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .target(env_logger::Target::Stderr)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn config_keys_cover_flags() {
        let keys = known_keys();
        for k in ["k", "epochs", "batch-size", "threads", "M", "K", "kprime", "input", "output"] {
            assert!(keys.contains(k), "{k}");
        }
        assert!(!keys.contains("config"));
    }
}
