use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use nbe_cli::{cmd_embed, cmd_eval, cmd_plot, cmd_train, EmbedArgs, EvalArgs, PlotArgs, TrainArgs};

/// Semi-supervised neighbor embedding.
#[derive(Parser)]
#[command(name = "nbe", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train an embedding network and write checkpoint, log and manifest
    Train {
        /// key = value config file
        #[arg(short, long)]
        config: Option<PathBuf>,
        /// Override a config key, e.g. --set epochs=15
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        #[arg(long)]
        run_dir: PathBuf,
        /// Continue from the run directory's checkpoint
        #[arg(long)]
        resume: bool,
        /// Stop after this many completed epochs
        #[arg(long, value_name = "EPOCH")]
        stop_after_epoch: Option<u64>,
    },
    /// Report kNN test error of a trained run
    Eval {
        #[arg(long)]
        run_dir: PathBuf,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        /// Retrain on this many fresh splits and report mean ± std
        #[arg(long, value_name = "N")]
        repeats: Option<usize>,
        /// Also report kNN error on raw inputs
        #[arg(long)]
        raw_baseline: bool,
    },
    /// Dump embeddings of every sample as TSV
    Embed {
        #[arg(long)]
        run_dir: PathBuf,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Render a 2-D embedding dump as SVG
    Plot {
        #[arg(long)]
        dump: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
        /// Draw test points as rings
        #[arg(long)]
        include_test: bool,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let mut stdout = std::io::stdout();
    let result = match cli.command {
        Command::Train { config, overrides, run_dir, resume, stop_after_epoch } => {
            cmd_train(&TrainArgs { config, overrides, run_dir, resume, stop_after_epoch }, &mut stdout)
        }
        Command::Eval { run_dir, checkpoint, overrides, repeats, raw_baseline } => {
            cmd_eval(&EvalArgs { run_dir, checkpoint, overrides, repeats, raw_baseline }, &mut stdout)
        }
        Command::Embed { run_dir, checkpoint, out } => cmd_embed(&EmbedArgs { run_dir, checkpoint, out }),
        Command::Plot { dump, out, include_test } => cmd_plot(&PlotArgs { dump, out, include_test }),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
