//! Command-line front end for `nbe-core`: config handling, run directories,
//! embedding dumps and SVG plots.

pub mod commands;
pub mod config;
pub mod dump;
pub mod error;
pub mod plot;
pub mod rundir;

pub use commands::{cmd_embed, cmd_eval, cmd_plot, cmd_train, EmbedArgs, EvalArgs, PlotArgs, TrainArgs};
pub use config::RunConfig;
pub use error::{CliError, CliResult};
