mod commands;
mod config;
mod dataset;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use stgatt::{Error, ErrorKind};

#[derive(Parser, Debug)]
#[command(name = "stgatt", version, about = "Spatial-temporal unified graph attention forecaster")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

/// Flags shared by every command. Each one overrides the config file.
#[derive(Args, Debug, Clone, Default)]
pub struct GlobalArgs {
    /// key = value configuration file
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,
    /// Edge-list graph file
    #[arg(long, global = true)]
    pub graph: Option<PathBuf>,
    /// Signal CSV; repeat (or separate with commas) for more channels
    #[arg(long, global = true, value_delimiter = ',')]
    pub signal: Vec<PathBuf>,
    #[arg(long, global = true)]
    pub interval_min: Option<usize>,
    /// Forecast horizons in steps for `evaluate`
    #[arg(long, global = true, value_delimiter = ',', default_value = "3,6,12")]
    pub horizon_steps: Vec<usize>,
    /// ratio:a,b,c or days:a,b,c
    #[arg(long, global = true)]
    pub split: Option<String>,
    /// Input steps T
    #[arg(long, global = true)]
    pub horizon: Option<usize>,
    /// Predicted steps T'
    #[arg(long, global = true)]
    pub out_horizon: Option<usize>,
    #[arg(long, global = true)]
    pub channels: Option<usize>,
    #[arg(long, global = true)]
    pub d_model: Option<usize>,
    #[arg(long, global = true)]
    pub spe_rank: Option<usize>,
    #[arg(long, global = true)]
    pub steps_per_day: Option<usize>,
    #[arg(long, global = true)]
    pub blocks: Option<usize>,
    #[arg(long, global = true)]
    pub heads: Option<usize>,
    #[arg(long, global = true)]
    pub subsets: Option<usize>,
    #[arg(long, global = true)]
    pub learning_rate: Option<f64>,
    #[arg(long, global = true)]
    pub batch_size: Option<usize>,
    #[arg(long, global = true)]
    pub epochs: Option<usize>,
    /// Gradient clip norm, or "none"
    #[arg(long, global = true)]
    pub clip_norm: Option<String>,
    /// Keep the graph as given instead of symmetrising it
    #[arg(long, global = true)]
    pub directed: bool,
    /// Any config key, as key=value; may repeat
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// More log output (-v info, -vv debug)
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Summarise the spatial graph and its unified expansion
    BuildGraph {
        /// Write the unified adjacency as an edge list
        #[arg(long)]
        export: Option<PathBuf>,
    },
    /// Build both partition schemes and a report
    Partition,
    /// Train a model, writing checkpoints, the loss trace and test metrics
    Train {
        /// Continue from this checkpoint
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Use p1.txt and p2.txt from this directory instead of building them
        #[arg(long)]
        partition_dir: Option<PathBuf>,
    },
    /// Metrics per forecast horizon on the test split
    Evaluate {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Forecast from one input window
    Predict {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// First input step; defaults to the last full window
        #[arg(long)]
        start: Option<usize>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Attention weights of one query element as node,time,alpha rows
    ExportAttention {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Index among the test windows
        #[arg(long, default_value_t = 0)]
        window: usize,
        #[arg(long, default_value_t = 0)]
        query_node: usize,
        /// Defaults to the last input step
        #[arg(long)]
        query_time: Option<usize>,
        /// 0-based block index
        #[arg(long, default_value_t = 0)]
        block: usize,
        /// 1 (first partition) or 2 (shifted partition)
        #[arg(long, default_value_t = 1)]
        module: usize,
        /// Single head; heads are averaged when omitted
        #[arg(long)]
        head: Option<usize>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Weekly historical-average baseline on the test split
    BaselineHa,
    /// Finite-difference gradient checks on a toy model
    Gradcheck {
        #[arg(long, default_value_t = 300)]
        coords: usize,
    },
}

fn exit_code(kind: ErrorKind) -> u8 {
    match kind {
        ErrorKind::Input => 2,
        ErrorKind::Contract => 3,
        ErrorKind::Numerical => 4,
    }
}

fn kind_label(kind: ErrorKind) -> &'static str {
    match kind {
        ErrorKind::Input => "input",
        ErrorKind::Contract => "contract",
        ErrorKind::Numerical => "numerical",
    }
}

fn report(err: &Error) -> ExitCode {
    let kind = err.kind();
    let message = match err {
        Error::Input(m) | Error::Contract(m) | Error::Numerical(m) => m.clone(),
        other => other.to_string(),
    };
    let message = message.replace('\n', " ");
    eprintln!("error[{}]: {message}", kind_label(kind));
    ExitCode::from(exit_code(kind))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let text = e.to_string();
            let first = text.lines().next().unwrap_or("invalid arguments");
            let first = first.strip_prefix("error: ").unwrap_or(first);
            eprintln!("error[input]: {first}");
            return ExitCode::from(2);
        }
    };
    let level = match cli.global.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => report(&e),
    }
}
