//! `sgd-dag`: predict, simulate and visualize synchronous-SGD iteration time
//! from layer-wise traces.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "sgd-dag", version, about = "DAG-based iteration-time model for synchronous SGD on GPU clusters")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Closed-form and simulated iteration times for one configuration.
    Predict(RunArgs),
    /// Simulate and print the schedule summary (json) or timeline (csv).
    Simulate(RunArgs),
    /// Weak-scaling speedup over a list of GPU counts.
    Speedup {
        #[command(flatten)]
        run: RunArgs,
        /// Comma-separated ascending GPU counts; defaults to powers of two
        /// up to the cluster size.
        #[arg(long, value_delimiter = ',')]
        counts: Vec<usize>,
    },
    /// Timeline as Gantt CSV or SVG.
    Gantt(RunArgs),
    /// Check a trace file and summarize its profile.
    Validate(ValidateArgs),
    /// The task graph as JSON or Graphviz DOT.
    Dag(RunArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StrategyArg {
    Naive,
    IoOverlap,
    Wfbp,
    IoWfbp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TriggerArg {
    PerLayer,
    AfterAll,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum IoSourceArg {
    Trace,
    Bandwidth,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FormatArg {
    Json,
    Csv,
    Svg,
    Dot,
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    /// Layer-wise trace file; `-` reads standard input.
    #[arg(long)]
    pub trace: PathBuf,
    /// Cluster description (JSON).
    #[arg(long)]
    pub cluster: PathBuf,
    /// Workload description (JSON).
    #[arg(long)]
    pub workload: PathBuf,
    #[arg(long, value_enum, default_value = "io-wfbp")]
    pub strategy: StrategyArg,
    /// When gradients may start aggregating; defaults to per-layer for the
    /// WFBP strategies and after-all otherwise.
    #[arg(long, value_enum)]
    pub comm_trigger: Option<TriggerArg>,
    /// Total GPU count, laid out with the cluster's GPUs per machine.
    #[arg(long)]
    pub gpus: Option<usize>,
    /// Iterations simulated for steady-state averaging.
    #[arg(long, default_value_t = 5)]
    pub iterations: usize,
    /// Leading trace iterations dropped before averaging.
    #[arg(long, default_value_t = 0)]
    pub warmup: usize,
    #[arg(long, value_enum, default_value = "trace")]
    pub io_source: IoSourceArg,
    #[arg(long, value_enum)]
    pub format: Option<FormatArg>,
    /// Measured iteration times: `[{"gpus": 4, "iter_time_us": 1.5e6}]`.
    #[arg(long)]
    pub measured: Option<PathBuf>,
    /// Output file instead of standard output.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct ValidateArgs {
    /// Layer-wise trace file; `-` reads standard input.
    #[arg(long)]
    pub trace: PathBuf,
    /// Leading trace iterations dropped before averaging.
    #[arg(long, default_value_t = 0)]
    pub warmup: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Predict(args) => commands::predict(&args),
        Command::Simulate(args) => commands::simulate(&args),
        Command::Speedup { run, counts } => commands::speedup(&run, &counts),
        Command::Gantt(args) => commands::gantt(&args),
        Command::Validate(args) => commands::validate(&args),
        Command::Dag(args) => commands::dag(&args),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(error) => {
            eprintln!("error: {error}");
            ExitCode::from(error.exit_code())
        }
    }
}
