//! `diffconv` command-line front end.
//!
//! Exit codes: 0 success, 1 I/O or runtime failure, 2 usage or config error.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::Value;

#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub msg: String,
}

impl CliError {
    pub fn io(msg: impl Into<String>) -> Self {
        CliError { code: 1, msg: msg.into() }
    }

    pub fn usage(msg: impl Into<String>) -> Self {
        CliError { code: 2, msg: msg.into() }
    }
}

impl From<diffconv::Error> for CliError {
    fn from(e: diffconv::Error) -> Self {
        match e {
            diffconv::Error::InvalidArgument(_) => CliError::usage(e.to_string()),
            _ => CliError::io(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::io(e.to_string())
    }
}

#[derive(Debug, Parser)]
#[command(name = "diffconv", version, about = "Differential-operator graph convolutions on point clouds")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Options shared by every subcommand.
#[derive(Debug, Clone, Args)]
pub struct Common {
    /// JSON config file; flags and --set override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Dotted-key override, e.g. `--set network.epochs=5`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", value_parser = config::parse_override, global = true)]
    set: Vec<(String, Value)>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Sample a labelled synthetic shape dataset as CSV clouds.
    GenData {
        /// Comma-separated shapes: sphere, cube, torus, cylinder, cone.
        #[arg(long)]
        classes: Option<String>,
        /// Clouds per class.
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        points: Option<usize>,
        #[arg(long)]
        noise: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        common: Common,
    },
    /// Print one differential term's stencil on a regular grid.
    Stencil {
        /// `NXxNY` or `NXxNYxNZ`.
        #[arg(long)]
        grid: Option<String>,
        #[arg(long)]
        h: Option<f64>,
        /// mass, gradx, grady, gradz, lapx, lapy or lapz.
        #[arg(long)]
        term: Option<String>,
        /// Vertex index; defaults to the grid centre.
        #[arg(long)]
        vertex: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Export the sparse operators of a cloud's k-NN graph.
    Assemble {
        #[arg(long)]
        cloud: Option<PathBuf>,
        #[arg(long)]
        k: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Build a pooling hierarchy and write its transfer operators.
    Pool {
        #[arg(long)]
        cloud: Option<PathBuf>,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        depth: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Train a classifier on a generated dataset.
    Train {
        #[arg(long)]
        train_data: Option<PathBuf>,
        #[arg(long)]
        test_data: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        common: Common,
    },
    /// Evaluate a checkpoint on a dataset.
    Eval {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// FLOP table and convolution latencies.
    Bench {
        /// Include the standard single-convolution comparison set.
        #[arg(long)]
        table1: bool,
        #[arg(long)]
        repetitions: Option<usize>,
        /// Skip timing.
        #[arg(long)]
        no_latency: bool,
        #[command(flatten)]
        common: Common,
    },
}

/// Flag overrides sit between the config file and `--set`.
fn flags(pairs: Vec<(&str, Option<Value>)>) -> Vec<(String, Value)> {
    pairs.into_iter().filter_map(|(k, v)| v.map(|v| (k.to_string(), v))).collect()
}

fn json<T: serde::Serialize>(v: Option<T>) -> Option<Value> {
    v.map(|v| serde_json::to_value(v).expect("flag serializes"))
}

fn run(cli: Cli) -> Result<(), CliError> {
    use commands as c;
    match cli.command {
        Command::GenData { classes, n, points, noise, seed, common } => c::gen_data(
            &common,
            flags(vec![
                ("classes", json(classes)),
                ("n", json(n)),
                ("points", json(points)),
                ("noise", json(noise)),
                ("seed", json(seed)),
            ]),
        ),
        Command::Stencil { grid, h, term, vertex, common } => c::stencil(
            &common,
            flags(vec![("grid", json(grid)), ("h", json(h)), ("term", json(term)), ("vertex", json(vertex))]),
        ),
        Command::Assemble { cloud, k, common } => {
            c::assemble(&common, flags(vec![("cloud", json(cloud)), ("k", json(k))]))
        }
        Command::Pool { cloud, k, depth, common } => {
            c::pool(&common, flags(vec![("cloud", json(cloud)), ("k", json(k)), ("depth", json(depth))]))
        }
        Command::Train { train_data, test_data, epochs, seed, common } => c::train(
            &common,
            flags(vec![
                ("train_data", json(train_data)),
                ("test_data", json(test_data)),
                ("network.epochs", json(epochs)),
                ("network.seed", json(seed)),
            ]),
        ),
        Command::Eval { checkpoint, data, common } => {
            c::eval(&common, flags(vec![("checkpoint", json(checkpoint)), ("data", json(data))]))
        }
        Command::Bench { table1, repetitions, no_latency, common } => c::bench(
            &common,
            flags(vec![
                ("table1", table1.then_some(Value::Bool(true))),
                ("repetitions", json(repetitions)),
                ("latency", no_latency.then_some(Value::Bool(false))),
            ]),
        ),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.msg);
            ExitCode::from(e.code)
        }
    }
}
