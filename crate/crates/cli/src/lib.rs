//! Command-line front end: one subcommand per experiment stage, flat
//! key=value configs, atomic outputs with a hashed manifest.

mod commands;
pub mod dataset;
pub mod output;
pub mod settings;

use std::path::PathBuf;

use clap::{Parser, ValueEnum};

use sleepnet::commgraph::GraphError;
use sleepnet::config::{ConfigError, KvConfig};
use sleepnet::data::DataError;
use sleepnet::eval::EvalError;
use sleepnet::robustness::RobustnessError;

pub use settings::Settings;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Command {
    Synth,
    Graphs,
    Train,
    Evaluate,
    Sweep,
    Robustness,
    Saliency,
    Ablate,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Synth => "synth",
            Command::Graphs => "graphs",
            Command::Train => "train",
            Command::Evaluate => "evaluate",
            Command::Sweep => "sweep",
            Command::Robustness => "robustness",
            Command::Saliency => "saliency",
            Command::Ablate => "ablate",
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "sleepnet", version, about = "Graph-temporal next-day sleep prediction experiments")]
pub struct Cli {
    #[arg(value_enum)]
    pub command: Command,
    /// key = value config file; absent keys take defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides the config's `seed`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Write into a non-empty output directory.
    #[arg(long)]
    pub force: bool,
    /// Worker threads for trial loops (default: all cores).
    #[arg(long)]
    pub jobs: Option<usize>,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Usage(String),
    #[error("data: {0}")]
    Data(String),
    #[error("run failed: {0}")]
    Run(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Usage(_) => 2,
            CliError::Data(_) => 3,
            CliError::Run(_) | CliError::Io(_) => 1,
        }
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        match e {
            DataError::Config(msg) => CliError::Usage(format!("synthetic config: {msg}")),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<GraphError> for CliError {
    fn from(e: GraphError) -> Self {
        match e {
            GraphError::BadWindow(..) | GraphError::BadSmsWeights(..) => CliError::Usage(e.to_string()),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Data(d) => d.into(),
            EvalError::Config(msg) => CliError::Usage(msg),
            EvalError::Split(msg) => CliError::Data(format!("split: {msg}")),
            other => CliError::Run(other.to_string()),
        }
    }
}

impl From<RobustnessError> for CliError {
    fn from(e: RobustnessError) -> Self {
        match e {
            RobustnessError::Eval(e) => e.into(),
            RobustnessError::Plan(msg) => CliError::Usage(msg),
            other => CliError::Data(other.to_string()),
        }
    }
}

/// Parse `args` and run; returns the process exit code.
pub fn run<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(cli: &Cli) -> Result<(), CliError> {
    let kv = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
            KvConfig::parse(&text)?
        }
        None => KvConfig::default(),
    };
    let settings = Settings::resolve(cli.command, &kv, cli.seed)?;
    if cli.jobs == Some(0) {
        return Err(CliError::Usage("--jobs must be positive".into()));
    }
    let mut out = output::OutputDir::create(&cli.out, cli.force)?;
    let mut job = || commands::dispatch(&settings, &mut out);
    match cli.jobs {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| CliError::Run(e.to_string()))?
            .install(job)?,
        None => job()?,
    }
    out.write("config.txt", settings.echo().to_text().as_bytes())?;
    out.finish(cli.command, settings.seed)?;
    Ok(())
}
