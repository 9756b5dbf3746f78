//! Command-line driver: `synth`, `pretrain`, `finetune`, `evaluate`,
//! `ablate` and `search`, each writing into its own run directory.
//!
//! Exit codes: 0 success, 2 usage, 3 invalid configuration or occupied
//! output directory, 4 runtime failure.

pub mod commands;
pub mod config;
pub mod rundir;

use std::ffi::OsString;
use std::fmt;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use config::RunConfig;
use rundir::RunDir;

pub const EXIT_USAGE: i32 = 2;
pub const EXIT_INVALID: i32 = 3;
pub const EXIT_RUNTIME: i32 = 4;

#[derive(Debug)]
pub enum CliError {
    Usage(clap::Error),
    Invalid(cpc_core::Error),
    Runtime(cpc_core::Error),
    Context(String, Box<CliError>),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Invalid(_) => EXIT_INVALID,
            CliError::Runtime(_) => EXIT_RUNTIME,
            CliError::Context(_, inner) => inner.exit_code(),
        }
    }

    pub fn context(self, what: &str) -> CliError {
        CliError::Context(what.to_string(), Box::new(self))
    }

    /// Back to a library error, for callbacks the library invokes.
    pub fn into_core(self) -> cpc_core::Error {
        match self {
            CliError::Invalid(e) | CliError::Runtime(e) => e,
            CliError::Usage(e) => cpc_core::Error::Config(e.to_string()),
            CliError::Context(what, inner) => match inner.into_core() {
                cpc_core::Error::Config(m) => cpc_core::Error::Config(format!("{what}: {m}")),
                e => e,
            },
        }
    }
}

impl From<cpc_core::Error> for CliError {
    fn from(e: cpc_core::Error) -> Self {
        match e {
            cpc_core::Error::Config(_) | cpc_core::Error::Validation { .. } => CliError::Invalid(e),
            e => CliError::Runtime(e),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(e) => write!(f, "{e}"),
            CliError::Invalid(e) | CliError::Runtime(e) => write!(f, "{e}"),
            CliError::Context(what, inner) => write!(f, "{what}: {inner}"),
        }
    }
}

impl std::error::Error for CliError {}

#[derive(Debug, Parser)]
#[command(name = "cpc-har", version, about = "Contrastive predictive coding for wearable accelerometer data")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

/// Flags shared by every subcommand.
#[derive(Debug, Clone, Args)]
pub struct Common {
    /// TOML file layered over the defaults
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override one dotted config key, e.g. `cpc.horizon=10`; repeatable
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Run directory; created if missing
    #[arg(long)]
    pub out: PathBuf,
    /// Replaces the `seed` config key
    #[arg(long)]
    pub seed: Option<u64>,
    /// Allow writing into a non-empty run directory
    #[arg(long)]
    pub force: bool,
    /// Threads for the cross-validation jobs
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    pub workers: u64,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Generate labelled synthetic recordings
    Synth {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        subjects: Option<usize>,
        #[arg(long)]
        classes: Option<usize>,
        /// Sample rate in Hz
        #[arg(long)]
        rate: Option<f64>,
        /// Seconds per subject
        #[arg(long)]
        duration: Option<f64>,
    },
    /// Pretrain a backbone on a recordings CSV
    Pretrain {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
    },
    /// Train one classifier on fold 0 of the target data
    Finetune {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        /// Run directory of a `pretrain` run
        #[arg(long)]
        backbone: PathBuf,
    },
    /// Cross-validated linear or MLP probe on a frozen backbone
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        /// Run directory of a `pretrain` run
        #[arg(long)]
        backbone: PathBuf,
        /// Probe a freshly initialised backbone of the same architecture
        #[arg(long)]
        random_init: bool,
    },
    /// Pretrain and evaluate the five component combinations
    Ablate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
    },
    /// Random search over the pretraining and classifier grids
    Search {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Synth { .. } => "synth",
            Command::Pretrain { .. } => "pretrain",
            Command::Finetune { .. } => "finetune",
            Command::Evaluate { .. } => "evaluate",
            Command::Ablate { .. } => "ablate",
            Command::Search { .. } => "search",
        }
    }

    pub fn common(&self) -> &Common {
        match self {
            Command::Synth { common, .. }
            | Command::Pretrain { common, .. }
            | Command::Finetune { common, .. }
            | Command::Evaluate { common, .. }
            | Command::Ablate { common, .. }
            | Command::Search { common, .. } => common,
        }
    }
}

/// A parsed command with its fully resolved configuration.
#[derive(Debug)]
pub struct RunSpec {
    pub command: Command,
    pub config: RunConfig,
}

/// Parses `argv` (program name first) and resolves the configuration. Flag
/// values such as `--seed` and the `synth` sizes are applied as overrides
/// after any `--set`.
pub fn parse_and_validate<I, T>(argv: I) -> Result<RunSpec, CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = Cli::try_parse_from(argv).map_err(CliError::Usage)?;
    let common = cli.command.common();
    let mut overrides = common.overrides.clone();
    if let Some(seed) = common.seed {
        overrides.push(format!("seed={seed}"));
    }
    if let Command::Synth {
        subjects,
        classes,
        rate,
        duration,
        ..
    } = &cli.command
    {
        let flags = [
            ("synth.subjects", subjects.map(|v| v.to_string())),
            ("synth.classes", classes.map(|v| v.to_string())),
            ("synth.rate_hz", rate.map(|v| format!("{v:?}"))),
            ("synth.duration_s", duration.map(|v| format!("{v:?}"))),
        ];
        overrides.extend(flags.into_iter().filter_map(|(k, v)| v.map(|v| format!("{k}={v}"))));
    }
    let config = RunConfig::resolve(common.config.as_deref(), &overrides)?;
    Ok(RunSpec {
        command: cli.command,
        config,
    })
}

pub fn execute(spec: &RunSpec) -> Result<(), CliError> {
    let common = spec.command.common();
    let dir = RunDir::create(&common.out, common.force)?;
    let workers = common.workers as usize;
    let config = &spec.config;
    match &spec.command {
        Command::Synth { .. } => commands::synth(config, &dir),
        Command::Pretrain { data, .. } => commands::pretrain_cmd(config, data, &dir),
        Command::Finetune { data, backbone, .. } => commands::finetune_cmd(config, data, backbone, &dir),
        Command::Evaluate {
            data,
            backbone,
            random_init,
            ..
        } => commands::evaluate_cmd(config, data, backbone, *random_init, workers, &dir),
        Command::Ablate { data, .. } => commands::ablate_cmd(config, data, workers, &dir),
        Command::Search { data, .. } => commands::search_cmd(config, data, workers, &dir),
    }
}

/// Runs the command line and returns the process exit code. Errors are
/// reported on standard error.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let spec = match parse_and_validate(argv) {
        Ok(spec) => spec,
        Err(CliError::Usage(e)) => {
            // --help and --version also arrive here
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { 0 };
        }
        Err(e) => {
            eprintln!("error: {e}");
            return e.exit_code();
        }
    };
    match execute(&spec) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}: {e}", spec.command.name());
            e.exit_code()
        }
    }
}
