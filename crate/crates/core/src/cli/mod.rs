//! The `prosolabel` command line.
//!
//! Every command resolves a [`RunConfig`] (file first, then flags), validates
//! it and every referenced path before doing any work, writes its artifacts
//! under the output directory and finishes with `run.json`. Exit status is 0
//! on success, 1 for validation errors and 2 for failures during the run.

mod commands;
mod config;

use std::ffi::OsString;
use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::corpus::Inventory;
use crate::features::{AcousticStream, LinguisticStream};
use crate::metrics::ZeroSupportPolicy;

pub use config::{
    ExtractConfig, GridConfig, Manifests, RunConfig, ScoreConfig, SynthSettings, CONFIG_VERSION,
};

pub const EXIT_OK: u8 = 0;
pub const EXIT_VALIDATION: u8 = 1;
pub const EXIT_RUNTIME: u8 = 2;

#[derive(Debug, Parser)]
#[command(name = "prosolabel", version, about = "Phoneme-level prosodic label annotation")]
pub struct Cli {
    /// Versioned JSON run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory for all artifacts.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Compute native acoustic streams from the audio in a manifest.
    Extract(ExtractArgs),
    /// Train an annotator and write its checkpoint and loss log.
    Train(TrainArgs),
    /// Label a manifest with a trained checkpoint.
    Annotate(AnnotateArgs),
    /// Score a hypothesis manifest against a reference manifest.
    Score(ScoreArgs),
    /// Write the learned layer weights of a checkpoint.
    Weights(WeightsArgs),
    /// Generate a seeded synthetic corpus with a planted signal layer.
    Synth(SynthArgs),
    /// Train and score every stream combination of a grid.
    Grid(GridArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Extract(_) => "extract",
            Command::Train(_) => "train",
            Command::Annotate(_) => "annotate",
            Command::Score(_) => "score",
            Command::Weights(_) => "weights",
            Command::Synth(_) => "synth",
            Command::Grid(_) => "grid",
        }
    }
}

#[derive(Debug, Args)]
pub struct ExtractArgs {
    /// Input manifest; defaults to the configured train manifest.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Stream to compute (`melspec` or `f0`); repeatable.
    #[arg(long = "stream")]
    pub streams: Vec<String>,
}

#[derive(Debug, Default, Args)]
pub struct TrainOverrides {
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub max_steps: Option<u64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub eval_every: Option<u64>,
    #[arg(long)]
    pub patience: Option<u64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub train: Option<PathBuf>,
    #[arg(long)]
    pub dev: Option<PathBuf>,
    #[arg(long)]
    pub acoustic: Option<AcousticStream>,
    #[arg(long)]
    pub linguistic: Option<LinguisticStream>,
    #[command(flatten)]
    pub overrides: TrainOverrides,
}

#[derive(Debug, Args)]
pub struct AnnotateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Manifest to label; defaults to the configured eval manifest.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    /// Labeled reference manifest; defaults to the configured eval manifest.
    #[arg(long = "ref")]
    pub reference: Option<PathBuf>,
    #[arg(long = "hyp")]
    pub hypothesis: PathBuf,
    #[arg(long, value_parser = parse_policy)]
    pub zero_support: Option<ZeroSupportPolicy>,
}

#[derive(Debug, Args)]
pub struct WeightsArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub train_utts: Option<usize>,
    #[arg(long)]
    pub dev_utts: Option<usize>,
    #[arg(long)]
    pub eval_utts: Option<usize>,
    /// Per-frame noise standard deviation.
    #[arg(long)]
    pub noise: Option<f64>,
    #[arg(long)]
    pub amplitude: Option<f64>,
    /// Also render audio whose pitch follows the HL labels.
    #[arg(long)]
    pub audio: bool,
}

#[derive(Debug, Args)]
pub struct GridArgs {
    #[arg(long)]
    pub train: Option<PathBuf>,
    #[arg(long)]
    pub dev: Option<PathBuf>,
    #[arg(long)]
    pub eval: Option<PathBuf>,
    /// Comma-separated acoustic streams.
    #[arg(long, value_delimiter = ',')]
    pub acoustic: Vec<AcousticStream>,
    /// Comma-separated linguistic streams.
    #[arg(long, value_delimiter = ',')]
    pub linguistic: Vec<LinguisticStream>,
    #[command(flatten)]
    pub overrides: TrainOverrides,
}

fn parse_policy(s: &str) -> Result<ZeroSupportPolicy, String> {
    match s {
        "zero" => Ok(ZeroSupportPolicy::Zero),
        "exclude" => Ok(ZeroSupportPolicy::Exclude),
        other => Err(format!("expected `zero` or `exclude`, got {other:?}")),
    }
}

/// Failure classes that map onto exit codes.
#[derive(Debug)]
pub enum CliError {
    Validation(anyhow::Error),
    Runtime(anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Validation(_) => EXIT_VALIDATION,
            CliError::Runtime(_) => EXIT_RUNTIME,
        }
    }

    fn status(&self) -> &'static str {
        match self {
            CliError::Validation(_) => "validation_error",
            CliError::Runtime(_) => "runtime_error",
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Validation(e) => write!(f, "validation error: {e:#}"),
            CliError::Runtime(e) => write!(f, "runtime error: {e:#}"),
        }
    }
}

pub(crate) trait ResultExt<T> {
    fn invalid(self) -> Result<T, CliError>;
    fn runtime(self) -> Result<T, CliError>;
}

impl<T, E: Into<anyhow::Error>> ResultExt<T> for Result<T, E> {
    fn invalid(self) -> Result<T, CliError> {
        self.map_err(|e| CliError::Validation(e.into()))
    }

    fn runtime(self) -> Result<T, CliError> {
        self.map_err(|e| CliError::Runtime(e.into()))
    }
}

pub(crate) fn invalid(msg: impl fmt::Display) -> CliError {
    CliError::Validation(anyhow::anyhow!("{msg}"))
}

pub(crate) fn runtime(msg: impl fmt::Display) -> CliError {
    CliError::Runtime(anyhow::anyhow!("{msg}"))
}

/// State shared by a single command invocation.
pub struct Context {
    pub config: RunConfig,
    pub out: PathBuf,
    pub inventory: Inventory,
    artifacts: Vec<PathBuf>,
    summary: serde_json::Value,
}

impl Context {
    pub(crate) fn record(&mut self, path: impl Into<PathBuf>) {
        self.artifacts.push(path.into());
    }

    pub(crate) fn set_summary(&mut self, value: impl Serialize) {
        self.summary = serde_json::to_value(value).expect("summary serializes");
    }
}

#[derive(Serialize)]
struct RunRecord<'a> {
    tool: &'static str,
    version: &'static str,
    command: &'a str,
    args: Vec<String>,
    status: &'a str,
    /// True when the run stopped early and the listed artifacts may be
    /// incomplete.
    partial: bool,
    error: Option<String>,
    config: &'a RunConfig,
    artifacts: Vec<String>,
    summary: &'a serde_json::Value,
}

fn write_run_record(
    ctx: &Context,
    command: &str,
    args: &[OsString],
    outcome: &Result<(), CliError>,
) -> std::io::Result<PathBuf> {
    let artifacts = ctx
        .artifacts
        .iter()
        .map(|p| p.strip_prefix(&ctx.out).unwrap_or(p).display().to_string())
        .collect();
    let rec = RunRecord {
        tool: "prosolabel",
        version: env!("CARGO_PKG_VERSION"),
        command,
        args: args.iter().map(|a| a.to_string_lossy().into_owned()).collect(),
        status: outcome.as_ref().err().map_or("ok", |e| e.status()),
        partial: matches!(outcome, Err(CliError::Runtime(_))),
        error: outcome.as_ref().err().map(|e| e.to_string()),
        config: &ctx.config,
        artifacts,
        summary: &ctx.summary,
    };
    std::fs::create_dir_all(&ctx.out)?;
    let path = ctx.out.join("run.json");
    std::fs::write(&path, serde_json::to_string_pretty(&rec).expect("record serializes") + "\n")?;
    Ok(path)
}

/// Config file, then global flags, then validation of the pieces every
/// command shares.
fn resolve_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path).map_err(invalid)?,
        None => RunConfig::default(),
    };
    if cli.seed.is_some() {
        cfg.seed = cli.seed;
    }
    if cli.out.is_some() {
        cfg.out = cli.out.clone();
    }
    cfg.apply_seed();
    cfg.model.validate().invalid()?;
    Ok(cfg)
}

pub(crate) fn require_file(path: &Path, what: &str) -> Result<(), CliError> {
    if path.is_file() {
        Ok(())
    } else {
        Err(invalid(format!("{what} {} does not exist", path.display())))
    }
}

fn build_context(cli: &Cli) -> Result<Context, CliError> {
    let config = resolve_config(cli)?;
    let out = config
        .out
        .clone()
        .ok_or_else(|| invalid("no output directory: pass --out or set `out` in the config"))?;
    let inventory = match &config.inventory {
        Some(path) => {
            require_file(path, "inventory")?;
            Inventory::from_json_file(path).invalid()?
        }
        None => Inventory::default(),
    };
    Ok(Context {
        config,
        out,
        inventory,
        artifacts: Vec::new(),
        summary: serde_json::Value::Null,
    })
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_VALIDATION)
            } else {
                ExitCode::from(EXIT_OK)
            };
        }
    };
    let command = cli.command.name();
    let mut ctx = match build_context(&cli) {
        Ok(ctx) => ctx,
        Err(e) => {
            eprintln!("prosolabel {command}: {e}");
            return ExitCode::from(e.exit_code());
        }
    };
    let outcome = commands::dispatch(&cli.command, &mut ctx);
    let record = write_run_record(&ctx, command, &args[1..], &outcome);
    match (outcome, record) {
        (Ok(()), Ok(_)) => ExitCode::from(EXIT_OK),
        (Ok(()), Err(e)) => {
            eprintln!("prosolabel {command}: cannot write run.json: {e}");
            ExitCode::from(EXIT_RUNTIME)
        }
        (Err(e), _) => {
            eprintln!("prosolabel {command}: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

pub fn main() -> ExitCode {
    run(std::env::args_os())
}
