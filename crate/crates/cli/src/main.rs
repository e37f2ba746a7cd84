//! `sc-harmon`: batch pipelines for structural connectivity harmonization.

mod commands;
mod error;

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::error::{usage, CliError};

#[derive(Parser, Debug)]
#[command(name = "sc-harmon", version, about = "Structural connectivity harmonization pipelines")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate a multi-site cohort with a known site effect.
    Generate(GenerateArgs),
    /// Add mixup-augmented subjects for one site.
    Augment(AugmentArgs),
    /// Nodal graph metrics for every record.
    Metrics(MetricsArgs),
    /// Fit the per-edge linear site model.
    FitLr(FitLrArgs),
    /// Train a deep harmonizer.
    Train(TrainArgs),
    /// Map records of one site to a target site.
    Harmonize(HarmonizeArgs),
    /// Compare harmonized matrices with target-site acquisitions.
    Evaluate(EvaluateArgs),
    /// Dump encoder embeddings.
    ExportEmbeddings(ExportArgs),
}

#[derive(Args, Debug)]
pub struct GenerateArgs {
    #[arg(long, default_value_t = 32)]
    pub nodes: usize,
    #[arg(long, default_value_t = 64)]
    pub subjects: usize,
    /// JSON array of `{site_index, b_value, resolution}`; defaults to the four
    /// standard protocols.
    #[arg(long)]
    pub sites_file: Option<PathBuf>,
    /// Site-effect JSON (per-edge arrays or `*_const` scalars).
    #[arg(long)]
    pub effect_file: Option<PathBuf>,
    #[arg(long, default_value_t = 0.6)]
    pub density: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Args, Debug)]
pub struct AugmentArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub site: usize,
    #[arg(long)]
    pub count: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Also write graph-metric summaries of both populations.
    #[arg(long)]
    pub report: bool,
}

#[derive(Args, Debug)]
pub struct MetricsArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct FitLrArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Arch {
    Fae,
    Gae,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, value_enum)]
    pub arch: Arch,
    /// Partial architecture JSON; absent fields keep the defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 200)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Method {
    Lr,
    Fae,
    Gae,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Train,
    Val,
    Test,
    All,
}

#[derive(Args, Debug)]
pub struct HarmonizeArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, value_enum)]
    pub method: Method,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub target_site: usize,
    /// Site whose records are harmonized (default: lowest quality).
    #[arg(long)]
    pub source_site: Option<usize>,
    /// Records to harmonize (default: test when the manifest has splits).
    #[arg(long, value_enum)]
    pub split: Option<SplitArg>,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub pred_manifest: PathBuf,
    #[arg(long)]
    pub target_manifest: PathBuf,
    #[arg(long)]
    pub retest_manifest: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Row label of the harmonized method (default: prediction file stem).
    #[arg(long)]
    pub label: Option<String>,
    /// Also write min-max normalized scores next to the report.
    #[arg(long)]
    pub normalized: bool,
}

#[derive(Args, Debug)]
pub struct ExportArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Include the full per-node GAE embedding.
    #[arg(long)]
    pub full: bool,
}

fn init_logging() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format(|buf, record| {
            writeln!(
                buf,
                "level={} target={} msg={:?}",
                record.level(),
                record.target(),
                record.args().to_string()
            )
        })
        .target(env_logger::Target::Stderr)
        .init();
}

fn init_threads() -> Result<(), CliError> {
    let Ok(raw) = std::env::var("SC_HARMON_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| usage(format!("SC_HARMON_THREADS must be a positive integer, got '{raw}'")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| usage(format!("thread pool: {e}")))
}

fn run(cli: Cli) -> Result<(), CliError> {
    init_threads()?;
    match cli.command {
        Command::Generate(a) => commands::generate(&a),
        Command::Augment(a) => commands::augment(&a),
        Command::Metrics(a) => commands::metrics(&a),
        Command::FitLr(a) => commands::fit_lr(&a),
        Command::Train(a) => commands::train(&a),
        Command::Harmonize(a) => commands::harmonize(&a),
        Command::Evaluate(a) => commands::evaluate(&a),
        Command::ExportEmbeddings(a) => commands::export_embeddings(&a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    init_logging();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
