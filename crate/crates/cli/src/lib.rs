//! `viscomp` command line.
//!
//! Exit codes: 0 on success, 2 for invalid input or arguments, 1 for
//! runtime failures.

pub mod commands;
pub mod features;
pub mod manifest;

use std::ffi::OsString;
use std::io::Write;
use std::net::{IpAddr, SocketAddr};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use thiserror::Error;
use viscomp_core::surprise::{ProviderConfig, DEFAULT_API_KEY_ENV};
use viscomp_core::{BitPrecision, ScaleSchedule};

use commands::*;
use features::{BaselineOptions, ExtractOptions, FeatureTable};
use manifest::{read_numeric_column, DatasetManifest};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "viscomp", version, about = "Visual complexity features, evaluation and rating experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Compute MSG, MUC and optional baseline features for a manifest.
    Extract(ExtractArgs),
    /// Cross-validated linear model scored by Spearman correlation.
    Eval(EvalArgs),
    /// Least-squares fit on the full dataset.
    Fit(FitArgs),
    /// Permutation test for the difference of two feature correlations.
    Permtest(PermArgs),
    /// Two-sample Kolmogorov-Smirnov test on one column of two tables.
    Ks(KsArgs),
    /// Bradley-Terry scores from exported comparisons.
    Bt(BtArgs),
    /// Surprise ratings from a vision model.
    Surprise(SurpriseArgs),
    /// Run the pairwise rating service.
    Serve(ServeArgs),
}

#[derive(Args, Debug)]
pub struct ExtractArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Output CSV; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "7")]
    pub bits: Vec<u8>,
    #[arg(long, value_delimiter = ',', default_value = "1,2,4,8")]
    pub scales: Vec<u32>,
    #[arg(long, value_delimiter = ',', default_value = "0.4,0.3,0.2,0.1")]
    pub weights: Vec<f64>,
    /// Also compute Canny edge density and patch symmetry.
    #[arg(long)]
    pub with_baselines: bool,
    #[arg(long, default_value_t = 1.4)]
    pub canny_sigma: f64,
    #[arg(long, default_value_t = 0.1)]
    pub canny_low: f64,
    #[arg(long, default_value_t = 0.2)]
    pub canny_high: f64,
    #[arg(long, default_value_t = 16)]
    pub patch: usize,
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    /// Leave undecodable images out instead of failing.
    #[arg(long)]
    pub skip_bad: bool,
}

#[derive(Args, Debug)]
pub struct DataArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub features: PathBuf,
    #[arg(long, default_value = "complexity")]
    pub target: String,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Comma-separated columns, e.g. `msg,muc,num_seg,num_class,surprise`.
    #[arg(long)]
    pub model: String,
    /// Repetitions of 3-fold CV; defaults to clamp(round(1500 / rows), 1, 50).
    #[arg(long)]
    pub reps: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct FitArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub model: String,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct PermArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub x: String,
    #[arg(long)]
    pub y: String,
    /// Number of permutations.
    #[arg(long, default_value_t = 1000)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct KsArgs {
    /// CSV with a header row.
    #[arg(long)]
    pub a: PathBuf,
    #[arg(long)]
    pub b: PathBuf,
    #[arg(long)]
    pub column: String,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct BtArgs {
    /// Comparison records, one JSON object per line.
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum ProviderKind {
    /// Offline deterministic ratings.
    Stub,
    /// JSON-over-HTTP vision model.
    Http,
}

#[derive(Args, Debug)]
pub struct SurpriseArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Results log; existing entries are kept and skipped.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = ProviderKind::Stub)]
    pub provider: ProviderKind,
    #[arg(long)]
    pub endpoint: Option<String>,
    #[arg(long)]
    pub model_name: Option<String>,
    /// Environment variable holding the API key.
    #[arg(long, default_value = DEFAULT_API_KEY_ENV)]
    pub api_key_env: String,
    /// Replacement prompt text.
    #[arg(long)]
    pub prompt_file: Option<PathBuf>,
    #[arg(long)]
    pub rpm: Option<u32>,
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    #[arg(long, default_value_t = 60)]
    pub timeout_secs: u64,
    #[arg(long, default_value_t = 3)]
    pub max_retries: usize,
}

#[derive(Args, Debug)]
pub struct ServeArgs {
    /// Experiment definition (TOML).
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub data_dir: PathBuf,
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: IpAddr,
    #[arg(long, value_enum, default_value_t = ClockKind::System)]
    pub clock: ClockKind,
}

fn write_output(out: Option<&Path>, text: &str) -> Result<(), CliError> {
    match out {
        Some(p) => std::fs::write(p, text).map_err(|e| CliError::Runtime(format!("{}: {e}", p.display()))),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout
                .write_all(text.as_bytes())
                .and_then(|_| stdout.flush())
                .map_err(|e| CliError::Runtime(format!("stdout: {e}")))
        }
    }
}

fn json<T: serde::Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("report serializes") + "\n"
}

impl ExtractArgs {
    pub fn options(&self) -> Result<ExtractOptions, CliError> {
        let bits = self
            .bits
            .iter()
            .map(|&b| BitPrecision::new(b).map_err(|e| CliError::Validation(e.to_string())))
            .collect::<Result<Vec<_>, _>>()?;
        let schedule = ScaleSchedule::new(self.scales.clone(), self.weights.clone())
            .map_err(|e| CliError::Validation(e.to_string()))?;
        let baselines = self.with_baselines.then_some(BaselineOptions {
            canny: viscomp_core::baselines::CannyParams {
                sigma: self.canny_sigma,
                low: self.canny_low,
                high: self.canny_high,
            },
            patch: self.patch,
        });
        Ok(ExtractOptions {
            bits,
            schedule,
            baselines,
            jobs: self.jobs,
            skip_bad: self.skip_bad,
        })
    }
}

fn load_data(args: &DataArgs) -> Result<(DatasetManifest, FeatureTable), CliError> {
    Ok((DatasetManifest::load(&args.manifest)?, FeatureTable::load(&args.features)?))
}

pub fn execute(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Extract(a) => {
            let opts = a.options()?;
            let manifest = DatasetManifest::load(&a.manifest)?;
            let (table, failures) = cmd_extract(&manifest, &opts)?;
            for (id, e) in &failures {
                eprintln!("skipped {id}: {e}");
            }
            write_output(a.out.as_deref(), &table.to_csv())
        }
        Command::Eval(a) => {
            let (m, f) = load_data(&a.data)?;
            let out = cmd_eval(&Dataset::new(&m, &f)?, &parse_model(&a.model), &a.data.target, a.reps, a.seed)?;
            eprintln!(
                "mean spearman {:.4} over {} splits ({} skipped)",
                out.report.mean_spearman, out.report.evaluated_splits, out.report.skipped_splits
            );
            write_output(a.out.as_deref(), &json(&out))
        }
        Command::Fit(a) => {
            let (m, f) = load_data(&a.data)?;
            let out = cmd_fit(&Dataset::new(&m, &f)?, &parse_model(&a.model), &a.data.target)?;
            write_output(a.out.as_deref(), &json(&out))
        }
        Command::Permtest(a) => {
            let (m, f) = load_data(&a.data)?;
            let out = cmd_permtest(&Dataset::new(&m, &f)?, &a.data.target, &a.x, &a.y, a.n, a.seed)?;
            write_output(a.out.as_deref(), &json(&out))
        }
        Command::Ks(a) => {
            let xa = read_numeric_column(&a.a, &a.column)?;
            let xb = read_numeric_column(&a.b, &a.column)?;
            write_output(a.out.as_deref(), &json(&cmd_ks(&xa, &xb)?))
        }
        Command::Bt(a) => {
            let records = read_records(&a.input)?;
            write_output(a.out.as_deref(), &scores_csv(&cmd_bt(&records)?))
        }
        Command::Surprise(a) => {
            let manifest = DatasetManifest::load(&a.manifest)?;
            let provider = match a.provider {
                ProviderKind::Stub => ProviderChoice::Stub,
                ProviderKind::Http => {
                    let endpoint = a
                        .endpoint
                        .clone()
                        .ok_or_else(|| CliError::Validation("--endpoint is required with --provider http".into()))?;
                    let cfg = ProviderConfig {
                        endpoint,
                        model_name: a.model_name.clone().unwrap_or_default(),
                        timeout: std::time::Duration::from_secs(a.timeout_secs),
                        max_retries: a.max_retries,
                        ..ProviderConfig::default()
                    }
                    .with_key_from_env(&a.api_key_env);
                    ProviderChoice::Http(cfg)
                }
            };
            let summary = cmd_surprise(
                &manifest,
                &a.out,
                SurpriseOptions {
                    provider,
                    prompt_file: a.prompt_file.clone(),
                    requests_per_minute: a.rpm,
                    jobs: a.jobs,
                },
            )?;
            eprintln!(
                "scored {}, already present {}, failed {}",
                summary.scored,
                summary.resumed,
                summary.failed.len()
            );
            for (id, e) in &summary.failed {
                eprintln!("  {id}: {e}");
            }
            if summary.failed.is_empty() {
                Ok(())
            } else {
                Err(CliError::Runtime(format!(
                    "{} image(s) failed; rerun to retry them",
                    summary.failed.len()
                )))
            }
        }
        Command::Serve(a) => cmd_serve(&a.config, &a.data_dir, SocketAddr::new(a.host, a.port), a.clock),
    }
}

/// Parses `args` (program name first) and runs the command, returning the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
