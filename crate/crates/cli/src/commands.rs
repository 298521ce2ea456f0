//! Command implementations, callable without going through argument parsing.

use std::collections::HashMap;
use std::io::BufRead;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::Serialize;
use viscomp_core::btrank::score_pipeline;
use viscomp_core::stats::{self, cv_evaluate, default_repetitions, ols_fit, permutation_test, sqrt_transform, FeatureMatrix, KsResult};
use viscomp_core::surprise::{
    CorpusEntry, CorpusOptions, CorpusOutcome, HttpProvider, ProviderConfig, StubProvider, SurprisePrompt, SurpriseScorer,
    SystemClock, VisionProvider,
};
use viscomp_core::{ComparisonRecord, EvalReport, PermTestResult, ScoreVector};
use viscomp_expserve::ExperimentConfig;

use crate::features::{extract, ExtractOptions, FeatureTable, Failures};
use crate::manifest::DatasetManifest;
use crate::CliError;

pub fn cmd_extract(manifest: &DatasetManifest, opts: &ExtractOptions) -> Result<(FeatureTable, Failures), CliError> {
    extract(manifest, opts)
}

/// Manifest rows joined with their feature rows, in manifest order.
pub struct Dataset<'a> {
    pub manifest: &'a DatasetManifest,
    pub features: &'a FeatureTable,
}

impl<'a> Dataset<'a> {
    pub fn new(manifest: &'a DatasetManifest, features: &'a FeatureTable) -> Result<Self, CliError> {
        let have: HashMap<&str, ()> = features.rows.iter().map(|r| (r.image_id.as_str(), ())).collect();
        let missing: Vec<&str> = manifest
            .rows
            .iter()
            .map(|r| r.image_id.as_str())
            .filter(|id| !have.contains_key(id))
            .collect();
        if !missing.is_empty() {
            return Err(CliError::Validation(format!("feature table has no rows for: {}", missing.join(", "))));
        }
        Ok(Self { manifest, features })
    }

    /// Resolves a model term to its values. `num_seg` and `num_class` (or
    /// their `sqrt_` spellings) are square-rooted; `muc` and `colorfulness`
    /// stand for the single extracted precision, or b=7 when several exist.
    pub fn column(&self, name: &str) -> Result<Vec<f64>, CliError> {
        if let Some(raw) = name.strip_prefix("sqrt_") {
            if raw == "num_seg" || raw == "num_class" {
                return self.column(raw);
            }
        }
        match name {
            "num_seg" | "num_class" => {
                let v = self.manifest.column(name)?;
                return sqrt_transform(&v).map_err(|e| CliError::Validation(format!("{name}: {e}")));
            }
            "complexity" | "surprise" => return self.manifest.column(name),
            _ => {}
        }
        let idx = self
            .feature_index(name)
            .ok_or_else(|| CliError::Validation(format!("missing column {name}")))?;
        Ok(self
            .manifest
            .rows
            .iter()
            .map(|r| self.features.row(&r.image_id).expect("joined in new").values[idx])
            .collect())
    }

    fn feature_index(&self, name: &str) -> Option<usize> {
        if let Some(i) = self.features.column_index(name) {
            return Some(i);
        }
        if name == "muc" || name == "colorfulness" {
            let prefix = format!("{name}_b");
            let matches: Vec<usize> = (0..self.features.columns.len())
                .filter(|&i| self.features.columns[i].starts_with(&prefix))
                .collect();
            return match matches.as_slice() {
                [only] => Some(*only),
                _ => self.features.column_index(&format!("{prefix}7")),
            };
        }
        None
    }

    fn known(&self, name: &str) -> bool {
        let base = name.strip_prefix("sqrt_").filter(|b| *b == "num_seg" || *b == "num_class").unwrap_or(name);
        matches!(base, "num_seg" | "num_class" | "complexity" | "surprise") || self.feature_index(base).is_some()
    }

    /// Design matrix for `model`, listing every unknown term at once.
    pub fn design(&self, model: &[String]) -> Result<FeatureMatrix, CliError> {
        if model.is_empty() {
            return Err(CliError::Validation("model names no columns".into()));
        }
        let unknown: Vec<&str> = model.iter().filter(|m| !self.known(m)).map(String::as_str).collect();
        if !unknown.is_empty() {
            return Err(CliError::Validation(format!("missing columns: {}", unknown.join(", "))));
        }
        let cols = model
            .iter()
            .map(|m| Ok((m.clone(), self.column(m)?)))
            .collect::<Result<Vec<_>, CliError>>()?;
        FeatureMatrix::from_columns(cols).map_err(|e| CliError::Validation(e.to_string()))
    }
}

pub fn parse_model(spec: &str) -> Vec<String> {
    spec.split(',').map(str::trim).filter(|s| !s.is_empty()).map(str::to_string).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalOutput {
    pub model: Vec<String>,
    pub target: String,
    pub report: EvalReport,
}

/// Repeated 3-fold CV of a linear model on `model` columns predicting
/// `target`. `reps` defaults to the dataset-size rule.
pub fn cmd_eval(
    data: &Dataset,
    model: &[String],
    target: &str,
    reps: Option<usize>,
    seed: u64,
) -> Result<EvalOutput, CliError> {
    let x = data.design(model)?;
    let y = data.column(target)?;
    let reps = reps.unwrap_or_else(|| default_repetitions(y.len()));
    let report = cv_evaluate(&x, &y, reps, seed).map_err(stats_error)?;
    Ok(EvalOutput {
        model: model.to_vec(),
        target: target.to_string(),
        report,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FitOutput {
    pub model: Vec<String>,
    pub target: String,
    pub n_rows: usize,
    pub coefficients: Vec<(String, f64)>,
    pub intercept: f64,
}

/// Ordinary least squares on the whole dataset.
pub fn cmd_fit(data: &Dataset, model: &[String], target: &str) -> Result<FitOutput, CliError> {
    let x = data.design(model)?;
    let y = data.column(target)?;
    let fit = ols_fit(&x, &y).map_err(stats_error)?;
    Ok(FitOutput {
        model: model.to_vec(),
        target: target.to_string(),
        n_rows: y.len(),
        coefficients: model.iter().cloned().zip(fit.coefficients).collect(),
        intercept: fit.intercept,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PermOutput {
    pub target: String,
    pub x: String,
    pub y: String,
    pub result: PermTestResult,
}

pub fn cmd_permtest(data: &Dataset, target: &str, x: &str, y: &str, n: usize, seed: u64) -> Result<PermOutput, CliError> {
    let c = data.column(target)?;
    let xv = data.column(x)?;
    let yv = data.column(y)?;
    let result = permutation_test(&c, &xv, &yv, n, seed).map_err(stats_error)?;
    Ok(PermOutput {
        target: target.into(),
        x: x.into(),
        y: y.into(),
        result,
    })
}

pub fn cmd_ks(a: &[f64], b: &[f64]) -> Result<KsResult, CliError> {
    stats::ks_test(a, b).map_err(stats_error)
}

fn stats_error(e: stats::StatsError) -> CliError {
    CliError::Validation(e.to_string())
}

/// Reads exported comparison records, one JSON object per line.
pub fn read_records(path: &Path) -> Result<Vec<ComparisonRecord>, CliError> {
    let file = std::fs::File::open(path).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: ComparisonRecord = serde_json::from_str(&line)
            .map_err(|e| CliError::Validation(format!("{}:{}: {e}", path.display(), i + 1)))?;
        rec.validate()
            .map_err(|e| CliError::Validation(format!("{}:{}: {e}", path.display(), i + 1)))?;
        out.push(rec);
    }
    Ok(out)
}

/// Bradley-Terry scores from comparison records; excluded sessions and
/// attention checks are ignored.
pub fn cmd_bt(records: &[ComparisonRecord]) -> Result<ScoreVector, CliError> {
    let kept: Vec<ComparisonRecord> = records.iter().filter(|r| !r.excluded).cloned().collect();
    score_pipeline(&kept).map_err(|e| CliError::Validation(e.to_string()))
}

pub fn scores_csv(scores: &ScoreVector) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["image_id", "score"]).expect("in-memory write");
    for (id, s) in &scores.scores {
        w.write_record([id.as_str(), &format!("{s:?}")]).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 input")
}

pub enum ProviderChoice {
    Stub,
    Http(ProviderConfig),
}

pub struct SurpriseOptions {
    pub provider: ProviderChoice,
    pub prompt_file: Option<PathBuf>,
    pub requests_per_minute: Option<u32>,
    pub jobs: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct SurpriseSummary {
    pub scored: usize,
    pub resumed: usize,
    pub failed: Vec<(String, String)>,
}

/// Rates every manifest image, appending results to `out` and skipping
/// images already rated there.
pub fn cmd_surprise(manifest: &DatasetManifest, out: &Path, opts: SurpriseOptions) -> Result<SurpriseSummary, CliError> {
    let provider: Box<dyn VisionProvider> = match opts.provider {
        ProviderChoice::Stub => Box::new(StubProvider),
        ProviderChoice::Http(cfg) => Box::new(HttpProvider::new(cfg).map_err(|e| CliError::Validation(e.to_string()))?),
    };
    let mut scorer = SurpriseScorer::new(provider, Arc::new(SystemClock::default()));
    if let Some(p) = &opts.prompt_file {
        scorer = scorer.with_prompt(SurprisePrompt::from_file(p).map_err(|e| CliError::Validation(e.to_string()))?);
    }
    let entries: Vec<CorpusEntry> = manifest
        .rows
        .iter()
        .map(|r| CorpusEntry {
            image_id: r.image_id.clone(),
            path: manifest.resolve(r),
        })
        .collect();
    let outcomes = scorer
        .score_corpus(
            &entries,
            out,
            CorpusOptions {
                requests_per_minute: opts.requests_per_minute,
                max_in_flight: opts.jobs.max(1),
            },
        )
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    let mut summary = SurpriseSummary::default();
    for o in outcomes {
        match o {
            CorpusOutcome::Scored(_) => summary.scored += 1,
            CorpusOutcome::Resumed(_) => summary.resumed += 1,
            CorpusOutcome::Failed { image_id, error } => summary.failed.push((image_id, error)),
        }
    }
    Ok(summary)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum ClockKind {
    /// Wall-clock timestamps.
    System,
    /// Timestamps derived from the log sequence number, for scripted runs.
    Logical,
}

pub fn cmd_serve(config: &Path, data_dir: &Path, addr: SocketAddr, clock: ClockKind) -> Result<(), CliError> {
    let cfg = ExperimentConfig::from_toml_file(config).map_err(|e| CliError::Validation(e.to_string()))?;
    let clock: Box<dyn viscomp_expserve::Clock> = match clock {
        ClockKind::System => Box::new(viscomp_expserve::SystemClock),
        ClockKind::Logical => Box::new(viscomp_expserve::LogicalClock::default()),
    };
    std::fs::create_dir_all(data_dir).map_err(|e| CliError::Runtime(format!("{}: {e}", data_dir.display())))?;
    viscomp_expserve::run(cfg, data_dir, addr, clock).map_err(|e| match e {
        viscomp_expserve::ExpError::Config(m) => CliError::Validation(m),
        other => CliError::Runtime(other.to_string()),
    })
}
