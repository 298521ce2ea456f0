//! Evaluation statistics: rank correlation, least squares, repeated k-fold
//! cross-validation, the two-feature permutation test and the two-sample
//! Kolmogorov-Smirnov test.
//!
//! All randomness comes from seeded ChaCha8 streams. Each CV repetition and
//! each permutation draws from its own stream (`set_stream(index)`), so
//! parallel and sequential execution produce identical reports.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("need at least {need} samples, got {got}")]
    TooFew { need: usize, got: usize },
    #[error("correlation undefined: input has fewer than two distinct values")]
    Degenerate,
    #[error("non-finite value at index {0}")]
    NotFinite(usize),
    #[error("negative value {value} at index {index}")]
    Negative { index: usize, value: f64 },
    #[error("design matrix is rank deficient")]
    SingularDesign,
    #[error("invalid feature matrix: {0}")]
    InvalidMatrix(String),
    #[error("empty sample")]
    Empty,
    #[error("no split produced a defined correlation")]
    NoValidSplits,
    #[error("{0}")]
    InvalidArgument(String),
}

pub type Result<T> = std::result::Result<T, StatsError>;

fn check_finite(x: &[f64]) -> Result<()> {
    match x.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(StatsError::NotFinite(i)),
        None => Ok(()),
    }
}

/// Fractional ranks starting at 1; tied values share their mean rank.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && x[order[j + 1]] == x[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = rank;
        }
        i = j + 1;
    }
    ranks
}

/// Pearson correlation; `None` when either side has zero variance.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(StatsError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 3 {
        return Err(StatsError::TooFew { need: 3, got: x.len() });
    }
    check_finite(x)?;
    check_finite(y)?;
    pearson(&average_ranks(x), &average_ranks(y)).ok_or(StatsError::Degenerate)
}

pub fn sqrt_transform(column: &[f64]) -> Result<Vec<f64>> {
    column
        .iter()
        .enumerate()
        .map(|(index, &value)| {
            if value.is_nan() || value < 0.0 {
                Err(StatsError::Negative { index, value })
            } else {
                Ok(value.sqrt())
            }
        })
        .collect()
}

/// Named real-valued columns, one row per image.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureMatrix {
    names: Vec<String>,
    rows: Vec<Vec<f64>>,
}

impl FeatureMatrix {
    pub fn new(names: Vec<String>, rows: Vec<Vec<f64>>) -> Result<Self> {
        let mut seen = std::collections::HashSet::new();
        for n in &names {
            if !seen.insert(n.as_str()) {
                return Err(StatsError::InvalidMatrix(format!("duplicate column {n}")));
            }
        }
        for (r, row) in rows.iter().enumerate() {
            if row.len() != names.len() {
                return Err(StatsError::InvalidMatrix(format!(
                    "row {r} has {} values for {} columns",
                    row.len(),
                    names.len()
                )));
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(StatsError::InvalidMatrix(format!("row {r} has a non-finite value")));
            }
        }
        Ok(Self { names, rows })
    }

    /// Builds from named columns of equal length.
    pub fn from_columns(columns: Vec<(String, Vec<f64>)>) -> Result<Self> {
        let n = columns.first().map_or(0, |c| c.1.len());
        if let Some((name, c)) = columns.iter().find(|c| c.1.len() != n) {
            return Err(StatsError::InvalidMatrix(format!(
                "column {name} has {} rows, expected {n}",
                c.len()
            )));
        }
        let names = columns.iter().map(|c| c.0.clone()).collect();
        let rows = (0..n).map(|i| columns.iter().map(|c| c.1[i]).collect()).collect();
        Self::new(names, rows)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn n_cols(&self) -> usize {
        self.names.len()
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let c = self.names.iter().position(|n| n == name)?;
        Some(self.rows.iter().map(|r| r[c]).collect())
    }

    fn select(&self, idx: &[usize]) -> Vec<&[f64]> {
        idx.iter().map(|&i| self.rows[i].as_slice()).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OlsFit {
    pub coefficients: Vec<f64>,
    pub intercept: f64,
}

impl OlsFit {
    pub fn predict(&self, row: &[f64]) -> f64 {
        self.intercept + self.coefficients.iter().zip(row).map(|(b, x)| b * x).sum::<f64>()
    }
}

/// Least squares with intercept. Columns are centered and solved by QR, so
/// a constant target yields exactly zero slopes.
pub fn ols_fit(x: &FeatureMatrix, y: &[f64]) -> Result<OlsFit> {
    let rows: Vec<&[f64]> = x.rows.iter().map(Vec::as_slice).collect();
    ols_fit_rows(&rows, x.n_cols(), y)
}

fn ols_fit_rows(rows: &[&[f64]], p: usize, y: &[f64]) -> Result<OlsFit> {
    let n = rows.len();
    if n != y.len() {
        return Err(StatsError::LengthMismatch(n, y.len()));
    }
    check_finite(y)?;
    if n < p + 2 {
        return Err(StatsError::TooFew { need: p + 2, got: n });
    }
    let y_mean = y.iter().sum::<f64>() / n as f64;
    if p == 0 {
        return Ok(OlsFit {
            coefficients: vec![],
            intercept: y_mean,
        });
    }
    let means: Vec<f64> = (0..p)
        .map(|c| rows.iter().map(|r| r[c]).sum::<f64>() / n as f64)
        .collect();
    let design = DMatrix::from_fn(n, p, |i, c| rows[i][c] - means[c]);
    let target = DVector::from_iterator(n, y.iter().map(|v| v - y_mean));

    let col_scale = (0..p)
        .map(|c| design.column(c).norm())
        .fold(0.0_f64, f64::max);
    let qr = design.qr();
    let r = qr.r();
    if col_scale == 0.0 || (0..p).any(|i| r[(i, i)].abs() <= 1e-10 * col_scale) {
        return Err(StatsError::SingularDesign);
    }
    let qty = qr.q().transpose() * target;
    let beta = r
        .solve_upper_triangular(&qty)
        .ok_or(StatsError::SingularDesign)?;
    let coefficients: Vec<f64> = beta.iter().copied().collect();
    let intercept = y_mean - coefficients.iter().zip(&means).map(|(b, m)| b * m).sum::<f64>();
    Ok(OlsFit {
        coefficients,
        intercept,
    })
}

/// Repetition count used when none is given: `clamp(round(1500 / n), 1, 50)`.
pub fn default_repetitions(n_rows: usize) -> usize {
    if n_rows == 0 {
        return 50;
    }
    ((1500.0 / n_rows as f64).round() as usize).clamp(1, 50)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitResult {
    pub repetition: usize,
    pub fold: usize,
    pub test_size: usize,
    /// `None` when the split was skipped; see `skipped_reason`.
    pub spearman: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub skipped_reason: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n_rows: usize,
    pub repetitions: usize,
    pub folds: usize,
    pub seed: u64,
    pub mean_spearman: f64,
    pub evaluated_splits: usize,
    pub skipped_splits: usize,
    pub per_split: Vec<SplitResult>,
}

impl EvalReport {
    pub fn split_values(&self) -> Vec<f64> {
        self.per_split.iter().filter_map(|s| s.spearman).collect()
    }
}

pub const CV_FOLDS: usize = 3;

/// Repeated 3-fold cross-validated linear regression scored by Spearman
/// correlation between held-out predictions and targets.
pub fn cv_evaluate(x: &FeatureMatrix, y: &[f64], repetitions: usize, seed: u64) -> Result<EvalReport> {
    let n = x.n_rows();
    if n != y.len() {
        return Err(StatsError::LengthMismatch(n, y.len()));
    }
    if n < 3 * CV_FOLDS {
        return Err(StatsError::TooFew { need: 3 * CV_FOLDS, got: n });
    }
    if repetitions == 0 {
        return Err(StatsError::InvalidArgument("repetitions must be at least 1".into()));
    }
    check_finite(y)?;

    let per_split: Vec<SplitResult> = (0..repetitions)
        .into_par_iter()
        .flat_map_iter(|rep| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(rep as u64);
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut rng);
            (0..CV_FOLDS)
                .map(|fold| evaluate_fold(x, y, &order, rep, fold))
                .collect::<Vec<_>>()
        })
        .collect();

    let values: Vec<f64> = per_split.iter().filter_map(|s| s.spearman).collect();
    if values.is_empty() {
        return Err(StatsError::NoValidSplits);
    }
    let mean_spearman = values.iter().sum::<f64>() / values.len() as f64;
    Ok(EvalReport {
        n_rows: n,
        repetitions,
        folds: CV_FOLDS,
        seed,
        mean_spearman,
        evaluated_splits: values.len(),
        skipped_splits: per_split.len() - values.len(),
        per_split,
    })
}

fn evaluate_fold(x: &FeatureMatrix, y: &[f64], order: &[usize], repetition: usize, fold: usize) -> SplitResult {
    let n = order.len();
    let (lo, hi) = (fold * n / CV_FOLDS, (fold + 1) * n / CV_FOLDS);
    let test = &order[lo..hi];
    let train: Vec<usize> = order[..lo].iter().chain(&order[hi..]).copied().collect();
    let train_y: Vec<f64> = train.iter().map(|&i| y[i]).collect();

    let outcome = ols_fit_rows(&x.select(&train), x.n_cols(), &train_y).and_then(|fit| {
        let pred: Vec<f64> = test.iter().map(|&i| fit.predict(&x.rows[i])).collect();
        let truth: Vec<f64> = test.iter().map(|&i| y[i]).collect();
        spearman(&pred, &truth)
    });
    let (spearman, skipped_reason) = match outcome {
        Ok(r) => (Some(r), None),
        Err(e) => (None, Some(e.to_string())),
    };
    SplitResult {
        repetition,
        fold,
        test_size: test.len(),
        spearman,
        skipped_reason,
    }
}

pub const DEFAULT_PERMUTATIONS: usize = 1000;
pub const SIGNIFICANCE_LEVEL: f64 = 0.05;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    X,
    Y,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PermTestResult {
    pub rho_x: f64,
    pub rho_y: f64,
    pub delta_obs: f64,
    pub n_perm: usize,
    pub exceed_count: usize,
    pub p_value: f64,
    pub seed: u64,
    /// Feature with the larger absolute correlation, set only when significant.
    pub winner: Option<Side>,
}

/// Tests whether `|rho(C, X)|` and `|rho(C, Y)|` differ by shuffling `C`.
///
/// `p = (#{|delta_perm| >= |delta_obs|} + 1) / (n + 1)`.
pub fn permutation_test(c: &[f64], x: &[f64], y: &[f64], n_perm: usize, seed: u64) -> Result<PermTestResult> {
    if c.len() != x.len() {
        return Err(StatsError::LengthMismatch(c.len(), x.len()));
    }
    if c.len() != y.len() {
        return Err(StatsError::LengthMismatch(c.len(), y.len()));
    }
    if n_perm == 0 {
        return Err(StatsError::InvalidArgument("need at least one permutation".into()));
    }
    let rho_x = spearman(c, x)?;
    let rho_y = spearman(c, y)?;
    let delta_obs = rho_x.abs() - rho_y.abs();

    // Shuffling C permutes its ranks, so ranks are computed once.
    let rc = average_ranks(c);
    let rx = average_ranks(x);
    let ry = average_ranks(y);
    let exceed_count = (0..n_perm)
        .into_par_iter()
        .filter(|&i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let mut shuffled = rc.clone();
            shuffled.shuffle(&mut rng);
            let dx = pearson(&shuffled, &rx).expect("nonconstant ranks");
            let dy = pearson(&shuffled, &ry).expect("nonconstant ranks");
            (dx.abs() - dy.abs()).abs() >= delta_obs.abs()
        })
        .count();

    let p_value = (exceed_count + 1) as f64 / (n_perm + 1) as f64;
    let winner = if p_value < SIGNIFICANCE_LEVEL && rho_x.abs() != rho_y.abs() {
        Some(if rho_x.abs() > rho_y.abs() { Side::X } else { Side::Y })
    } else {
        None
    };
    Ok(PermTestResult {
        rho_x,
        rho_y,
        delta_obs,
        n_perm,
        exceed_count,
        p_value,
        seed,
        winner,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KsResult {
    pub d: f64,
    pub p_value: f64,
}

/// Asymptotic Kolmogorov survival function `Q(lambda)`.
pub fn kolmogorov_q(lambda: f64) -> f64 {
    if lambda < 1e-3 {
        return 1.0;
    }
    let a = -2.0 * lambda * lambda;
    let mut sum = 0.0;
    let mut sign = 1.0;
    let mut prev_term = 0.0_f64;
    for j in 1..=100 {
        let term = sign * 2.0 * (a * (j * j) as f64).exp();
        sum += term;
        if term.abs() <= 1e-10 * prev_term.abs() || term.abs() <= 1e-16 * sum.abs() {
            return sum.clamp(0.0, 1.0);
        }
        sign = -sign;
        prev_term = term;
    }
    // Series failed to converge: lambda is tiny.
    1.0
}

/// Two-sample KS statistic with the asymptotic p-value
/// (effective size `sqrt(nm/(n+m))` with the usual small-sample correction).
pub fn ks_test(a: &[f64], b: &[f64]) -> Result<KsResult> {
    if a.is_empty() || b.is_empty() {
        return Err(StatsError::Empty);
    }
    check_finite(a)?;
    check_finite(b)?;
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < a.len() && j < b.len() {
        let t = a[i].min(b[j]);
        while i < a.len() && a[i] <= t {
            i += 1;
        }
        while j < b.len() && b[j] <= t {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    let en = (na * nb / (na + nb)).sqrt();
    let p_value = kolmogorov_q((en + 0.12 + 0.11 / en) * d);
    Ok(KsResult { d, p_value })
}
