//! Bradley-Terry scoring of pairwise judgments.
//!
//! Judgments are tallied into an empirical win-probability matrix, the
//! probabilities of compared pairs are affinely squeezed into a narrow band
//! (0.33..0.66 by default), and strengths are fitted by minorization-
//! maximization on the fractional win counts that matrix implies. Log
//! strengths are then min-max mapped onto 0..100.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::display::to_display_scale;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BtError {
    #[error("invalid rescale bounds lo={lo} hi={hi}")]
    InvalidBounds { lo: f64, hi: f64 },
    #[error("comparison graph is disconnected into {} components: {}", .components.len(), describe_components(.components))]
    Disconnected { components: Vec<Vec<String>> },
    #[error("item {0} never wins; strengths have no finite maximum")]
    NoWins(String),
    #[error("invalid record: {0}")]
    InvalidRecord(String),
}

fn describe_components(components: &[Vec<String>]) -> String {
    components
        .iter()
        .map(|c| {
            let head: Vec<&str> = c.iter().take(5).map(String::as_str).collect();
            if c.len() > 5 {
                format!("[{}, ... {} items]", head.join(", "), c.len())
            } else {
                format!("[{}]", head.join(", "))
            }
        })
        .collect::<Vec<_>>()
        .join(" ")
}

/// What raters were asked to judge.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    #[default]
    Complexity,
    Surprise,
}

impl std::fmt::Display for Task {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Task::Complexity => "complexity",
            Task::Surprise => "surprise",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Left,
    Right,
}

/// Result of an attention-check trial.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttentionOutcome {
    pub instructed_side: Side,
    pub chosen_side: Side,
    pub passed: bool,
}

/// One pairwise judgment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRecord {
    pub item_a: String,
    pub item_b: String,
    pub winner: String,
    pub rater: String,
    #[serde(default)]
    pub session_id: String,
    pub timestamp: DateTime<Utc>,
    #[serde(default)]
    pub is_attention_check: bool,
    #[serde(default)]
    pub task: Task,
    /// Set when the rater's session was excluded for failed attention checks.
    #[serde(default)]
    pub excluded: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trial_index: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attention: Option<AttentionOutcome>,
}

impl ComparisonRecord {
    /// Ordinary judgments must name two distinct items and a winner among
    /// them. Attention checks show one image twice.
    pub fn validate(&self) -> Result<(), BtError> {
        if self.winner != self.item_a && self.winner != self.item_b {
            return Err(BtError::InvalidRecord(format!(
                "winner {} is not in pair ({}, {})",
                self.winner, self.item_a, self.item_b
            )));
        }
        if !self.is_attention_check && self.item_a == self.item_b {
            return Err(BtError::InvalidRecord(format!("item {} compared with itself", self.item_a)));
        }
        Ok(())
    }
}

/// Empirical pairwise win fractions over a sorted item list.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbabilityMatrix {
    items: Vec<String>,
    /// Row-major; `p[i*n + j]` = fraction of i-vs-j comparisons won by i.
    p: Vec<f64>,
    /// Symmetric comparison counts; zero marks an uncompared pair.
    counts: Vec<u32>,
}

impl ProbabilityMatrix {
    pub fn items(&self) -> &[String] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.items.binary_search_by(|s| s.as_str().cmp(id)).ok()
    }

    pub fn p(&self, i: usize, j: usize) -> f64 {
        self.p[i * self.items.len() + j]
    }

    pub fn count(&self, i: usize, j: usize) -> u32 {
        self.counts[i * self.items.len() + j]
    }

    pub fn compared(&self, i: usize, j: usize) -> bool {
        i != j && self.count(i, j) > 0
    }

    /// Same matrix with every comparison count multiplied by `factor`.
    pub fn with_scaled_counts(&self, factor: u32) -> Self {
        Self {
            counts: self.counts.iter().map(|c| c * factor).collect(),
            ..self.clone()
        }
    }

    /// Builds directly from item ids, win fractions and counts (row-major).
    pub fn from_parts(items: Vec<String>, p: Vec<f64>, counts: Vec<u32>) -> Self {
        let n = items.len();
        assert_eq!(p.len(), n * n);
        assert_eq!(counts.len(), n * n);
        Self { items, p, counts }
    }

    /// Connected components of the comparison graph, as item ids.
    pub fn components(&self) -> Vec<Vec<String>> {
        let n = self.len();
        let mut seen = vec![false; n];
        let mut out = Vec::new();
        for start in 0..n {
            if seen[start] {
                continue;
            }
            seen[start] = true;
            let mut queue = VecDeque::from([start]);
            let mut comp = Vec::new();
            while let Some(i) = queue.pop_front() {
                comp.push(self.items[i].clone());
                for j in 0..n {
                    if !seen[j] && self.compared(i, j) {
                        seen[j] = true;
                        queue.push_back(j);
                    }
                }
            }
            comp.sort();
            out.push(comp);
        }
        out
    }
}

/// Tallies non-attention-check records into win fractions.
pub fn build_prob_matrix(records: &[ComparisonRecord]) -> ProbabilityMatrix {
    let used: Vec<&ComparisonRecord> = records.iter().filter(|r| !r.is_attention_check).collect();
    let items: Vec<String> = used
        .iter()
        .flat_map(|r| [r.item_a.clone(), r.item_b.clone()])
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let index: HashMap<&str, usize> = items.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
    let n = items.len();
    let mut wins = vec![0u32; n * n];
    let mut counts = vec![0u32; n * n];
    for r in used {
        let (a, b) = (index[r.item_a.as_str()], index[r.item_b.as_str()]);
        if a == b {
            continue;
        }
        counts[a * n + b] += 1;
        counts[b * n + a] += 1;
        if r.winner == r.item_a {
            wins[a * n + b] += 1;
        } else if r.winner == r.item_b {
            wins[b * n + a] += 1;
        }
    }
    let p = wins
        .iter()
        .zip(&counts)
        .map(|(&w, &c)| if c > 0 { f64::from(w) / f64::from(c) } else { 0.0 })
        .collect();
    ProbabilityMatrix { items, p, counts }
}

pub const RESCALE_LO: f64 = 0.33;
pub const RESCALE_HI: f64 = 0.66;

fn check_bounds(lo: f64, hi: f64) -> Result<(), BtError> {
    if !(lo.is_finite() && hi.is_finite() && lo >= 0.0 && hi <= 1.0 && lo < hi) {
        return Err(BtError::InvalidBounds { lo, hi });
    }
    Ok(())
}

/// `p' = lo + p (hi - lo)` on compared entries.
pub fn rescale_matrix(m: &ProbabilityMatrix, lo: f64, hi: f64) -> Result<ProbabilityMatrix, BtError> {
    check_bounds(lo, hi)?;
    Ok(map_compared(m, |p| lo + p * (hi - lo)))
}

/// Inverse of [`rescale_matrix`] for the same bounds.
pub fn inverse_rescale_matrix(m: &ProbabilityMatrix, lo: f64, hi: f64) -> Result<ProbabilityMatrix, BtError> {
    check_bounds(lo, hi)?;
    Ok(map_compared(m, |p| (p - lo) / (hi - lo)))
}

fn map_compared(m: &ProbabilityMatrix, f: impl Fn(f64) -> f64) -> ProbabilityMatrix {
    let n = m.len();
    let mut out = m.clone();
    for i in 0..n {
        for j in 0..n {
            if m.compared(i, j) {
                out.p[i * n + j] = f(m.p(i, j));
            }
        }
    }
    out
}

/// Scores on the 0..100 display scale keyed by item id.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ScoreVector {
    pub scores: BTreeMap<String, f64>,
}

impl ScoreVector {
    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<f64> {
        self.scores.get(id).copied()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BtOptions {
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for BtOptions {
    fn default() -> Self {
        Self {
            max_iter: 10_000,
            tol: 1e-9,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BtFit {
    pub scores: ScoreVector,
    /// Strengths summing to 1, aligned with the matrix item order.
    pub strengths: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub log_likelihood: f64,
}

struct Edge {
    other: usize,
    /// Effective comparisons `w_ij + w_ji`.
    total: f64,
}

/// Fractional-count log-likelihood `sum w_ij (ln pi_i - ln(pi_i + pi_j))`.
fn log_likelihood(wins: &[Vec<(usize, f64)>], pi: &[f64]) -> f64 {
    wins.iter()
        .enumerate()
        .map(|(i, row)| {
            row.iter()
                .map(|&(j, w)| w * (pi[i].ln() - (pi[i] + pi[j]).ln()))
                .sum::<f64>()
        })
        .sum()
}

/// Fits strengths by MM iterations. Pair (i, j) compared `n` times
/// contributes `n * p[i][j]` wins to i.
pub fn bt_fit(m: &ProbabilityMatrix, opts: BtOptions) -> Result<BtFit, BtError> {
    let n = m.len();
    if n == 0 {
        return Ok(BtFit {
            scores: ScoreVector::default(),
            strengths: vec![],
            iterations: 0,
            converged: true,
            log_likelihood: 0.0,
        });
    }
    let components = m.components();
    if components.len() > 1 {
        return Err(BtError::Disconnected { components });
    }

    let mut edges: Vec<Vec<Edge>> = (0..n).map(|_| Vec::new()).collect();
    let mut wins: Vec<Vec<(usize, f64)>> = (0..n).map(|_| Vec::new()).collect();
    let mut total_wins = vec![0.0; n];
    for i in 0..n {
        for j in 0..n {
            if m.compared(i, j) {
                let c = f64::from(m.count(i, j));
                let w_ij = c * m.p(i, j);
                let w_ji = c * m.p(j, i);
                edges[i].push(Edge { other: j, total: w_ij + w_ji });
                wins[i].push((j, w_ij));
                total_wins[i] += w_ij;
            }
        }
    }
    if n > 1 {
        if let Some(i) = total_wins.iter().position(|w| *w <= 0.0) {
            return Err(BtError::NoWins(m.items[i].clone()));
        }
    }

    let mut pi = vec![1.0 / n as f64; n];
    let mut converged = n == 1;
    let mut iterations = 0;
    let mut ll = log_likelihood(&wins, &pi);
    while !converged && iterations < opts.max_iter {
        iterations += 1;
        let mut next: Vec<f64> = (0..n)
            .map(|i| {
                let denom: f64 = edges[i].iter().map(|e| e.total / (pi[i] + pi[e.other])).sum();
                total_wins[i] / denom
            })
            .collect();
        let total: f64 = next.iter().sum();
        next.iter_mut().for_each(|v| *v /= total);

        let delta = pi
            .iter()
            .zip(&next)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        if cfg!(debug_assertions) {
            let ll_next = log_likelihood(&wins, &next);
            debug_assert!(
                ll_next >= ll - 1e-9 * ll.abs().max(1.0),
                "log-likelihood decreased at iteration {iterations}: {ll} -> {ll_next}"
            );
            ll = ll_next;
        }
        pi = next;
        converged = delta < opts.tol;
    }
    if !cfg!(debug_assertions) {
        ll = log_likelihood(&wins, &pi);
    }
    if !converged {
        log::warn!(
            "Bradley-Terry fit did not converge after {} iterations; returning last iterate",
            opts.max_iter
        );
    }

    let logs: Vec<f64> = pi.iter().map(|p| p.ln()).collect();
    let display = to_display_scale(&logs);
    let scores = ScoreVector {
        scores: m.items.iter().cloned().zip(display).collect(),
    };
    Ok(BtFit {
        scores,
        strengths: pi,
        iterations,
        converged,
        log_likelihood: ll,
    })
}

/// Tally, rescale to `[0.33, 0.66]`, fit.
pub fn score_pipeline(records: &[ComparisonRecord]) -> Result<ScoreVector, BtError> {
    let m = build_prob_matrix(records);
    let rescaled = rescale_matrix(&m, RESCALE_LO, RESCALE_HI)?;
    Ok(bt_fit(&rescaled, BtOptions::default())?.scores)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(a: &str, b: &str, winner: &str) -> ComparisonRecord {
        ComparisonRecord {
            item_a: a.into(),
            item_b: b.into(),
            winner: winner.into(),
            rater: "r".into(),
            session_id: "s".into(),
            timestamp: DateTime::<Utc>::UNIX_EPOCH,
            is_attention_check: false,
            task: Task::Complexity,
            excluded: false,
            trial_index: None,
            attention: None,
        }
    }

    #[test]
    fn always_wins() {
        let m = build_prob_matrix(&[rec("i", "j", "i"), rec("j", "i", "i"), rec("i", "j", "i")]);
        let (i, j) = (m.index_of("i").unwrap(), m.index_of("j").unwrap());
        assert_eq!(m.p(i, j), 1.0);
        assert_eq!(m.p(j, i), 0.0);
        assert_eq!(m.count(i, j), 3);
    }

    #[test]
    fn two_of_three() {
        let m = build_prob_matrix(&[rec("i", "j", "i"), rec("i", "j", "i"), rec("i", "j", "j")]);
        let (i, j) = (m.index_of("i").unwrap(), m.index_of("j").unwrap());
        assert!((m.p(i, j) - 2.0 / 3.0).abs() < 1e-15);
        assert!((m.p(i, j) + m.p(j, i) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn attention_checks_ignored() {
        let mut check = rec("x", "x", "x");
        check.is_attention_check = true;
        let m = build_prob_matrix(&[check.clone()]);
        assert!(m.is_empty());
        assert!(score_pipeline(&[check]).unwrap().is_empty());
    }

    #[test]
    fn rescale_endpoints_and_inverse() {
        let m = build_prob_matrix(&[rec("a", "b", "a"), rec("b", "c", "b"), rec("b", "c", "c")]);
        let r = rescale_matrix(&m, RESCALE_LO, RESCALE_HI).unwrap();
        let (a, b, c) = (0, 1, 2);
        assert!((r.p(a, b) - 0.66).abs() < 1e-15);
        assert!((r.p(b, a) - 0.33).abs() < 1e-15);
        assert!((r.p(b, c) - 0.495).abs() < 1e-15);
        assert_eq!(r.p(a, c), 0.0);
        assert!(!r.compared(a, c));
        let back = inverse_rescale_matrix(&r, RESCALE_LO, RESCALE_HI).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert!((back.p(i, j) - m.p(i, j)).abs() < 1e-12);
            }
        }
        assert!(rescale_matrix(&m, 0.66, 0.33).is_err());
        assert!(rescale_matrix(&m, -0.1, 0.5).is_err());
    }

    #[test]
    fn symmetric_pair_scores_fifty() {
        let m = build_prob_matrix(&[rec("a", "b", "a"), rec("a", "b", "b")]);
        let r = rescale_matrix(&m, RESCALE_LO, RESCALE_HI).unwrap();
        let fit = bt_fit(&r, BtOptions::default()).unwrap();
        assert_eq!(fit.scores.get("a"), Some(50.0));
        assert_eq!(fit.scores.get("b"), Some(50.0));
    }

    #[test]
    fn transitive_order() {
        let recs = [rec("A", "B", "A"), rec("B", "C", "B"), rec("A", "C", "A")];
        let s = score_pipeline(&recs).unwrap();
        let (a, b, c) = (s.get("A").unwrap(), s.get("B").unwrap(), s.get("C").unwrap());
        assert!(a > b && b > c);
        assert_eq!(a, 100.0);
        assert_eq!(c, 0.0);
    }

    #[test]
    fn disconnected_graph_names_components() {
        let recs = [rec("a", "b", "a"), rec("c", "d", "d")];
        let err = score_pipeline(&recs).unwrap_err();
        match &err {
            BtError::Disconnected { components } => {
                assert_eq!(components, &vec![vec!["a".to_string(), "b".into()], vec!["c".into(), "d".into()]]);
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(err.to_string().contains("[a, b]"));
    }

    #[test]
    fn unrescaled_loser_has_no_mle() {
        let m = build_prob_matrix(&[rec("a", "b", "a")]);
        assert!(matches!(bt_fit(&m, BtOptions::default()), Err(BtError::NoWins(_))));
    }

    #[test]
    fn non_convergence_returns_last_iterate() {
        let recs = [rec("A", "B", "A"), rec("B", "C", "B"), rec("A", "C", "A"), rec("C", "D", "C")];
        let m = rescale_matrix(&build_prob_matrix(&recs), RESCALE_LO, RESCALE_HI).unwrap();
        let fit = bt_fit(&m, BtOptions { max_iter: 2, tol: 1e-15 }).unwrap();
        assert!(!fit.converged);
        assert_eq!(fit.iterations, 2);
        assert_eq!(fit.scores.len(), 4);
    }

    #[test]
    fn record_validation() {
        assert!(rec("a", "b", "c").validate().is_err());
        assert!(rec("a", "a", "a").validate().is_err());
        assert!(rec("a", "b", "b").validate().is_ok());
    }
}
