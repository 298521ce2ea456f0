use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use viscomp_core::Task;

use crate::ExpError;

fn default_trials() -> usize {
    200
}

fn default_raters() -> usize {
    3
}

fn default_checks() -> usize {
    3
}

fn default_snapshot_every() -> u64 {
    1000
}

/// Experiment definition, usually read from TOML.
///
/// ```toml
/// corpus = ["a.png", "b.png", "c.png"]
/// image_dir = "images"
/// target_total_comparisons = 6000
/// seed = 7
/// ```
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub corpus: Vec<String>,
    /// Directory holding the images; each id is a file name inside it.
    #[serde(default)]
    pub image_dir: Option<PathBuf>,
    #[serde(default = "default_trials")]
    pub trials_per_session: usize,
    #[serde(default = "default_raters")]
    pub raters_per_pair: usize,
    #[serde(default = "default_checks")]
    pub attention_checks_per_session: usize,
    /// Number of distinct pairs to collect.
    pub target_total_comparisons: usize,
    pub seed: u64,
    #[serde(default)]
    pub task: Task,
    /// Commands between state snapshots; 0 disables them.
    #[serde(default = "default_snapshot_every")]
    pub snapshot_every: u64,
}

impl ExperimentConfig {
    pub fn new(corpus: Vec<String>, target_total_comparisons: usize, seed: u64) -> Self {
        Self {
            corpus,
            image_dir: None,
            trials_per_session: default_trials(),
            raters_per_pair: default_raters(),
            attention_checks_per_session: default_checks(),
            target_total_comparisons,
            seed,
            task: Task::Complexity,
            snapshot_every: default_snapshot_every(),
        }
    }

    /// Same flow with the surprise wording and task tag.
    pub fn surprise_mode(mut self) -> Self {
        self.task = Task::Surprise;
        self
    }

    pub fn from_toml_file(path: impl AsRef<Path>) -> Result<Self, ExpError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| ExpError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg: Self =
            toml::from_str(&text).map_err(|e| ExpError::Config(format!("{}: {e}", path.display())))?;
        // Relative image directories are taken from the config file's location.
        if let (Some(dir), Some(parent)) = (&cfg.image_dir, path.parent()) {
            if dir.is_relative() {
                cfg.image_dir = Some(parent.join(dir));
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ExpError> {
        let n = self.corpus.len();
        if n < 2 {
            return Err(ExpError::Config(format!("corpus needs at least 2 images, got {n}")));
        }
        let mut ids = self.corpus.clone();
        ids.sort();
        if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
            return Err(ExpError::Config(format!("duplicate image id {}", w[0])));
        }
        if self.raters_per_pair == 0 {
            return Err(ExpError::Config("raters_per_pair must be at least 1".into()));
        }
        if self.trials_per_session <= self.attention_checks_per_session {
            return Err(ExpError::Config(format!(
                "trials_per_session ({}) must exceed attention_checks_per_session ({})",
                self.trials_per_session, self.attention_checks_per_session
            )));
        }
        let possible = n * (n - 1) / 2;
        if self.target_total_comparisons == 0 || self.target_total_comparisons > possible {
            return Err(ExpError::Config(format!(
                "target_total_comparisons must be in 1..={possible} for {n} images"
            )));
        }
        Ok(())
    }

    /// Instruction shown before the first trial.
    pub fn instructions(&self) -> &'static str {
        match self.task {
            Task::Complexity => {
                "You will see two images side by side. Click the image that appears more visually complex to you. \
                 Some trials show the same image twice with a note on one of them; in that case click the marked image."
            }
            Task::Surprise => {
                "You will see two images side by side. Click the image that you find more surprising. \
                 Some trials show the same image twice with a note on one of them; in that case click the marked image."
            }
        }
    }

    pub fn question(&self) -> &'static str {
        match self.task {
            Task::Complexity => "Which image is more visually complex?",
            Task::Surprise => "Which image is more surprising?",
        }
    }
}
