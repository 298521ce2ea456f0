//! Interpretable visual-complexity features and the statistics used to
//! evaluate them.
//!
//! - [`msg`]: multi-scale Sobel gradient
//! - [`muc`]: multi-scale unique color and colorfulness
//! - [`baselines`]: Canny edge density and patch symmetry
//! - [`stats`]: Spearman, OLS, repeated 3-fold CV, permutation and KS tests
//! - [`btrank`]: Bradley-Terry scores from pairwise judgments
//! - [`surprise`]: LLM surprise ratings through a pluggable provider

pub mod baselines;
pub mod btrank;
pub mod display;
pub mod imgio;
pub mod msg;
pub mod muc;
pub mod stats;
pub mod surprise;

pub use btrank::{ComparisonRecord, ScoreVector, Task};
pub use imgio::{load_image, RgbImage, ScaleSchedule};
pub use msg::{msg_score, msg_score_grayscale, MsgScore};
pub use muc::{colorfulness, muc_score, BitPrecision, MucScore};
pub use stats::{EvalReport, FeatureMatrix, PermTestResult};
