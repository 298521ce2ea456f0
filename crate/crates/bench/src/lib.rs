//! Seeded inputs shared by the benchmarks.

use chrono::{DateTime, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use viscomp_core::{ComparisonRecord, RgbImage, Task};

/// Uniform noise image.
pub fn noise_image(h: usize, w: usize, seed: u64) -> RgbImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    RgbImage::from_fn(h, w, |_, _| [rng.random(), rng.random(), rng.random()]).expect("nonzero size")
}

/// Judgments over `n_items` from a planted strength model, `per_pair`
/// raters per pair.
pub fn comparisons(n_items: usize, n_pairs: usize, per_pair: usize, seed: u64) -> Vec<ComparisonRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let strength: Vec<f64> = (0..n_items).map(|_| rng.random_range(-2.0..2.0)).collect();
    let mut out = Vec::with_capacity(n_pairs * per_pair);
    for _ in 0..n_pairs {
        let a = rng.random_range(0..n_items);
        let b = (a + rng.random_range(1..n_items)) % n_items;
        let p = 1.0 / (1.0 + (strength[b] - strength[a]).exp());
        for r in 0..per_pair {
            let winner = if rng.random::<f64>() < p { a } else { b };
            out.push(ComparisonRecord {
                item_a: format!("i{a}"),
                item_b: format!("i{b}"),
                winner: format!("i{winner}"),
                rater: format!("r{r}"),
                session_id: format!("s{r}"),
                timestamp: DateTime::<Utc>::UNIX_EPOCH,
                is_attention_check: false,
                task: Task::Complexity,
                excluded: false,
                trial_index: None,
                attention: None,
            });
        }
    }
    out
}

/// `n` samples of a target, a correlated feature and an unrelated one.
pub fn correlated(n: usize, seed: u64) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c: Vec<f64> = (0..n).map(|_| rng.random()).collect();
    let x = c.iter().map(|v| v + 0.1 * rng.random::<f64>()).collect();
    let y = (0..n).map(|_| rng.random()).collect();
    (c, x, y)
}
