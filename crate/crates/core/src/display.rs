//! Min-max mapping onto the 0..100 range used when reporting scores.

/// Maps `values` linearly so the minimum becomes 0 and the maximum 100.
/// A single value, or values with no spread, map to 50.
pub fn to_display_scale(values: &[f64]) -> Vec<f64> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    if values.len() < 2 || !(span > 1e-12) {
        return vec![50.0; values.len()];
    }
    values
        .iter()
        .map(|v| {
            if *v == lo {
                0.0
            } else if *v == hi {
                100.0
            } else {
                100.0 * (v - lo) / span
            }
        })
        .collect()
}
