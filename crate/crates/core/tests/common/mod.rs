//! Straight-line reference implementations used as test oracles.
//!
//! These deliberately avoid the library's code paths: resizing uses
//! floating-point fractional overlaps, Sobel uses explicit kernel tables, and
//! counting uses ordered sets.

#![allow(dead_code)]

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use viscomp_core::RgbImage;

pub const SCALES: [usize; 4] = [1, 2, 4, 8];
pub const WEIGHTS: [f64; 4] = [0.4, 0.3, 0.2, 0.1];

pub fn random_image(rng: &mut ChaCha8Rng, max_side: usize) -> RgbImage {
    let h = rng.random_range(1..=max_side);
    let w = rng.random_range(1..=max_side);
    random_image_sized(rng, h, w)
}

pub fn random_image_sized(rng: &mut ChaCha8Rng, h: usize, w: usize) -> RgbImage {
    // Mix of smooth gradients, blocks and noise so every feature is exercised.
    let style = rng.random_range(0..3);
    let palette: Vec<[u8; 3]> = (0..rng.random_range(2..12)).map(|_| rng.random()).collect();
    let mut data = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            let px = match style {
                0 => rng.random(),
                1 => palette[((y / 3) * 7 + x / 3) % palette.len()],
                _ => {
                    let base = palette[(x * palette.len()) / w.max(1)];
                    let jitter: u8 = rng.random_range(0..8);
                    base.map(|v| v.saturating_add(jitter))
                }
            };
            data.push(px);
        }
    }
    RgbImage::new(h, w, data).unwrap()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Channel planes as `[c][y][x]` floats in `[0, 1]`.
pub fn normalized(img: &RgbImage) -> Vec<Vec<Vec<f64>>> {
    (0..3)
        .map(|c| {
            (0..img.height())
                .map(|y| (0..img.width()).map(|x| img.pixel(y, x)[c] as f64 / 255.0).collect())
                .collect()
        })
        .collect()
}

/// Box resize by fractional overlap of real intervals.
pub fn oracle_resize(src: &[Vec<f64>], th: usize, tw: usize) -> Vec<Vec<f64>> {
    let (h, w) = (src.len(), src[0].len());
    let fy = h as f64 / th as f64;
    let fx = w as f64 / tw as f64;
    let mut out = vec![vec![0.0; tw]; th];
    for (oy, row) in out.iter_mut().enumerate() {
        let (y0, y1) = (oy as f64 * fy, (oy + 1) as f64 * fy);
        for (ox, cell) in row.iter_mut().enumerate() {
            let (x0, x1) = (ox as f64 * fx, (ox + 1) as f64 * fx);
            let mut acc = 0.0;
            let mut area = 0.0;
            for sy in y0.floor() as usize..(y1.ceil() as usize).min(h) {
                let oy_ = (y1.min(sy as f64 + 1.0) - y0.max(sy as f64)).max(0.0);
                for sx in x0.floor() as usize..(x1.ceil() as usize).min(w) {
                    let ox_ = (x1.min(sx as f64 + 1.0) - x0.max(sx as f64)).max(0.0);
                    acc += src[sy][sx] * oy_ * ox_;
                    area += oy_ * ox_;
                }
            }
            *cell = acc / area;
        }
    }
    out
}

fn mirror(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let n = n as isize;
    let mut i = i;
    loop {
        if i < 0 {
            i = -i;
        } else if i >= n {
            i = 2 * n - 2 - i;
        } else {
            return i as usize;
        }
    }
}

pub const KX: [[f64; 3]; 3] = [[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]];
pub const KY: [[f64; 3]; 3] = [[-1.0, -2.0, -1.0], [0.0, 0.0, 0.0], [1.0, 2.0, 1.0]];

pub fn oracle_convolve(p: &[Vec<f64>], k: &[[f64; 3]; 3]) -> Vec<Vec<f64>> {
    let (h, w) = (p.len(), p[0].len());
    (0..h)
        .map(|y| {
            (0..w)
                .map(|x| {
                    let mut acc = 0.0;
                    for dy in 0..3 {
                        for dx in 0..3 {
                            let sy = mirror(y as isize + dy as isize - 1, h);
                            let sx = mirror(x as isize + dx as isize - 1, w);
                            acc += k[dy][dx] * p[sy][sx];
                        }
                    }
                    acc
                })
                .collect()
        })
        .collect()
}

pub fn oracle_mean_magnitude(p: &[Vec<f64>]) -> f64 {
    let gx = oracle_convolve(p, &KX);
    let gy = oracle_convolve(p, &KY);
    let mut total = 0.0;
    let mut count = 0.0;
    for (rx, ry) in gx.iter().zip(&gy) {
        for (a, b) in rx.iter().zip(ry) {
            total += (a * a + b * b).sqrt();
            count += 1.0;
        }
    }
    total / count
}

pub fn dims(h: usize, w: usize, s: usize) -> (usize, usize) {
    ((h / s).max(1), (w / s).max(1))
}

/// Multi-scale Sobel gradient written out step by step.
pub fn oracle_msg(img: &RgbImage, scales: &[usize], weights: &[f64]) -> f64 {
    let planes = normalized(img);
    let mut msg = 0.0;
    for (&s, &w) in scales.iter().zip(weights) {
        let (th, tw) = dims(img.height(), img.width(), s);
        let mut grads = [0.0; 3];
        for c in 0..3 {
            let scaled = oracle_resize(&planes[c], th, tw);
            grads[c] = oracle_mean_magnitude(&scaled);
        }
        let s_grad = (grads[0] + grads[1] + grads[2]) / 3.0;
        msg += w * s_grad;
    }
    msg
}

/// Single scale at full resolution.
pub fn oracle_single_scale_msg(img: &RgbImage, s: usize) -> f64 {
    oracle_msg(img, &[s], &[1.0])
}

fn round_half_up(v: f64) -> u8 {
    let f = v.floor();
    let frac = v - f;
    let r = if frac > 0.5 - 1e-9 { f + 1.0 } else { f };
    r.clamp(0.0, 255.0) as u8
}

pub fn oracle_unique_count(img: &RgbImage, bits: u32, s: usize) -> usize {
    let (th, tw) = dims(img.height(), img.width(), s);
    let raw: Vec<Vec<Vec<f64>>> = (0..3)
        .map(|c| {
            let plane: Vec<Vec<f64>> = (0..img.height())
                .map(|y| (0..img.width()).map(|x| img.pixel(y, x)[c] as f64).collect())
                .collect();
            oracle_resize(&plane, th, tw)
        })
        .collect();
    let step = 1u32 << (8 - bits);
    let mut colors = BTreeSet::new();
    for y in 0..th {
        for x in 0..tw {
            let q = |c: usize| {
                let v = round_half_up(raw[c][y][x]) as u32;
                v - v % step
            };
            colors.insert((q(0), q(1), q(2)));
        }
    }
    colors.len()
}

pub fn oracle_muc(img: &RgbImage, bits: u32, scales: &[usize], weights: &[f64]) -> f64 {
    scales
        .iter()
        .zip(weights)
        .map(|(&s, &w)| w * oracle_unique_count(img, bits, s) as f64)
        .sum()
}

pub fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1e-300)
}

/// Relative comparison that treats float dust from the oracle as zero.
pub fn oracle_close(got: f64, want: f64, tol: f64) -> bool {
    rel_close(got, want, tol) || (got == 0.0 && want.abs() < 1e-14)
}

/// Ranks with explicit tie averaging by counting.
pub fn oracle_ranks(x: &[f64]) -> Vec<f64> {
    x.iter()
        .map(|v| {
            let less = x.iter().filter(|o| *o < v).count() as f64;
            let equal = x.iter().filter(|o| *o == v).count() as f64;
            less + (equal + 1.0) / 2.0
        })
        .collect()
}

pub fn oracle_pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va.sqrt() * vb.sqrt())
}

pub fn oracle_spearman(a: &[f64], b: &[f64]) -> f64 {
    oracle_pearson(&oracle_ranks(a), &oracle_ranks(b))
}

/// Comparisons drawn from a planted Bradley-Terry model: `n_pairs` distinct
/// uniform random pairs, each judged by `raters` raters. Returns the records
/// and the planted log-strengths indexed by item number.
pub fn planted_bt_records(
    n_items: usize,
    n_pairs: usize,
    raters: usize,
    seed: u64,
) -> (Vec<viscomp_core::ComparisonRecord>, Vec<f64>) {
    use chrono::{TimeZone, Utc};
    let mut r = rng(seed);
    let log_strength: Vec<f64> = (0..n_items).map(|_| r.random_range(-2.0..2.0)).collect();
    let mut seen = std::collections::HashSet::new();
    let mut records = Vec::with_capacity(n_pairs * raters);
    let t0 = Utc.with_ymd_and_hms(2024, 1, 1, 0, 0, 0).unwrap();
    while seen.len() < n_pairs {
        let a = r.random_range(0..n_items);
        let b = r.random_range(0..n_items);
        if a == b || !seen.insert((a.min(b), a.max(b))) {
            continue;
        }
        let p_a = 1.0 / (1.0 + (log_strength[b] - log_strength[a]).exp());
        for k in 0..raters {
            let winner = if r.random::<f64>() < p_a { a } else { b };
            records.push(viscomp_core::ComparisonRecord {
                item_a: item_name(a),
                item_b: item_name(b),
                winner: item_name(winner),
                rater: format!("rater-{k}"),
                session_id: format!("sess-{k}"),
                timestamp: t0 + chrono::Duration::seconds(records.len() as i64),
                is_attention_check: false,
                task: viscomp_core::Task::Complexity,
                excluded: false,
                trial_index: None,
                attention: None,
            });
        }
    }
    (records, log_strength)
}

pub fn item_name(i: usize) -> String {
    format!("img{i:04}")
}
