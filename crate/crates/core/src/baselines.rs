//! Low-level comparison features: Canny edge density and patch symmetry.

use std::collections::VecDeque;

use thiserror::Error;

use crate::imgio::{Plane, RgbImage};
use crate::msg::{reflect, sobel, Axis};

#[derive(Debug, Error, PartialEq)]
pub enum BaselineError {
    #[error("canny thresholds must satisfy 0 < low < high, got low={low} high={high}")]
    Thresholds { low: f64, high: f64 },
    #[error("gaussian sigma must be finite and nonnegative, got {0}")]
    Sigma(f64),
    #[error("patch side must be at least 2, got {0}")]
    PatchSize(usize),
}

/// Largest Sobel magnitude reachable on a `[0, 1]` image.
const SOBEL_MAX: f64 = 4.0 * std::f64::consts::SQRT_2;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CannyParams {
    pub sigma: f64,
    /// Hysteresis thresholds on gradient magnitude scaled to `[0, 1]`.
    pub low: f64,
    pub high: f64,
}

impl Default for CannyParams {
    fn default() -> Self {
        Self {
            sigma: 1.4,
            low: 0.1,
            high: 0.2,
        }
    }
}

impl CannyParams {
    pub fn validate(&self) -> Result<(), BaselineError> {
        if !self.sigma.is_finite() || self.sigma < 0.0 {
            return Err(BaselineError::Sigma(self.sigma));
        }
        if !(self.low > 0.0 && self.low < self.high) {
            return Err(BaselineError::Thresholds {
                low: self.low,
                high: self.high,
            });
        }
        Ok(())
    }
}

/// Fraction of pixels marked as edges, in `[0, 1]`.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd)]
pub struct EdgeDensity(pub f64);

/// Mean per-patch mirror symmetry, in `[0, 1]`.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd)]
pub struct PatchSymmetry(pub f64);

pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil().max(1.0) as isize;
    let raw: Vec<f64> = (-radius..=radius)
        .map(|k| (-(k * k) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / total).collect()
}

/// Separable Gaussian blur with mirrored borders. `sigma == 0` is a no-op.
pub fn gaussian_blur(plane: &Plane, sigma: f64) -> Plane {
    if sigma == 0.0 {
        return plane.clone();
    }
    let kernel = gaussian_kernel(sigma);
    let r = (kernel.len() / 2) as isize;
    let (h, w) = (plane.height, plane.width);
    let rows = Plane::from_fn(h, w, |y, x| {
        kernel
            .iter()
            .enumerate()
            .map(|(i, k)| k * plane.get(y, reflect(x as isize + i as isize - r, w)))
            .sum()
    });
    Plane::from_fn(h, w, |y, x| {
        kernel
            .iter()
            .enumerate()
            .map(|(i, k)| k * rows.get(reflect(y as isize + i as isize - r, h), x))
            .sum()
    })
}

/// Binary edge map: blur, Sobel, non-maximum suppression, hysteresis.
pub fn canny_edges(img: &RgbImage, params: &CannyParams) -> Result<Vec<bool>, BaselineError> {
    params.validate()?;
    let (h, w) = (img.height(), img.width());
    let smooth = gaussian_blur(&img.normalized_luma(), params.sigma);
    let gx = sobel(&smooth, Axis::Horizontal);
    let gy = sobel(&smooth, Axis::Vertical);
    let mag: Vec<f64> = gx
        .data
        .iter()
        .zip(&gy.data)
        .map(|(a, b)| (a * a + b * b).sqrt() / SOBEL_MAX)
        .collect();

    let at = |y: isize, x: isize| -> f64 {
        if y < 0 || x < 0 || y >= h as isize || x >= w as isize {
            0.0
        } else {
            mag[y as usize * w + x as usize]
        }
    };

    let mut thin = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let m = mag[i];
            if m == 0.0 {
                continue;
            }
            // Quantize the gradient direction into one of four neighbour axes.
            let mut angle = gy.data[i].atan2(gx.data[i]).to_degrees();
            if angle < 0.0 {
                angle += 180.0;
            }
            let (dy, dx) = if !(22.5..157.5).contains(&angle) {
                (0, 1)
            } else if angle < 67.5 {
                (1, 1)
            } else if angle < 112.5 {
                (1, 0)
            } else {
                (1, -1)
            };
            let (yi, xi) = (y as isize, x as isize);
            let behind = at(yi - dy, xi - dx);
            let ahead = at(yi + dy, xi + dx);
            if m > behind && m >= ahead {
                thin[i] = m;
            }
        }
    }

    let mut edges = vec![false; h * w];
    let mut queue: VecDeque<usize> = (0..h * w).filter(|&i| thin[i] >= params.high).collect();
    for &i in &queue {
        edges[i] = true;
    }
    while let Some(i) = queue.pop_front() {
        let (y, x) = ((i / w) as isize, (i % w) as isize);
        for ny in y - 1..=y + 1 {
            for nx in x - 1..=x + 1 {
                if ny < 0 || nx < 0 || ny >= h as isize || nx >= w as isize {
                    continue;
                }
                let j = ny as usize * w + nx as usize;
                if !edges[j] && thin[j] >= params.low {
                    edges[j] = true;
                    queue.push_back(j);
                }
            }
        }
    }
    Ok(edges)
}

pub fn canny_edge_density(img: &RgbImage, params: &CannyParams) -> Result<EdgeDensity, BaselineError> {
    let edges = canny_edges(img, params)?;
    let count = edges.iter().filter(|e| **e).count();
    Ok(EdgeDensity(count as f64 / edges.len() as f64))
}

/// Tiles the 8-bit luma into `patch x patch` blocks (remainder dropped) and
/// scores each block by `1 - mean|B - mirror(B)| / 255`, averaged over the
/// left-right and top-bottom mirrors. A patch larger than the image yields a
/// single whole-image block.
pub fn patch_symmetry(img: &RgbImage, patch: usize) -> Result<PatchSymmetry, BaselineError> {
    if patch < 2 {
        return Err(BaselineError::PatchSize(patch));
    }
    let (h, w) = (img.height(), img.width());
    let luma = img.luma8();
    let (ph, pw) = if patch > h || patch > w { (h, w) } else { (patch, patch) };
    let (by, bx) = (h / ph, w / pw);

    // Integer totals keep the result independent of block order.
    let mut diff_total: u64 = 0;
    for oy in 0..by {
        for ox in 0..bx {
            for y in 0..ph {
                for x in 0..pw {
                    let v = |yy: usize, xx: usize| i32::from(luma[(oy * ph + yy) * w + ox * pw + xx]);
                    let here = v(y, x);
                    diff_total += (here - v(y, pw - 1 - x)).unsigned_abs() as u64;
                    diff_total += (here - v(ph - 1 - y, x)).unsigned_abs() as u64;
                }
            }
        }
    }
    let cells = (by * bx * ph * pw) as f64;
    Ok(PatchSymmetry(1.0 - diff_total as f64 / (2.0 * 255.0 * cells)))
}
