//! Multi-Scale Sobel Gradient.
//!
//! At each scale the image is box-downscaled, each channel is filtered with
//! the 3x3 Sobel pair, and the mean gradient magnitude is taken. Channel means
//! are averaged and accumulated with the scale weight.
//!
//! The score pipeline runs on exact integer numerators: a constant image
//! scores exactly zero and flips leave the score bit-identical.

use crate::imgio::{box_sums, scaled_dims, Plane, RgbImage, ScaleSchedule};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    /// Derivative along x (`dx=1, dy=0`).
    Horizontal,
    /// Derivative along y (`dx=0, dy=1`).
    Vertical,
}

/// Weighted mean gradient magnitude. Always nonnegative.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd)]
pub struct MsgScore(pub f64);

impl MsgScore {
    pub fn value(self) -> f64 {
        self.0
    }
}

/// Horizontal and vertical Sobel responses of one channel.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientPair {
    pub gx: Plane,
    pub gy: Plane,
}

impl GradientPair {
    pub fn of(channel: &Plane) -> Self {
        Self {
            gx: sobel(channel, Axis::Horizontal),
            gy: sobel(channel, Axis::Vertical),
        }
    }

    /// Mean of `sqrt(gx^2 + gy^2)`.
    pub fn mean_magnitude(&self) -> f64 {
        let total: f64 = self
            .gx
            .data
            .iter()
            .zip(&self.gy.data)
            .map(|(x, y)| (x * x + y * y).sqrt())
            .sum();
        total / self.gx.data.len() as f64
    }
}

/// Mirror index without repeating the edge sample (`gfedcb|abcdefgh|gfedcba`).
/// A length-1 axis maps everything to 0.
#[inline]
pub(crate) fn reflect(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let n = n as isize;
    let period = 2 * (n - 1);
    let mut m = i.rem_euclid(period);
    if m >= n {
        m = period - m;
    }
    m as usize
}

/// 3x3 Sobel correlation with mirrored borders over any additive type.
/// Doubling is written as `a + a` so integer and float paths share the code.
fn sobel_kernel<T>(height: usize, width: usize, at: impl Fn(usize, usize) -> T, axis: Axis) -> Vec<T>
where
    T: Copy + std::ops::Add<Output = T> + std::ops::Sub<Output = T>,
{
    let px = |y: isize, x: isize| at(reflect(y, height), reflect(x, width));
    let mut out = Vec::with_capacity(height * width);
    for y in 0..height as isize {
        for x in 0..width as isize {
            let v = match axis {
                Axis::Horizontal => {
                    let (r, l) = (px(y, x + 1), px(y, x - 1));
                    (px(y - 1, x + 1) + r + r + px(y + 1, x + 1)) - (px(y - 1, x - 1) + l + l + px(y + 1, x - 1))
                }
                Axis::Vertical => {
                    let (d, u) = (px(y + 1, x), px(y - 1, x));
                    (px(y + 1, x - 1) + d + d + px(y + 1, x + 1)) - (px(y - 1, x - 1) + u + u + px(y - 1, x + 1))
                }
            };
            out.push(v);
        }
    }
    out
}

/// 3x3 Sobel response with mirrored borders; output has the input's shape.
pub fn sobel(channel: &Plane, axis: Axis) -> Plane {
    Plane {
        height: channel.height,
        width: channel.width,
        data: sobel_kernel(channel.height, channel.width, |y, x| channel.get(y, x), axis),
    }
}

/// A channel held as integer numerators over a fixed unit
/// (`value = numerator / unit`), so box averaging stays exact.
struct ExactChannel<'a> {
    height: usize,
    width: usize,
    numerators: &'a [u64],
    unit: u64,
}

impl ExactChannel<'_> {
    /// Mean gradient magnitude after downscaling by `s`, in normalized units.
    ///
    /// Gradients are computed on exact integer sums and magnitudes are summed
    /// in sorted order, so any pixel permutation that maps the gradient field
    /// onto itself (flips, half turns) gives a bit-identical result.
    fn mean_magnitude(&self, s: u32) -> f64 {
        let (th, tw) = scaled_dims(self.height, self.width, s);
        let sums = box_sums(self.numerators, self.height, self.width, th, tw);
        let at = |y: usize, x: usize| sums[y * tw + x] as i64;
        let gx = sobel_kernel(th, tw, at, Axis::Horizontal);
        let gy = sobel_kernel(th, tw, at, Axis::Vertical);
        let mut mags: Vec<f64> = gx
            .iter()
            .zip(&gy)
            .map(|(&a, &b)| {
                let sq = i128::from(a) * i128::from(a) + i128::from(b) * i128::from(b);
                (sq as f64).sqrt()
            })
            .collect();
        mags.sort_by(f64::total_cmp);
        let total: f64 = mags.iter().sum();
        let denom = (self.unit * (self.height * self.width) as u64) as f64;
        total / (mags.len() as f64 * denom)
    }
}

fn channels_score(channels: &[ExactChannel<'_>], schedule: &ScaleSchedule) -> MsgScore {
    let total = schedule
        .iter()
        .map(|(s, w)| {
            let per_channel: f64 = channels.iter().map(|c| c.mean_magnitude(s)).sum();
            w * (per_channel / channels.len() as f64)
        })
        .sum();
    MsgScore(total)
}

/// Color MSG on channels normalized to `[0, 1]`. Resizing averages the
/// normalized values exactly; nothing is rounded back to 8 bits.
pub fn msg_score(img: &RgbImage, schedule: &ScaleSchedule) -> MsgScore {
    let planes: Vec<Vec<u64>> = (0..3)
        .map(|c| img.pixels().iter().map(|p| u64::from(p[c])).collect())
        .collect();
    let channels: Vec<ExactChannel<'_>> = planes
        .iter()
        .map(|numerators| ExactChannel {
            height: img.height(),
            width: img.width(),
            numerators,
            unit: 255,
        })
        .collect();
    channels_score(&channels, schedule)
}

/// MSG on the luma plane `0.299 R + 0.587 G + 0.114 B`.
pub fn msg_score_grayscale(img: &RgbImage, schedule: &ScaleSchedule) -> MsgScore {
    let luma: Vec<u64> = img
        .pixels()
        .iter()
        .map(|p| 299 * u64::from(p[0]) + 587 * u64::from(p[1]) + 114 * u64::from(p[2]))
        .collect();
    let channel = ExactChannel {
        height: img.height(),
        width: img.width(),
        numerators: &luma,
        unit: 255_000,
    };
    channels_score(&[channel], schedule)
}
