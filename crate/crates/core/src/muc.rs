//! Multi-Scale Unique Color and its single-scale ancestor, colorfulness.

use std::collections::HashSet;

use thiserror::Error;

use crate::imgio::{downscale_by, RgbImage, ScaleSchedule};

#[derive(Debug, Error, PartialEq, Eq)]
#[error("bit precision must be in 1..=8, got {0}")]
pub struct InvalidBits(pub u8);

/// Bits kept per channel before counting colors.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct BitPrecision(u8);

impl BitPrecision {
    pub fn new(bits: u8) -> Result<Self, InvalidBits> {
        if (1..=8).contains(&bits) {
            Ok(Self(bits))
        } else {
            Err(InvalidBits(bits))
        }
    }

    pub fn bits(self) -> u8 {
        self.0
    }

    #[inline]
    fn shift(self) -> u8 {
        8 - self.0
    }
}

impl Default for BitPrecision {
    fn default() -> Self {
        Self(7)
    }
}

impl TryFrom<u8> for BitPrecision {
    type Error = InvalidBits;

    fn try_from(bits: u8) -> Result<Self, InvalidBits> {
        Self::new(bits)
    }
}

/// Weighted unique-color count.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd)]
pub struct MucScore(pub f64);

impl MucScore {
    pub fn value(self) -> f64 {
        self.0
    }
}

#[inline]
pub fn quantize_value(v: u8, b: BitPrecision) -> u8 {
    let s = b.shift();
    (v >> s) << s
}

/// Keeps the top `b` bits of every channel.
pub fn quantize(img: &RgbImage, b: BitPrecision) -> RgbImage {
    let data = img
        .pixels()
        .iter()
        .map(|p| p.map(|v| quantize_value(v, b)))
        .collect();
    RgbImage::new(img.height(), img.width(), data).expect("same shape")
}

#[inline]
fn color_index(p: [u8; 3]) -> u32 {
    (u32::from(p[0]) << 16) | (u32::from(p[1]) << 8) | u32::from(p[2])
}

pub fn unique_color_count(img: &RgbImage) -> usize {
    img.pixels()
        .iter()
        .map(|p| color_index(*p))
        .collect::<HashSet<u32>>()
        .len()
}

/// Per scale: downscale, then quantize, then count distinct colors.
pub fn muc_score(img: &RgbImage, b: BitPrecision, schedule: &ScaleSchedule) -> MucScore {
    let total = schedule
        .iter()
        .map(|(s, w)| {
            let scaled = downscale_by(img, s).expect("schedule divisors are positive");
            w * unique_color_count(&quantize(&scaled, b)) as f64
        })
        .sum();
    MucScore(total)
}

/// Quantized unique colors at full resolution.
pub fn colorfulness(img: &RgbImage, b: BitPrecision) -> MucScore {
    muc_score(img, b, &ScaleSchedule::single())
}
