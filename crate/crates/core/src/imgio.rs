//! Image decoding, channel planes and area-average resizing.
//!
//! Every feature extractor consumes an [`RgbImage`]. Resizing uses exact box
//! (area-average) weights computed in integer units, so results never depend
//! on floating-point summation order.

use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("file not found: {0}")]
    NotFound(String),
    #[error("cannot decode {path}: {reason}")]
    Undecodable { path: String, reason: String },
    #[error("invalid dimensions {height}x{width}")]
    ZeroDimension { height: usize, width: usize },
    #[error("pixel buffer holds {got} pixels, expected {expected}")]
    BufferSize { expected: usize, got: usize },
    #[error("invalid scale schedule: {0}")]
    Schedule(String),
}

/// 8-bit RGB raster stored row-major.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct RgbImage {
    height: usize,
    width: usize,
    data: Vec<[u8; 3]>,
}

impl RgbImage {
    pub fn new(height: usize, width: usize, data: Vec<[u8; 3]>) -> Result<Self, ImageError> {
        if height == 0 || width == 0 {
            return Err(ImageError::ZeroDimension { height, width });
        }
        if data.len() != height * width {
            return Err(ImageError::BufferSize {
                expected: height * width,
                got: data.len(),
            });
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    /// Image filled with a single color.
    pub fn filled(height: usize, width: usize, color: [u8; 3]) -> Result<Self, ImageError> {
        Self::new(height, width, vec![color; height * width])
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize) -> [u8; 3],
    ) -> Result<Self, ImageError> {
        let mut data = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                data.push(f(y, x));
            }
        }
        Self::new(height, width, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> &[[u8; 3]] {
        &self.data
    }

    pub fn pixel(&self, y: usize, x: usize) -> [u8; 3] {
        self.data[y * self.width + x]
    }

    pub fn flip_horizontal(&self) -> Self {
        self.remap(self.height, self.width, |y, x| (y, self.width - 1 - x))
    }

    pub fn flip_vertical(&self) -> Self {
        self.remap(self.height, self.width, |y, x| (self.height - 1 - y, x))
    }

    pub fn rotate180(&self) -> Self {
        self.remap(self.height, self.width, |y, x| {
            (self.height - 1 - y, self.width - 1 - x)
        })
    }

    /// Clockwise quarter turn; output is `width x height`.
    pub fn rotate90(&self) -> Self {
        self.remap(self.width, self.height, |y, x| (self.height - 1 - x, y))
    }

    fn remap(&self, height: usize, width: usize, src: impl Fn(usize, usize) -> (usize, usize)) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                let (sy, sx) = src(y, x);
                data.push(self.pixel(sy, sx));
            }
        }
        Self {
            height,
            width,
            data,
        }
    }

    /// Channel `c` scaled to `[0, 1]`.
    pub fn normalized_channel(&self, c: usize) -> Plane {
        Plane {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|p| f64::from(p[c]) / 255.0).collect(),
        }
    }

    /// Luma `0.299 R + 0.587 G + 0.114 B` on `[0, 1]`-normalized channels.
    pub fn normalized_luma(&self) -> Plane {
        Plane {
            height: self.height,
            width: self.width,
            data: self
                .data
                .iter()
                .map(|p| {
                    0.299 * (f64::from(p[0]) / 255.0)
                        + 0.587 * (f64::from(p[1]) / 255.0)
                        + 0.114 * (f64::from(p[2]) / 255.0)
                })
                .collect(),
        }
    }

    /// Luma rounded to 8 bits.
    pub fn luma8(&self) -> Vec<u8> {
        self.data
            .iter()
            .map(|p| {
                let l = 0.299 * f64::from(p[0]) + 0.587 * f64::from(p[1]) + 0.114 * f64::from(p[2]);
                l.round().clamp(0.0, 255.0) as u8
            })
            .collect()
    }

    pub fn to_dynamic(&self) -> image::RgbImage {
        let raw: Vec<u8> = self.data.iter().flat_map(|p| p.iter().copied()).collect();
        image::RgbImage::from_raw(self.width as u32, self.height as u32, raw)
            .expect("buffer length matches dimensions")
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<(), ImageError> {
        let path = path.as_ref();
        self.to_dynamic()
            .save_with_format(path, image::ImageFormat::Png)
            .map_err(|e| ImageError::Undecodable {
                path: path.display().to_string(),
                reason: e.to_string(),
            })
    }

    pub fn encode_png(&self) -> Vec<u8> {
        let mut out = std::io::Cursor::new(Vec::new());
        self.to_dynamic()
            .write_to(&mut out, image::ImageFormat::Png)
            .expect("in-memory PNG encoding");
        out.into_inner()
    }
}

/// Single-channel real-valued raster.
#[derive(Clone, Debug, PartialEq)]
pub struct Plane {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl Plane {
    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                data.push(f(y, x));
            }
        }
        Self {
            height,
            width,
            data,
        }
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.data[y * self.width + x]
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }
}

/// Paired scale divisors and weights applied by the multi-scale features.
#[derive(Clone, Debug, PartialEq)]
pub struct ScaleSchedule {
    scales: Vec<u32>,
    weights: Vec<f64>,
}

impl Default for ScaleSchedule {
    fn default() -> Self {
        Self {
            scales: vec![1, 2, 4, 8],
            weights: vec![0.4, 0.3, 0.2, 0.1],
        }
    }
}

impl ScaleSchedule {
    pub fn new(scales: Vec<u32>, weights: Vec<f64>) -> Result<Self, ImageError> {
        if scales.is_empty() {
            return Err(ImageError::Schedule("no scales".into()));
        }
        if scales.len() != weights.len() {
            return Err(ImageError::Schedule(format!(
                "{} scales but {} weights",
                scales.len(),
                weights.len()
            )));
        }
        if scales[0] == 0 || scales.windows(2).any(|w| w[0] >= w[1]) {
            return Err(ImageError::Schedule(
                "scales must be positive and strictly increasing".into(),
            ));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(ImageError::Schedule("weights must be nonnegative".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(ImageError::Schedule(format!("weights sum to {total}, not 1")));
        }
        Ok(Self { scales, weights })
    }

    /// Full resolution only.
    pub fn single() -> Self {
        Self {
            scales: vec![1],
            weights: vec![1.0],
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (u32, f64)> + '_ {
        self.scales.iter().copied().zip(self.weights.iter().copied())
    }

    pub fn scales(&self) -> &[u32] {
        &self.scales
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
}

/// Decodes a PNG or JPEG file. Gray sources are replicated into three
/// channels and alpha is dropped.
pub fn load_image(path: impl AsRef<Path>) -> Result<RgbImage, ImageError> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => ImageError::NotFound(path.display().to_string()),
        _ => ImageError::Undecodable {
            path: path.display().to_string(),
            reason: e.to_string(),
        },
    })?;
    decode_image(&bytes).map_err(|reason| ImageError::Undecodable {
        path: path.display().to_string(),
        reason,
    })
}

pub fn decode_image(bytes: &[u8]) -> Result<RgbImage, String> {
    let decoded = image::load_from_memory(bytes).map_err(|e| e.to_string())?;
    let rgb = decoded.to_rgb8();
    let (w, h) = rgb.dimensions();
    let data = rgb.pixels().map(|p| p.0).collect();
    RgbImage::new(h as usize, w as usize, data).map_err(|e| e.to_string())
}

/// Overlap of each source cell with each target cell, in units of
/// `1 / target_len` source pixels. Each target cell's weights sum to `src_len`.
fn box_weights(src_len: usize, dst_len: usize) -> Vec<Vec<(usize, u64)>> {
    (0..dst_len)
        .map(|i| {
            let start = i * src_len;
            let end = (i + 1) * src_len;
            let first = start / dst_len;
            let last = (end - 1) / dst_len;
            (first..=last)
                .filter_map(|k| {
                    let lo = start.max(k * dst_len);
                    let hi = end.min((k + 1) * dst_len);
                    (hi > lo).then(|| (k, (hi - lo) as u64))
                })
                .collect()
        })
        .collect()
}

/// Exact area-average sums of a `height x width` grid of integers resized to
/// `target_h x target_w`. Every output is the sum of the covered inputs
/// weighted by overlap; the weights of each output total `height * width`,
/// so dividing by that area yields the box average.
pub fn box_sums(src: &[u64], height: usize, width: usize, target_h: usize, target_w: usize) -> Vec<u64> {
    debug_assert_eq!(src.len(), height * width);
    let wy = box_weights(height, target_h);
    let wx = box_weights(width, target_w);
    let mut rows = vec![0u64; height * target_w];
    for y in 0..height {
        for (ox, taps) in wx.iter().enumerate() {
            rows[y * target_w + ox] = taps.iter().map(|&(sx, w)| src[y * width + sx] * w).sum();
        }
    }
    let mut out = Vec::with_capacity(target_h * target_w);
    for taps in &wy {
        for ox in 0..target_w {
            out.push(taps.iter().map(|&(sy, w)| rows[sy * target_w + ox] * w).sum());
        }
    }
    out
}

/// Area-average resize. Channel means are rounded half away from zero.
pub fn resize(img: &RgbImage, target_h: usize, target_w: usize) -> Result<RgbImage, ImageError> {
    if target_h == 0 || target_w == 0 {
        return Err(ImageError::ZeroDimension {
            height: target_h,
            width: target_w,
        });
    }
    if target_h == img.height && target_w == img.width {
        return Ok(img.clone());
    }
    let denom = (img.height * img.width) as u64;
    let channels: Vec<Vec<u64>> = (0..3)
        .map(|c| {
            let src: Vec<u64> = img.data.iter().map(|p| u64::from(p[c])).collect();
            box_sums(&src, img.height, img.width, target_h, target_w)
        })
        .collect();
    // Nonnegative values, so half-up equals half-away-from-zero.
    let round = |s: u64| ((2 * s + denom) / (2 * denom)) as u8;
    let data = (0..target_h * target_w)
        .map(|i| [round(channels[0][i]), round(channels[1][i]), round(channels[2][i])])
        .collect();
    RgbImage::new(target_h, target_w, data)
}

/// Target dimensions for divisor `s`: `max(1, floor(n / s))` per axis.
pub fn scaled_dims(height: usize, width: usize, s: u32) -> (usize, usize) {
    let s = s.max(1) as usize;
    ((height / s).max(1), (width / s).max(1))
}

pub fn downscale_by(img: &RgbImage, s: u32) -> Result<RgbImage, ImageError> {
    if s == 0 {
        return Err(ImageError::Schedule("divisor must be at least 1".into()));
    }
    let (h, w) = scaled_dims(img.height, img.width, s);
    resize(img, h, w)
}
