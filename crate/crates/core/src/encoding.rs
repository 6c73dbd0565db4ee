//! Gramian Angular Summation Field encoding of tri-axial accelerometer windows.
//!
//! Each axis is length-reduced by piecewise aggregate approximation, rescaled
//! to `[-1, 1]`, mapped to polar angles `θ = arccos(x̂)` and expanded into the
//! matrix `G[i][j] = cos(θ_i + θ_j)`. The three matrices form one image.

use crate::error::{invalid, Result};

/// Slack allowed on `polar_encode` inputs before they are rejected.
pub const ARCCOS_TOLERANCE: f64 = 1e-12;

/// Image side used when none is given.
pub const DEFAULT_SIDE: usize = 32;

/// One fixed-length tri-axial accelerometer segment.
#[derive(Clone, Debug, PartialEq)]
pub struct SensorWindow {
    x: Vec<f64>,
    y: Vec<f64>,
    z: Vec<f64>,
    timestamps: Vec<f64>,
    label: usize,
}

impl SensorWindow {
    pub fn new(x: Vec<f64>, y: Vec<f64>, z: Vec<f64>, timestamps: Vec<f64>, label: usize) -> Result<Self> {
        let n = timestamps.len();
        if n < 2 {
            return invalid(format!("a window needs at least 2 samples, got {n}"));
        }
        if x.len() != n || y.len() != n || z.len() != n {
            return invalid(format!(
                "axis lengths ({}, {}, {}) differ from timestamp count {n}",
                x.len(),
                y.len(),
                z.len()
            ));
        }
        if let Some(i) = timestamps.windows(2).position(|w| !(w[1] > w[0])) {
            return invalid(format!("timestamps not strictly increasing at sample {}", i + 1));
        }
        Ok(Self { x, y, z, timestamps, label })
    }

    /// Builds a window with timestamps `0, dt, 2dt, …`.
    pub fn uniform(x: Vec<f64>, y: Vec<f64>, z: Vec<f64>, dt: f64, label: usize) -> Result<Self> {
        let ts = (0..x.len()).map(|i| i as f64 * dt).collect();
        Self::new(x, y, z, ts, label)
    }

    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    pub fn axis(&self, a: usize) -> &[f64] {
        match a {
            0 => &self.x,
            1 => &self.y,
            2 => &self.z,
            _ => panic!("axis index {a} out of range"),
        }
    }

    pub fn timestamps(&self) -> &[f64] {
        &self.timestamps
    }

    pub fn label(&self) -> usize {
        self.label
    }
}

/// Polar form of a normalized series: angles in `[0, π]` and radii equal to
/// the timestamps.
#[derive(Clone, Debug, PartialEq)]
pub struct PolarSeries {
    pub theta: Vec<f64>,
    pub radius: Vec<f64>,
}

/// Three `side × side` GASF matrices (x, y, z order), stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct GafImage {
    channels: [Vec<f64>; 3],
    side: usize,
    label: usize,
}

impl GafImage {
    pub fn from_channels(channels: [Vec<f64>; 3], side: usize, label: usize) -> Result<Self> {
        if channels.iter().any(|c| c.len() != side * side) {
            return invalid(format!("every channel must hold {side}×{side} values"));
        }
        Ok(Self { channels, side, label })
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn label(&self) -> usize {
        self.label
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        &self.channels[c]
    }

    pub fn get(&self, c: usize, i: usize, j: usize) -> f64 {
        self.channels[c][i * self.side + j]
    }

    /// Channel-major flat vector of `3·side²` values, the network input layout.
    pub fn flatten(&self) -> Vec<f64> {
        self.channels.concat()
    }
}

/// Affine rescaling of a series onto `[-1, 1]`. A constant series maps to zeros.
pub fn min_max_normalize(series: &[f64]) -> Result<Vec<f64>> {
    if series.is_empty() {
        return invalid("cannot normalize an empty series");
    }
    if series.iter().any(|v| !v.is_finite()) {
        return invalid("series contains non-finite values");
    }
    let min = series.iter().copied().fold(f64::INFINITY, f64::min);
    let max = series.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let range = max - min;
    if range == 0.0 {
        return Ok(vec![0.0; series.len()]);
    }
    Ok(series.iter().map(|&v| 2.0 * (v - min) / range - 1.0).collect())
}

pub fn polar_encode(normalized: &[f64], timestamps: &[f64]) -> Result<PolarSeries> {
    if normalized.len() != timestamps.len() {
        return invalid(format!("{} values but {} timestamps", normalized.len(), timestamps.len()));
    }
    let mut theta = Vec::with_capacity(normalized.len());
    for (i, &v) in normalized.iter().enumerate() {
        if !(v.abs() <= 1.0 + ARCCOS_TOLERANCE) {
            return invalid(format!("value {v} at index {i} is outside [-1, 1]; normalize first"));
        }
        theta.push(v.clamp(-1.0, 1.0).acos());
    }
    Ok(PolarSeries { theta, radius: timestamps.to_vec() })
}

/// `n × n` row-major matrix with entries `cos(θ_i + θ_j)`.
pub fn gasf_matrix(theta: &[f64]) -> Vec<f64> {
    let n = theta.len();
    let mut g = vec![0.0; n * n];
    for i in 0..n {
        for j in i..n {
            let v = (theta[i] + theta[j]).cos();
            g[i * n + j] = v;
            g[j * n + i] = v;
        }
    }
    g
}

/// Start offset of frame `k` when `n` samples are split into `frames` frames.
fn frame_start(k: usize, n: usize, frames: usize) -> usize {
    (k * n).div_ceil(frames)
}

/// Piecewise aggregate approximation: the mean of each of `target` contiguous
/// frames. Frame `k` starts at `⌈k·n/target⌉`, so earlier frames take the spare
/// samples when `n` is not a multiple of `target`.
pub fn paa_downsample(series: &[f64], target: usize) -> Result<Vec<f64>> {
    let n = series.len();
    if target < 1 || target > n {
        return invalid(format!("PAA target {target} must be within 1..={n}"));
    }
    Ok((0..target)
        .map(|k| {
            let frame = &series[frame_start(k, n, target)..frame_start(k + 1, n, target)];
            frame.iter().sum::<f64>() / frame.len() as f64
        })
        .collect())
}

/// Encodes a window into a `side × side × 3` GASF image.
pub fn encode_window(window: &SensorWindow, side: usize) -> Result<GafImage> {
    if side < 2 {
        return invalid(format!("image side must be at least 2, got {side}"));
    }
    let ts = paa_downsample(window.timestamps(), side)?;
    let mut channels: [Vec<f64>; 3] = Default::default();
    for (a, ch) in channels.iter_mut().enumerate() {
        let reduced = paa_downsample(window.axis(a), side)?;
        let normalized = min_max_normalize(&reduced)?;
        let polar = polar_encode(&normalized, &ts)?;
        *ch = gasf_matrix(&polar.theta);
    }
    GafImage::from_channels(channels, side, window.label())
}

/// 8-bit RGB raster of a GAF image, pixels interleaved row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RgbRaster {
    pub side: usize,
    pub pixels: Vec<u8>,
}

fn quantize_value(v: f64) -> u8 {
    ((v.clamp(-1.0, 1.0) + 1.0) * 127.5).round() as u8
}

/// Maps `[-1, 1]` linearly onto `0..=255`, channels x, y, z to R, G, B.
pub fn quantize_image(image: &GafImage) -> RgbRaster {
    let n = image.side * image.side;
    let mut pixels = Vec::with_capacity(3 * n);
    for p in 0..n {
        for c in 0..3 {
            pixels.push(quantize_value(image.channels[c][p]));
        }
    }
    RgbRaster { side: image.side, pixels }
}

/// Inverse of [`quantize_image`] up to the quantization step.
pub fn dequantize_image(raster: &RgbRaster, label: usize) -> Result<GafImage> {
    let n = raster.side * raster.side;
    if raster.pixels.len() != 3 * n {
        return invalid("raster size does not match its side");
    }
    let mut channels: [Vec<f64>; 3] = Default::default();
    for (c, ch) in channels.iter_mut().enumerate() {
        *ch = (0..n).map(|p| raster.pixels[3 * p + c] as f64 / 127.5 - 1.0).collect();
    }
    GafImage::from_channels(channels, raster.side, label)
}
