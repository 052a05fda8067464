//! Box-filter downscaling and SSIM.

use std::fmt;
use std::num::NonZeroU32;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::manifest::Frame;

#[derive(Debug, Error, PartialEq)]
pub enum ImagingError {
    #[error("frame dimensions differ: {a:?} vs {b:?}")]
    DimensionMismatch { a: (u32, u32), b: (u32, u32) },
    #[error("invalid SSIM parameters: {0}")]
    InvalidParams(String),
    #[error("scale inverse must be at least 1")]
    ZeroScale,
}

/// Downscale factor `1/inverse`. `inverse == 1` is the identity.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u32", into = "u32")]
pub struct ScaleFactor(NonZeroU32);

impl ScaleFactor {
    pub const IDENTITY: ScaleFactor = ScaleFactor(NonZeroU32::MIN);
    /// 1/32, the default for 576x576-class frames.
    pub const DEFAULT: ScaleFactor = match NonZeroU32::new(32) {
        Some(n) => ScaleFactor(n),
        None => unreachable!(),
    };

    pub fn new(inverse: u32) -> Result<Self, ImagingError> {
        NonZeroU32::new(inverse)
            .map(Self)
            .ok_or(ImagingError::ZeroScale)
    }

    pub fn inverse(self) -> u32 {
        self.0.get()
    }
}

impl Default for ScaleFactor {
    fn default() -> Self {
        Self::DEFAULT
    }
}

impl TryFrom<u32> for ScaleFactor {
    type Error = ImagingError;

    fn try_from(value: u32) -> Result<Self, Self::Error> {
        Self::new(value)
    }
}

impl From<ScaleFactor> for u32 {
    fn from(s: ScaleFactor) -> u32 {
        s.inverse()
    }
}

impl fmt::Display for ScaleFactor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "1/{}", self.inverse())
    }
}

impl FromStr for ScaleFactor {
    type Err = String;

    /// Accepts `32` or `1/32`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let digits = s.trim().strip_prefix("1/").unwrap_or(s.trim());
        let n: u32 = digits.parse().map_err(|_| format!("invalid scale {s:?}"))?;
        Self::new(n).map_err(|e| e.to_string())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SsimWindow {
    /// 11x11 Gaussian, sigma 1.5.
    Gaussian11,
    /// 7x7 uniform.
    Uniform7,
    /// One set of statistics over the whole image.
    #[default]
    Global,
}

impl SsimWindow {
    fn size(self) -> Option<usize> {
        match self {
            SsimWindow::Gaussian11 => Some(11),
            SsimWindow::Uniform7 => Some(7),
            SsimWindow::Global => None,
        }
    }

    fn weights(self) -> Vec<f64> {
        match self {
            SsimWindow::Gaussian11 => {
                let raw: Vec<f64> = (0..11)
                    .map(|i| {
                        let d = i as f64 - 5.0;
                        (-(d * d) / (2.0 * 1.5 * 1.5)).exp()
                    })
                    .collect();
                let total: f64 = raw.iter().sum();
                raw.into_iter().map(|w| w / total).collect()
            }
            SsimWindow::Uniform7 => vec![1.0 / 7.0; 7],
            SsimWindow::Global => Vec::new(),
        }
    }
}

impl FromStr for SsimWindow {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "gaussian11" | "gaussian_11_sigma_1_5" => Ok(SsimWindow::Gaussian11),
            "uniform7" | "uniform_7" => Ok(SsimWindow::Uniform7),
            "global" => Ok(SsimWindow::Global),
            other => Err(format!("unknown SSIM window {other:?}")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SsimParams {
    pub dynamic_range: f64,
    pub k1: f64,
    pub k2: f64,
    pub window: SsimWindow,
}

impl Default for SsimParams {
    fn default() -> Self {
        Self {
            dynamic_range: 255.0,
            k1: 0.01,
            k2: 0.03,
            window: SsimWindow::Global,
        }
    }
}

impl SsimParams {
    pub fn with_window(self, window: SsimWindow) -> Self {
        Self { window, ..self }
    }

    pub fn validate(&self) -> Result<(), ImagingError> {
        let ok = |v: f64| v.is_finite() && v > 0.0;
        if !ok(self.dynamic_range) || !ok(self.k1) || !ok(self.k2) {
            return Err(ImagingError::InvalidParams(format!(
                "L={}, k1={}, k2={} must all be finite and positive",
                self.dynamic_range, self.k1, self.k2
            )));
        }
        Ok(())
    }

    pub fn c1(&self) -> f64 {
        (self.k1 * self.dynamic_range).powi(2)
    }

    pub fn c2(&self) -> f64 {
        (self.k2 * self.dynamic_range).powi(2)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SsimScore {
    pub value: f64,
    /// Window actually used; differs from the requested one after a fallback.
    pub window: SsimWindow,
    /// Set when the image was smaller than the requested window.
    pub fell_back_to_global: bool,
}

/// Area downscale by `scale`.
///
/// Output pixel `(x, y)` is the mean of the source box
/// `[x*k, min((x+1)*k, w)) x [y*k, min((y+1)*k, h))`, rounded half away
/// from zero. Edge boxes are truncated, never padded.
pub fn downscale(frame: &Frame, scale: ScaleFactor) -> Frame {
    let k = scale.inverse() as usize;
    if k == 1 {
        return frame.clone();
    }
    let (w, h) = (frame.width() as usize, frame.height() as usize);
    let (ow, oh) = (w.div_ceil(k), h.div_ceil(k));
    let src = frame.pixels();

    // Column sums per output column, accumulated row band by row band.
    let mut out = Vec::with_capacity(ow * oh);
    let mut band = vec![0u64; ow];
    for oy in 0..oh {
        band.iter_mut().for_each(|s| *s = 0);
        let y0 = oy * k;
        let y1 = (y0 + k).min(h);
        for row in src[y0 * w..y1 * w].chunks_exact(w) {
            for (ox, chunk) in row.chunks(k).enumerate() {
                band[ox] += chunk.iter().map(|&p| p as u64).sum::<u64>();
            }
        }
        let rows = (y1 - y0) as u64;
        for (ox, &sum) in band.iter().enumerate() {
            let cols = ((ox * k + k).min(w) - ox * k) as u64;
            let count = rows * cols;
            // round(sum / count), halves away from zero
            out.push(((2 * sum + count) / (2 * count)) as u8);
        }
    }
    Frame::new(ow as u32, oh as u32, out).expect("downscaled dims are non-zero")
}

/// Structural similarity between two equally sized frames.
///
/// Windowed variants average the local index over every fully contained
/// window position. Frames smaller than the window fall back to global
/// statistics, which is reported in the result.
pub fn ssim(a: &Frame, b: &Frame, params: &SsimParams) -> Result<SsimScore, ImagingError> {
    if a.dims() != b.dims() {
        return Err(ImagingError::DimensionMismatch {
            a: a.dims(),
            b: b.dims(),
        });
    }
    params.validate()?;
    let (w, h) = (a.width() as usize, a.height() as usize);
    let (window, fell_back) = match params.window.size() {
        Some(size) if size > w || size > h => (SsimWindow::Global, true),
        _ => (params.window, false),
    };
    let value = match window {
        SsimWindow::Global => global_ssim(a.pixels(), b.pixels(), params),
        windowed => windowed_ssim(a.pixels(), b.pixels(), w, h, &windowed.weights(), params),
    };
    Ok(SsimScore {
        value: value.clamp(-1.0, 1.0),
        window,
        fell_back_to_global: fell_back,
    })
}

/// `ssim(downscale(a), downscale(b))`, the pairwise similarity feature.
pub fn pair_score(
    a: &Frame,
    b: &Frame,
    scale: ScaleFactor,
    params: &SsimParams,
) -> Result<f64, ImagingError> {
    if a.dims() != b.dims() {
        return Err(ImagingError::DimensionMismatch {
            a: a.dims(),
            b: b.dims(),
        });
    }
    Ok(ssim(&downscale(a, scale), &downscale(b, scale), params)?.value)
}

fn ssim_index(mu_a: f64, mu_b: f64, var_a: f64, var_b: f64, cov: f64, c1: f64, c2: f64) -> f64 {
    ((2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2))
        / ((mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2))
}

fn global_ssim(a: &[u8], b: &[u8], params: &SsimParams) -> f64 {
    let n = a.len() as f64;
    let mu_a = a.iter().map(|&v| v as f64).sum::<f64>() / n;
    let mu_b = b.iter().map(|&v| v as f64).sum::<f64>() / n;
    let (mut var_a, mut var_b, mut cov) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.iter().zip(b) {
        let dx = x as f64 - mu_a;
        let dy = y as f64 - mu_b;
        var_a += dx * dx;
        var_b += dy * dy;
        cov += dx * dy;
    }
    ssim_index(
        mu_a,
        mu_b,
        var_a / n,
        var_b / n,
        cov / n,
        params.c1(),
        params.c2(),
    )
}

/// Separable "valid" filtering of a plane with a 1-D kernel in both axes.
fn filter_valid(plane: &[f64], w: usize, h: usize, kernel: &[f64]) -> Vec<f64> {
    let k = kernel.len();
    let ow = w - k + 1;
    let oh = h - k + 1;
    let mut horiz = vec![0.0; ow * h];
    for y in 0..h {
        let row = &plane[y * w..(y + 1) * w];
        for x in 0..ow {
            horiz[y * ow + x] = row[x..x + k].iter().zip(kernel).map(|(p, q)| p * q).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..k).map(|j| horiz[(y + j) * ow + x] * kernel[j]).sum();
        }
    }
    out
}

fn windowed_ssim(
    a: &[u8],
    b: &[u8],
    w: usize,
    h: usize,
    kernel: &[f64],
    params: &SsimParams,
) -> f64 {
    let fa: Vec<f64> = a.iter().map(|&v| v as f64).collect();
    let fb: Vec<f64> = b.iter().map(|&v| v as f64).collect();
    let aa: Vec<f64> = fa.iter().map(|v| v * v).collect();
    let bb: Vec<f64> = fb.iter().map(|v| v * v).collect();
    let ab: Vec<f64> = fa.iter().zip(&fb).map(|(x, y)| x * y).collect();

    let mu_a = filter_valid(&fa, w, h, kernel);
    let mu_b = filter_valid(&fb, w, h, kernel);
    let e_aa = filter_valid(&aa, w, h, kernel);
    let e_bb = filter_valid(&bb, w, h, kernel);
    let e_ab = filter_valid(&ab, w, h, kernel);

    let (c1, c2) = (params.c1(), params.c2());
    let total: f64 = (0..mu_a.len())
        .map(|i| {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            ssim_index(
                ma,
                mb,
                e_aa[i] - ma * ma,
                e_bb[i] - mb * mb,
                e_ab[i] - ma * mb,
                c1,
                c2,
            )
        })
        .sum();
    total / mu_a.len() as f64
}
