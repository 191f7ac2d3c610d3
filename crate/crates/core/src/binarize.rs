//! Ink segmentation: Otsu, Sauvola, Su's local-contrast method, or masks
//! supplied from outside (for instance by a neural binarizer).

use std::path::Path;

use image::{GrayImage, Luma};
use serde::{Deserialize, Serialize};

use crate::corpus::load_gray;
use crate::error::{Error, Result};

/// Binary ink/background raster, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InkMask {
    width: u32,
    height: u32,
    data: Vec<bool>,
}

impl InkMask {
    pub fn new(width: u32, height: u32) -> Self {
        InkMask {
            width,
            height,
            data: vec![false; width as usize * height as usize],
        }
    }

    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> bool) -> Self {
        let mut data = Vec::with_capacity(width as usize * height as usize);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        InkMask {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn dimensions(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn is_ink(&self, x: u32, y: u32) -> bool {
        self.data[y as usize * self.width as usize + x as usize]
    }

    pub fn set(&mut self, x: u32, y: u32, ink: bool) {
        self.data[y as usize * self.width as usize + x as usize] = ink;
    }

    pub fn ink_count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.data
    }

    /// Black ink (0) on white background (255).
    pub fn to_image(&self) -> GrayImage {
        GrayImage::from_fn(self.width, self.height, |x, y| {
            Luma([if self.is_ink(x, y) { 0 } else { 255 }])
        })
    }

    /// Any value below 128 counts as ink.
    pub fn from_image(img: &GrayImage) -> Self {
        InkMask::from_fn(img.width(), img.height(), |x, y| {
            img.get_pixel(x, y).0[0] < 128
        })
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        self.to_image().save(path).map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load_png(path: &Path) -> Result<Self> {
        Ok(InkMask::from_image(&load_gray(path)?))
    }

    /// Pixel precision/recall F-measure of `self` against a ground-truth mask.
    pub fn f_measure(&self, truth: &InkMask) -> f64 {
        let mut tp = 0usize;
        let mut fp = 0usize;
        let mut fn_ = 0usize;
        for (&p, &t) in self.data.iter().zip(&truth.data) {
            match (p, t) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
                _ => {}
            }
        }
        if tp == 0 {
            return if fp == 0 && fn_ == 0 { 1.0 } else { 0.0 };
        }
        let precision = tp as f64 / (tp + fp) as f64;
        let recall = tp as f64 / (tp + fn_) as f64;
        2.0 * precision * recall / (precision + recall)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SuParams {
    pub contrast_eps: f64,
    pub window: u32,
    pub min_high_contrast: u32,
}

impl Default for SuParams {
    fn default() -> Self {
        SuParams {
            contrast_eps: 1e-8,
            window: 9,
            min_high_contrast: 9,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SauvolaParams {
    pub window: u32,
    pub k: f64,
    pub r: f64,
}

impl Default for SauvolaParams {
    fn default() -> Self {
        SauvolaParams {
            window: 31,
            k: 0.2,
            r: 128.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Method<'a> {
    Otsu,
    Sauvola(SauvolaParams),
    Su(SuParams),
    /// Precomputed mask PNG for this image.
    External(&'a Path),
}

fn check_window(window: u32) -> Result<()> {
    if window < 3 || window % 2 == 0 {
        return Err(Error::InvalidArgument(format!(
            "window must be odd and >= 3, got {window}"
        )));
    }
    Ok(())
}

/// Otsu threshold: the `t` maximizing between-class variance of `{<= t}` vs
/// `{> t}`, smallest `t` on ties. A single-valued histogram returns that
/// value and logs a warning.
pub fn otsu_threshold(histogram: &[u64; 256]) -> Result<u8> {
    let total: u64 = histogram.iter().sum();
    if total == 0 {
        return Err(Error::EmptyHistogram);
    }
    let nonzero: Vec<usize> = (0..256).filter(|&i| histogram[i] > 0).collect();
    if nonzero.len() == 1 {
        log::warn!("degenerate histogram with a single level {}", nonzero[0]);
        return Ok(nonzero[0] as u8);
    }
    let total_sum: u64 = histogram
        .iter()
        .enumerate()
        .map(|(i, &c)| i as u64 * c)
        .sum();
    let mut best_t = 0u8;
    let mut best_var = -1.0f64;
    let mut w0 = 0u64;
    let mut sum0 = 0u64;
    for t in 0..256usize {
        w0 += histogram[t];
        sum0 += t as u64 * histogram[t];
        let w1 = total - w0;
        if w0 == 0 || w1 == 0 {
            continue;
        }
        let mu0 = sum0 as f64 / w0 as f64;
        let mu1 = (total_sum - sum0) as f64 / w1 as f64;
        let var = w0 as f64 * w1 as f64 * (mu0 - mu1) * (mu0 - mu1);
        if var > best_var {
            best_var = var;
            best_t = t as u8;
        }
    }
    Ok(best_t)
}

pub fn histogram(img: &GrayImage) -> [u64; 256] {
    let mut h = [0u64; 256];
    for p in img.as_raw() {
        h[*p as usize] += 1;
    }
    h
}

/// Global Otsu binarization; ink is the dark side `<= t`. Single-level
/// images have no contrast and produce an empty mask.
pub fn otsu(img: &GrayImage) -> Result<InkMask> {
    let h = histogram(img);
    if h.iter().filter(|&&c| c > 0).count() <= 1 {
        otsu_threshold(&h)?;
        return Ok(InkMask::new(img.width(), img.height()));
    }
    let t = otsu_threshold(&h)?;
    Ok(InkMask::from_fn(img.width(), img.height(), |x, y| {
        img.get_pixel(x, y).0[0] <= t
    }))
}

/// Summed-area table with one row/column of zero padding.
struct Integral {
    width: usize,
    data: Vec<u64>,
}

impl Integral {
    fn new(width: usize, height: usize, value: impl Fn(usize, usize) -> u64) -> Self {
        let w1 = width + 1;
        let mut data = vec![0u64; w1 * (height + 1)];
        for y in 0..height {
            let mut row = 0u64;
            for x in 0..width {
                row += value(x, y);
                data[(y + 1) * w1 + x + 1] = data[y * w1 + x + 1] + row;
            }
        }
        Integral { width, data }
    }

    /// Sum over the inclusive rectangle `[x0, x1] x [y0, y1]`.
    fn sum(&self, x0: usize, y0: usize, x1: usize, y1: usize) -> u64 {
        let w1 = self.width + 1;
        self.data[(y1 + 1) * w1 + x1 + 1] + self.data[y0 * w1 + x0]
            - self.data[y0 * w1 + x1 + 1]
            - self.data[(y1 + 1) * w1 + x0]
    }
}

/// Window `[c - r, c + r]` clipped to `[0, len)`.
fn clip(c: usize, r: usize, len: usize) -> (usize, usize) {
    (c.saturating_sub(r), (c + r).min(len - 1))
}

/// Sauvola threshold `mean * (1 + k * (std / R - 1))` for every pixel, from
/// integral images over a window clipped at the borders.
pub fn sauvola_thresholds(img: &GrayImage, params: &SauvolaParams) -> Result<Vec<f64>> {
    check_window(params.window)?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let raw = img.as_raw();
    let sum = Integral::new(w, h, |x, y| raw[y * w + x] as u64);
    let sq = Integral::new(w, h, |x, y| {
        let v = raw[y * w + x] as u64;
        v * v
    });
    let r = params.window as usize / 2;
    let mut out = Vec::with_capacity(w * h);
    for y in 0..h {
        let (y0, y1) = clip(y, r, h);
        for x in 0..w {
            let (x0, x1) = clip(x, r, w);
            let n = ((x1 - x0 + 1) * (y1 - y0 + 1)) as f64;
            let mean = sum.sum(x0, y0, x1, y1) as f64 / n;
            let var = (sq.sum(x0, y0, x1, y1) as f64 / n - mean * mean).max(0.0);
            out.push(mean * (1.0 + params.k * (var.sqrt() / params.r - 1.0)));
        }
    }
    Ok(out)
}

pub fn sauvola(img: &GrayImage, params: &SauvolaParams) -> Result<InkMask> {
    let thresholds = sauvola_thresholds(img, params)?;
    let raw = img.as_raw();
    let w = img.width() as usize;
    Ok(InkMask::from_fn(img.width(), img.height(), |x, y| {
        let i = y as usize * w + x as usize;
        raw[i] as f64 <= thresholds[i]
    }))
}

/// Local contrast `(max - min) / (max + min + eps)` over the 3x3
/// neighborhood (clipped at the borders), row-major.
pub fn su_contrast(img: &GrayImage, eps: f64) -> Vec<f64> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let raw = img.as_raw();
    let mut out = Vec::with_capacity(w * h);
    for y in 0..h {
        let (y0, y1) = clip(y, 1, h);
        for x in 0..w {
            let (x0, x1) = clip(x, 1, w);
            let mut lo = u8::MAX;
            let mut hi = u8::MIN;
            for yy in y0..=y1 {
                for &v in &raw[yy * w + x0..=yy * w + x1] {
                    lo = lo.min(v);
                    hi = hi.max(v);
                }
            }
            let (lo, hi) = (lo as f64, hi as f64);
            out.push((hi - lo) / (hi + lo + eps));
        }
    }
    out
}

/// Intermediate maps of Su's method, exposed for inspection.
#[derive(Debug, Clone)]
pub struct SuMaps {
    pub contrast: Vec<f64>,
    /// Otsu threshold on the contrast map quantized to 0..=255.
    pub contrast_threshold: u8,
    pub high_contrast: Vec<bool>,
    /// Number of high-contrast pixels in each pixel's window.
    pub high_contrast_count: Vec<u32>,
    pub mask: InkMask,
}

fn quantize_contrast(c: f64) -> u8 {
    (c * 255.0).round().clamp(0.0, 255.0) as u8
}

/// Su's binarization: high-contrast pixels are the Otsu-selected part of the
/// contrast map; a pixel is ink when its window holds at least
/// `min_high_contrast` of them and its intensity is below the mean plus half
/// the standard deviation of those pixels' intensities.
pub fn su_maps(img: &GrayImage, params: &SuParams) -> Result<SuMaps> {
    check_window(params.window)?;
    if params.min_high_contrast < 1 {
        return Err(Error::InvalidArgument(
            "min_high_contrast must be >= 1".into(),
        ));
    }
    if !(params.contrast_eps > 0.0) {
        return Err(Error::InvalidArgument("contrast_eps must be > 0".into()));
    }
    let (w, h) = (img.width() as usize, img.height() as usize);
    let raw = img.as_raw();
    let contrast = su_contrast(img, params.contrast_eps);

    let mut hist = [0u64; 256];
    for &c in &contrast {
        hist[quantize_contrast(c) as usize] += 1;
    }
    let t = otsu_threshold(&hist)?;
    let high: Vec<bool> = contrast.iter().map(|&c| quantize_contrast(c) > t).collect();

    let count = Integral::new(w, h, |x, y| high[y * w + x] as u64);
    let sum = Integral::new(w, h, |x, y| {
        if high[y * w + x] {
            raw[y * w + x] as u64
        } else {
            0
        }
    });
    let sq = Integral::new(w, h, |x, y| {
        if high[y * w + x] {
            let v = raw[y * w + x] as u64;
            v * v
        } else {
            0
        }
    });

    let r = params.window as usize / 2;
    let mut counts = Vec::with_capacity(w * h);
    let mut mask = InkMask::new(img.width(), img.height());
    for y in 0..h {
        let (y0, y1) = clip(y, r, h);
        for x in 0..w {
            let (x0, x1) = clip(x, r, w);
            let n = count.sum(x0, y0, x1, y1);
            counts.push(n as u32);
            if n < params.min_high_contrast as u64 || n == 0 {
                continue;
            }
            let nf = n as f64;
            let mean = sum.sum(x0, y0, x1, y1) as f64 / nf;
            let std = (sq.sum(x0, y0, x1, y1) as f64 / nf - mean * mean)
                .max(0.0)
                .sqrt();
            // strict: a window whose high-contrast pixels all share the
            // pixel's own intensity carries no evidence of ink
            if (raw[y * w + x] as f64) < mean + std / 2.0 {
                mask.set(x as u32, y as u32, true);
            }
        }
    }
    Ok(SuMaps {
        contrast,
        contrast_threshold: t,
        high_contrast: high,
        high_contrast_count: counts,
        mask,
    })
}

pub fn su(img: &GrayImage, params: &SuParams) -> Result<InkMask> {
    Ok(su_maps(img, params)?.mask)
}

/// Runs the chosen binarizer. `External` reads the mask file and checks its
/// size against the image.
pub fn binarize(doc_id: &str, img: &GrayImage, method: &Method<'_>) -> Result<InkMask> {
    if img.width() == 0 || img.height() == 0 {
        return Err(Error::InvalidArgument(format!("{doc_id}: empty image")));
    }
    match method {
        Method::Otsu => otsu(img),
        Method::Sauvola(p) => sauvola(img, p),
        Method::Su(p) => su(img, p),
        Method::External(path) => {
            let mask = InkMask::load_png(path)?;
            if mask.dimensions() != img.dimensions() {
                return Err(Error::MaskDimensionMismatch {
                    doc_id: doc_id.to_string(),
                    mask: mask.dimensions(),
                    image: img.dimensions(),
                });
            }
            Ok(mask)
        }
    }
}
