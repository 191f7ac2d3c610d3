use image::GrayImage;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Blur assumed to be present in the input raster.
const INPUT_SIGMA: f64 = 0.5;
const MIN_BASE_SIZE: u32 = 16;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScaleSpaceParams {
    /// `None` picks the octave count from the image size.
    pub octaves: Option<usize>,
    pub scales_per_octave: usize,
    pub sigma0: f64,
    pub contrast_threshold: f64,
    pub edge_threshold: f64,
    pub downsample_factor: u32,
}

impl Default for ScaleSpaceParams {
    fn default() -> Self {
        ScaleSpaceParams {
            octaves: None,
            scales_per_octave: 3,
            sigma0: 1.6,
            contrast_threshold: 0.04,
            edge_threshold: 10.0,
            downsample_factor: 2,
        }
    }
}

/// Single-channel f32 raster, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FloatImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

impl FloatImage {
    pub fn new(width: usize, height: usize) -> Self {
        FloatImage {
            width,
            height,
            data: vec![0.0; width * height],
        }
    }

    /// Intensities scaled to `[0, 1]`.
    pub fn from_gray(img: &GrayImage) -> Self {
        FloatImage {
            width: img.width() as usize,
            height: img.height() as usize,
            data: img.as_raw().iter().map(|&v| v as f32 / 255.0).collect(),
        }
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }

    /// Mean over `factor x factor` blocks; trailing partial blocks are dropped.
    pub fn downsample_area(&self, factor: usize) -> FloatImage {
        if factor <= 1 {
            return self.clone();
        }
        let (w, h) = (self.width / factor, self.height / factor);
        let inv = 1.0 / (factor * factor) as f32;
        let mut out = FloatImage::new(w, h);
        for y in 0..h {
            for x in 0..w {
                let mut s = 0.0;
                for yy in y * factor..(y + 1) * factor {
                    for xx in x * factor..(x + 1) * factor {
                        s += self.at(xx, yy);
                    }
                }
                out.data[y * w + x] = s * inv;
            }
        }
        out
    }

    /// Every second pixel, starting at 0.
    pub fn subsample2(&self) -> FloatImage {
        let (w, h) = (self.width.div_ceil(2), self.height.div_ceil(2));
        let mut out = FloatImage::new(w, h);
        for y in 0..h {
            for x in 0..w {
                out.data[y * w + x] = self.at(2 * x, 2 * y);
            }
        }
        out
    }

    /// Separable Gaussian blur with replicated borders.
    pub fn gaussian_blur(&self, sigma: f64) -> FloatImage {
        if sigma <= 0.0 {
            return self.clone();
        }
        let radius = (3.0 * sigma).ceil().max(1.0) as isize;
        let mut kernel: Vec<f32> = (-radius..=radius)
            .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp() as f32)
            .collect();
        let total: f32 = kernel.iter().sum();
        kernel.iter_mut().for_each(|k| *k /= total);

        let (w, h) = (self.width as isize, self.height as isize);
        let mut tmp = FloatImage::new(self.width, self.height);
        for y in 0..h {
            let row = &self.data[(y * w) as usize..((y + 1) * w) as usize];
            for x in 0..w {
                let mut acc = 0.0;
                for (k, &kv) in kernel.iter().enumerate() {
                    let xx = (x + k as isize - radius).clamp(0, w - 1);
                    acc += kv * row[xx as usize];
                }
                tmp.data[(y * w + x) as usize] = acc;
            }
        }
        let mut out = FloatImage::new(self.width, self.height);
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for (k, &kv) in kernel.iter().enumerate() {
                    let yy = (y + k as isize - radius).clamp(0, h - 1);
                    acc += kv * tmp.data[(yy * w + x) as usize];
                }
                out.data[(y * w + x) as usize] = acc;
            }
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct Octave {
    /// `scales_per_octave + 3` Gaussian levels.
    pub gaussians: Vec<FloatImage>,
    /// `gaussians[i] - gaussians[i + 1]`: dark blobs give negative responses.
    pub dogs: Vec<FloatImage>,
}

/// Gaussian and difference-of-Gaussians pyramid of a (downsampled) image.
#[derive(Debug, Clone)]
pub struct ScaleSpace {
    pub params: ScaleSpaceParams,
    pub octaves: Vec<Octave>,
    /// Size of the image the pyramid was built from, before downsampling.
    pub source_width: u32,
    pub source_height: u32,
}

impl ScaleSpace {
    /// Blur of Gaussian level `layer` relative to its own octave's pixel grid.
    pub fn level_sigma(&self, layer: f64) -> f64 {
        self.params.sigma0 * 2f64.powf(layer / self.params.scales_per_octave as f64)
    }

    /// Octave pixel coordinates to source-image coordinates.
    pub fn to_source(&self, octave: usize, x: f64, y: f64) -> (f64, f64) {
        let f = self.params.downsample_factor.max(1) as f64;
        let step = (1usize << octave) as f64;
        let off = (f - 1.0) / 2.0;
        (x * step * f + off, y * step * f + off)
    }

    pub fn from_source(&self, octave: usize, x: f64, y: f64) -> (f64, f64) {
        let f = self.params.downsample_factor.max(1) as f64;
        let step = (1usize << octave) as f64;
        let off = (f - 1.0) / 2.0;
        ((x - off) / (step * f), (y - off) / (step * f))
    }

    /// Scale in octave pixels to scale in source pixels.
    pub fn scale_to_source(&self, octave: usize, sigma: f64) -> f64 {
        sigma * (1usize << octave) as f64 * self.params.downsample_factor.max(1) as f64
    }

    pub fn base_size(&self) -> (usize, usize) {
        let g = &self.octaves[0].gaussians[0];
        (g.width, g.height)
    }
}

fn auto_octaves(width: usize, height: usize) -> usize {
    let min_dim = width.min(height) as f64;
    ((min_dim.log2().floor() as i64) - 2).max(1) as usize
}

/// Downsamples by area averaging, then builds the Gaussian pyramid (octaves
/// halve the resolution) and the difference-of-Gaussians levels.
pub fn build_scale_space(img: &GrayImage, params: &ScaleSpaceParams) -> Result<ScaleSpace> {
    if params.scales_per_octave < 1 || params.downsample_factor < 1 || params.sigma0 <= INPUT_SIGMA
    {
        return Err(Error::InvalidArgument(format!(
            "bad scale-space parameters {params:?}"
        )));
    }
    let f = params.downsample_factor;
    let (bw, bh) = (img.width() / f, img.height() / f);
    if bw < MIN_BASE_SIZE || bh < MIN_BASE_SIZE {
        return Err(Error::ImageTooSmall {
            width: bw,
            height: bh,
        });
    }
    let base = FloatImage::from_gray(img).downsample_area(f as usize);
    let n_octaves = params
        .octaves
        .unwrap_or_else(|| auto_octaves(bw as usize, bh as usize));
    let s = params.scales_per_octave;
    let sigmas: Vec<f64> = (0..s + 3)
        .map(|i| params.sigma0 * 2f64.powf(i as f64 / s as f64))
        .collect();

    let mut octaves: Vec<Octave> = Vec::with_capacity(n_octaves);
    let mut first = base.gaussian_blur((params.sigma0.powi(2) - INPUT_SIGMA.powi(2)).sqrt());
    for o in 0..n_octaves {
        if o > 0 {
            let prev = &octaves[o - 1].gaussians[s];
            if prev.width < 4 || prev.height < 4 {
                break;
            }
            first = prev.subsample2();
        }
        let mut gaussians = vec![first.clone()];
        for i in 1..s + 3 {
            let inc = (sigmas[i].powi(2) - sigmas[i - 1].powi(2)).sqrt();
            let next = gaussians[i - 1].gaussian_blur(inc);
            gaussians.push(next);
        }
        let dogs = gaussians
            .windows(2)
            .map(|pair| FloatImage {
                width: pair[0].width,
                height: pair[0].height,
                data: pair[0]
                    .data
                    .iter()
                    .zip(&pair[1].data)
                    .map(|(a, b)| a - b)
                    .collect(),
            })
            .collect();
        octaves.push(Octave { gaussians, dogs });
    }
    Ok(ScaleSpace {
        params: *params,
        octaves,
        source_width: img.width(),
        source_height: img.height(),
    })
}
