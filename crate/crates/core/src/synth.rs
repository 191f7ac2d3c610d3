//! Synthetic handwriting pages for tests and demos.
//!
//! Every writer owns a small alphabet of curved strokes plus a slant,
//! stroke width and glyph size. Pages of one writer reuse that alphabet in
//! a fresh random arrangement, so documents of the same hand share local
//! shapes while their layout differs.

use std::fs;
use std::path::Path;

use image::{GrayImage, Luma};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::binarize::InkMask;
use crate::error::{Error, Result};

pub const GROUND: f64 = 225.0;
pub const INK: f64 = 45.0;

/// Quadratic Bezier in glyph-box coordinates ([0,1] x [0,1]).
#[derive(Debug, Clone, Copy)]
struct Stroke {
    p: [(f64, f64); 3],
}

/// Strokes plus filled dots, both in glyph-box coordinates.
#[derive(Debug, Clone)]
struct Glyph {
    strokes: Vec<Stroke>,
    dots: Vec<(f64, f64)>,
}

#[derive(Debug, Clone)]
pub struct Hand {
    glyphs: Vec<Glyph>,
    pub slant: f64,
    pub stroke_width: f64,
    pub glyph_height: f64,
    pub dot_radius: f64,
    /// Blot radius at stroke starts, as a multiple of the stroke width.
    pub blot: f64,
    pub aspect: f64,
}

impl Hand {
    pub fn random(rng: &mut impl Rng) -> Self {
        let n_glyphs = rng.random_range(5..=8);
        let glyphs = (0..n_glyphs)
            .map(|_| Glyph {
                strokes: (0..rng.random_range(1..=3))
                    .map(|_| Stroke {
                        p: [
                            (rng.random::<f64>(), rng.random::<f64>()),
                            (rng.random_range(-0.3..1.3), rng.random_range(-0.3..1.3)),
                            (rng.random::<f64>(), rng.random::<f64>()),
                        ],
                    })
                    .collect(),
                dots: (0..rng.random_range(0..=2))
                    .map(|_| (rng.random::<f64>(), rng.random::<f64>()))
                    .collect(),
            })
            .collect();
        Hand {
            glyphs,
            slant: rng.random_range(-0.5..0.5),
            stroke_width: rng.random_range(3.8..6.5),
            glyph_height: rng.random_range(26.0..40.0),
            dot_radius: rng.random_range(2.5..5.5),
            blot: rng.random_range(0.8..1.3),
            aspect: rng.random_range(0.6..1.1),
        }
    }

    pub fn n_glyphs(&self) -> usize {
        self.glyphs.len()
    }
}

fn seg_dist2(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 {
        (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let (ex, ey) = (a.0 + t * dx - p.0, a.1 + t * dy - p.1);
    ex * ex + ey * ey
}

/// Renders pages; `coverage` holds per-pixel ink coverage in [0, 1].
struct Canvas {
    w: u32,
    h: u32,
    coverage: Vec<f64>,
}

impl Canvas {
    fn new(w: u32, h: u32) -> Self {
        Canvas {
            w,
            h,
            coverage: vec![0.0; (w * h) as usize],
        }
    }

    /// Polyline with a one-pixel soft edge.
    fn polyline(&mut self, pts: &[(f64, f64)], width: f64) {
        let r = width / 2.0;
        let pad = r + 1.5;
        let (mut x0, mut y0, mut x1, mut y1) = (f64::MAX, f64::MAX, f64::MIN, f64::MIN);
        for &(x, y) in pts {
            x0 = x0.min(x);
            y0 = y0.min(y);
            x1 = x1.max(x);
            y1 = y1.max(y);
        }
        let xs = (x0 - pad).floor().max(0.0) as u32;
        let ys = (y0 - pad).floor().max(0.0) as u32;
        let xe = ((x1 + pad).ceil().max(0.0) as u32).min(self.w);
        let ye = ((y1 + pad).ceil().max(0.0) as u32).min(self.h);
        for y in ys..ye {
            for x in xs..xe {
                let c = (x as f64 + 0.5, y as f64 + 0.5);
                let d2 = pts
                    .windows(2)
                    .map(|s| seg_dist2(c, s[0], s[1]))
                    .fold(f64::MAX, f64::min);
                let cov = (r + 0.5 - d2.sqrt()).clamp(0.0, 1.0);
                let slot = &mut self.coverage[(y * self.w + x) as usize];
                *slot = slot.max(cov);
            }
        }
    }
}

/// A rendered page with its ground-truth ink (coverage >= 0.5).
pub struct Page {
    pub image: GrayImage,
    pub truth: InkMask,
}

/// Papyrus-like ground: low-frequency mottling plus horizontal fibres,
/// peak-to-peak roughly `2 * amplitude` gray levels.
struct Texture {
    waves: Vec<(f64, f64, f64)>,
    fibre_period: f64,
    fibre_phase: f64,
    wobble: f64,
    amplitude: f64,
}

impl Texture {
    fn random(rng: &mut impl Rng, amplitude: f64) -> Self {
        let waves = (0..4)
            .map(|_| {
                let period = rng.random_range(60.0..240.0);
                let angle = rng.random_range(0.0..std::f64::consts::PI);
                let f = 2.0 * std::f64::consts::PI / period;
                (f * angle.cos(), f * angle.sin(), rng.random_range(0.0..6.3))
            })
            .collect();
        Texture {
            waves,
            fibre_period: rng.random_range(7.0..13.0),
            fibre_phase: rng.random_range(0.0..6.3),
            wobble: rng.random_range(40.0..90.0),
            amplitude,
        }
    }

    fn at(&self, x: f64, y: f64) -> f64 {
        let mottle: f64 = self
            .waves
            .iter()
            .map(|&(fx, fy, ph)| (fx * x + fy * y + ph).cos())
            .sum::<f64>()
            / 4.0;
        let tau = 2.0 * std::f64::consts::PI;
        let fibre =
            (tau * y / self.fibre_period + self.fibre_phase + 1.5 * (tau * x / self.wobble).sin())
                .cos();
        self.amplitude * (0.6 * mottle + 0.4 * fibre)
    }
}

/// One page in `hand`, drawn from `rng`. `texture` scales the background
/// pattern and `noise_sigma` adds Gaussian noise, both in gray levels.
pub fn render_page(
    hand: &Hand,
    rng: &mut impl Rng,
    width: u32,
    height: u32,
    texture: f64,
    noise_sigma: f64,
) -> Page {
    let ground = Texture::random(rng, texture);
    let mut canvas = Canvas::new(width, height);
    let gh = hand.glyph_height;
    let gw = gh * hand.aspect;
    let margin = 8.0 + gh * 0.3;
    let mut y = margin;
    while y + gh + margin <= height as f64 {
        let mut x = margin + rng.random_range(0.0..gw);
        while x + gw + gh * hand.slant.abs() + margin <= width as f64 {
            let glyph = &hand.glyphs[rng.random_range(0..hand.glyphs.len())];
            let jx = rng.random_range(-0.08..0.08) * gw;
            let jy = rng.random_range(-0.08..0.08) * gh;
            let place = |bx: f64, by: f64| {
                // shear about the baseline
                (
                    x + jx + bx * gw + (1.0 - by) * gh * hand.slant,
                    y + jy + by * gh,
                )
            };
            for &(bx, by) in &glyph.dots {
                let c = place(bx, by);
                canvas.polyline(&[c, c], 2.0 * hand.dot_radius);
            }
            for s in &glyph.strokes {
                let pts: Vec<(f64, f64)> = (0..=12)
                    .map(|i| {
                        let t = i as f64 / 12.0;
                        let u = 1.0 - t;
                        let bx = u * u * s.p[0].0 + 2.0 * u * t * s.p[1].0 + t * t * s.p[2].0;
                        let by = u * u * s.p[0].1 + 2.0 * u * t * s.p[1].1 + t * t * s.p[2].1;
                        place(bx, by)
                    })
                    .collect();
                canvas.polyline(&pts, hand.stroke_width);
                canvas.polyline(&[pts[0], pts[0]], 2.0 * hand.blot * hand.stroke_width);
            }
            x += gw * rng.random_range(1.0..1.3);
        }
        y += gh * rng.random_range(1.3..1.5);
    }
    let noise = Normal::new(0.0, noise_sigma.max(1e-12)).expect("finite sigma");
    let image = GrayImage::from_fn(width, height, |x, y| {
        let c = canvas.coverage[(y * width + x) as usize];
        let paper = GROUND + ground.at(x as f64, y as f64);
        let mut v = paper + (INK - paper) * c;
        if noise_sigma > 0.0 {
            v += noise.sample(rng);
        }
        Luma([v.round().clamp(0.0, 255.0) as u8])
    });
    let truth = InkMask::from_fn(width, height, |x, y| {
        canvas.coverage[(y * width + x) as usize] >= 0.5
    });
    Page { image, truth }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthCorpus {
    pub writers: usize,
    pub docs_per_writer: usize,
    pub width: u32,
    pub height: u32,
    pub texture: f64,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for SynthCorpus {
    fn default() -> Self {
        SynthCorpus {
            writers: 10,
            docs_per_writer: 5,
            width: 640,
            height: 640,
            texture: 12.0,
            noise_sigma: 4.0,
            seed: 7,
        }
    }
}

pub fn writer_name(i: usize) -> String {
    format!("scribe{i:02}")
}

impl SynthCorpus {
    /// Writes `<writer>_<n>.png` into `images`, and the ground-truth masks
    /// under the same names into `masks` when given. Returns the doc ids.
    pub fn write(&self, images: &Path, masks: Option<&Path>) -> Result<Vec<String>> {
        for dir in std::iter::once(images).chain(masks) {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut ids = Vec::new();
        for w in 0..self.writers {
            let hand = Hand::random(&mut rng);
            for d in 1..=self.docs_per_writer {
                let id = format!("{}_{d}", writer_name(w));
                let page = render_page(
                    &hand,
                    &mut rng,
                    self.width,
                    self.height,
                    self.texture,
                    self.noise_sigma,
                );
                let path = images.join(format!("{id}.png"));
                page.image
                    .save(&path)
                    .map_err(|source| Error::Image { path, source })?;
                if let Some(m) = masks {
                    page.truth.save_png(&m.join(format!("{id}.png")))?;
                }
                ids.push(id);
            }
        }
        Ok(ids)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pages_are_deterministic_and_inked() {
        let mut a = ChaCha8Rng::seed_from_u64(3);
        let mut b = ChaCha8Rng::seed_from_u64(3);
        let ha = Hand::random(&mut a);
        let hb = Hand::random(&mut b);
        let pa = render_page(&ha, &mut a, 160, 120, 10.0, 3.0);
        let pb = render_page(&hb, &mut b, 160, 120, 10.0, 3.0);
        assert_eq!(pa.image, pb.image);
        let frac = pa.truth.ink_count() as f64 / (160.0 * 120.0);
        assert!(frac > 0.02 && frac < 0.5, "ink fraction {frac}");
    }

    #[test]
    fn truth_matches_dark_pixels_without_noise() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let hand = Hand::random(&mut rng);
        let page = render_page(&hand, &mut rng, 128, 128, 0.0, 0.0);
        let mid = ((GROUND + INK) / 2.0).round() as u8;
        for (x, y, p) in page.image.enumerate_pixels() {
            if page.truth.is_ink(x, y) {
                assert!(p[0] <= mid, "({x},{y})");
            } else {
                assert!(p[0] >= mid, "({x},{y})");
            }
        }
    }
}
