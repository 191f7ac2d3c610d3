use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::scale_space::{FloatImage, ScaleSpace};
use crate::binarize::InkMask;
use crate::error::{Error, Result};

/// Pixels this close to an octave border are not searched.
const BORDER: usize = 5;
const MAX_REFINE_STEPS: usize = 5;
const STEP_LIMIT: f64 = 0.6;
const ORI_BINS: usize = 36;
const ORI_SIGMA_FACTOR: f64 = 1.5;
const ORI_RADIUS_FACTOR: f64 = 3.0;
const ORI_PEAK_RATIO: f64 = 0.8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExtremumSign {
    /// Negative response: a dark blob on lighter ground.
    Min,
    Max,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DetectMode {
    #[default]
    All,
    MinimaOnly,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Keypoint {
    /// Source-image coordinates.
    pub x: f64,
    pub y: f64,
    /// Gaussian scale in source pixels.
    pub scale: f64,
    /// Radians in `[0, 2pi)`, measured from +x towards +y (image rows grow down).
    pub orientation: f64,
    pub extremum_sign: ExtremumSign,
    /// Interpolated DoG value at the extremum.
    pub response: f64,
    pub octave: usize,
    /// Fractional position between Gaussian levels within the octave.
    pub layer: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Extremum {
    octave: usize,
    layer: usize,
    x: usize,
    y: usize,
}

fn is_extremum(ss: &ScaleSpace, e: Extremum, threshold: f32) -> Option<ExtremumSign> {
    let dogs = &ss.octaves[e.octave].dogs;
    let v = dogs[e.layer].at(e.x, e.y);
    if v.abs() <= threshold {
        return None;
    }
    let (mut is_max, mut is_min) = (v > 0.0, v < 0.0);
    for d in &dogs[e.layer - 1..=e.layer + 1] {
        for yy in e.y - 1..=e.y + 1 {
            for xx in e.x - 1..=e.x + 1 {
                let n = d.at(xx, yy);
                is_max &= v >= n;
                is_min &= v <= n;
            }
        }
        if !is_max && !is_min {
            return None;
        }
    }
    if is_min {
        Some(ExtremumSign::Min)
    } else if is_max {
        Some(ExtremumSign::Max)
    } else {
        None
    }
}

/// Quadratic fit around a discrete extremum. Returns the refined point with
/// its (x, y, layer) offsets and interpolated value.
fn refine(ss: &ScaleSpace, mut e: Extremum) -> Option<(Extremum, [f64; 3], f64)> {
    let p = &ss.params;
    let dogs = &ss.octaves[e.octave].dogs;
    let (w, h) = (dogs[0].width, dogs[0].height);
    let s = p.scales_per_octave;
    for _ in 0..MAX_REFINE_STEPS {
        let d = |l: usize, x: usize, y: usize| dogs[l].at(x, y) as f64;
        let (l, x, y) = (e.layer, e.x, e.y);
        let v = d(l, x, y);
        let g = [
            (d(l, x + 1, y) - d(l, x - 1, y)) / 2.0,
            (d(l, x, y + 1) - d(l, x, y - 1)) / 2.0,
            (d(l + 1, x, y) - d(l - 1, x, y)) / 2.0,
        ];
        let dxx = d(l, x + 1, y) + d(l, x - 1, y) - 2.0 * v;
        let dyy = d(l, x, y + 1) + d(l, x, y - 1) - 2.0 * v;
        let dss = d(l + 1, x, y) + d(l - 1, x, y) - 2.0 * v;
        let dxy = (d(l, x + 1, y + 1) - d(l, x - 1, y + 1) - d(l, x + 1, y - 1)
            + d(l, x - 1, y - 1))
            / 4.0;
        let dxs = (d(l + 1, x + 1, y) - d(l + 1, x - 1, y) - d(l - 1, x + 1, y)
            + d(l - 1, x - 1, y))
            / 4.0;
        let dys = (d(l + 1, x, y + 1) - d(l + 1, x, y - 1) - d(l - 1, x, y + 1)
            + d(l - 1, x, y - 1))
            / 4.0;
        let hess = nalgebra::Matrix3::new(dxx, dxy, dxs, dxy, dyy, dys, dxs, dys, dss);
        let offset = hess.lu().solve(&nalgebra::Vector3::new(g[0], g[1], g[2]))?;
        let offset = [-offset[0], -offset[1], -offset[2]];
        if offset.iter().any(|o| !o.is_finite()) {
            return None;
        }
        // Move only past 0.6: an extremum centred between two samples gives
        // +-0.5 from both and would otherwise bounce between them.
        let step = offset.map(|o| {
            if o > STEP_LIMIT {
                1i64
            } else if o < -STEP_LIMIT {
                -1
            } else {
                0
            }
        });
        if step == [0, 0, 0] {
            let value = v + 0.5 * (g[0] * offset[0] + g[1] * offset[1] + g[2] * offset[2]);
            if value.abs() * (s as f64) < p.contrast_threshold {
                return None;
            }
            let det = dxx * dyy - dxy * dxy;
            let tr = dxx + dyy;
            let r = p.edge_threshold;
            if det <= 0.0 || tr * tr * r >= (r + 1.0) * (r + 1.0) * det {
                return None;
            }
            return Some((e, offset, value));
        }
        let nx = e.x as i64 + step[0];
        let ny = e.y as i64 + step[1];
        let nl = e.layer as i64 + step[2];
        if nl < 1 || nl > s as i64 || nx < BORDER as i64 || ny < BORDER as i64 {
            return None;
        }
        if nx >= (w - BORDER) as i64 || ny >= (h - BORDER) as i64 {
            return None;
        }
        e = Extremum {
            octave: e.octave,
            layer: nl as usize,
            x: nx as usize,
            y: ny as usize,
        };
    }
    None
}

/// Dominant gradient orientations around `(x, y)` at blur `sigma`.
fn orientations(img: &FloatImage, x: usize, y: usize, sigma: f64) -> Vec<f64> {
    let ori_sigma = ORI_SIGMA_FACTOR * sigma;
    let radius = (ORI_RADIUS_FACTOR * ori_sigma).round() as i64;
    let denom = 2.0 * ori_sigma * ori_sigma;
    let mut hist = [0.0f64; ORI_BINS];
    for dy in -radius..=radius {
        let yy = y as i64 + dy;
        if yy <= 0 || yy >= img.height as i64 - 1 {
            continue;
        }
        for dx in -radius..=radius {
            let xx = x as i64 + dx;
            if xx <= 0 || xx >= img.width as i64 - 1 {
                continue;
            }
            let (xx, yy) = (xx as usize, yy as usize);
            let gx = (img.at(xx + 1, yy) - img.at(xx - 1, yy)) as f64;
            let gy = (img.at(xx, yy + 1) - img.at(xx, yy - 1)) as f64;
            let mag = (gx * gx + gy * gy).sqrt();
            if mag == 0.0 {
                continue;
            }
            let weight = (-((dx * dx + dy * dy) as f64) / denom).exp();
            let angle = gy.atan2(gx).rem_euclid(2.0 * PI);
            let bin = ((angle * ORI_BINS as f64 / (2.0 * PI)).round() as usize) % ORI_BINS;
            hist[bin] += weight * mag;
        }
    }
    let n = ORI_BINS;
    let smooth: Vec<f64> = (0..n)
        .map(|i| {
            (hist[(i + n - 2) % n] + hist[(i + 2) % n]) / 16.0
                + (hist[(i + n - 1) % n] + hist[(i + 1) % n]) * 4.0 / 16.0
                + hist[i] * 6.0 / 16.0
        })
        .collect();
    let max = smooth.iter().cloned().fold(0.0, f64::max);
    if max <= 0.0 {
        return Vec::new();
    }
    let mut out = Vec::new();
    for i in 0..n {
        let (l, c, r) = (smooth[(i + n - 1) % n], smooth[i], smooth[(i + 1) % n]);
        if c > l && c > r && c >= ORI_PEAK_RATIO * max {
            let shift = 0.5 * (l - r) / (l - 2.0 * c + r);
            let bin = (i as f64 + shift).rem_euclid(n as f64);
            out.push(bin * 2.0 * PI / n as f64);
        }
    }
    out
}

/// Difference-of-Gaussians extrema, refined to subpixel accuracy and
/// filtered for low contrast and edge responses. With `MinimaOnly`, only
/// negative extrema (dark blobs) are kept. `upright` skips orientation
/// assignment and fixes every orientation at 0.
pub fn detect_keypoints(ss: &ScaleSpace, mode: DetectMode, upright: bool) -> Vec<Keypoint> {
    let p = &ss.params;
    let s = p.scales_per_octave;
    let threshold = (0.5 * p.contrast_threshold / s as f64) as f32;
    let mut out = Vec::new();
    for (o, oct) in ss.octaves.iter().enumerate() {
        let (w, h) = (oct.dogs[0].width, oct.dogs[0].height);
        if w <= 2 * BORDER || h <= 2 * BORDER {
            continue;
        }
        for layer in 1..=s {
            for y in BORDER..h - BORDER {
                for x in BORDER..w - BORDER {
                    let e = Extremum {
                        octave: o,
                        layer,
                        x,
                        y,
                    };
                    if is_extremum(ss, e, threshold).is_none() {
                        continue;
                    }
                    let Some((e, off, value)) = refine(ss, e) else {
                        continue;
                    };
                    let sign = if value < 0.0 {
                        ExtremumSign::Min
                    } else {
                        ExtremumSign::Max
                    };
                    if mode == DetectMode::MinimaOnly && sign != ExtremumSign::Min {
                        continue;
                    }
                    let layer_f = e.layer as f64 + off[2];
                    let sigma_oct = ss.level_sigma(layer_f);
                    let (sx, sy) = ss.to_source(o, e.x as f64 + off[0], e.y as f64 + off[1]);
                    if sx < 0.0
                        || sy < 0.0
                        || sx >= ss.source_width as f64
                        || sy >= ss.source_height as f64
                    {
                        continue;
                    }
                    let base = Keypoint {
                        x: sx,
                        y: sy,
                        scale: ss.scale_to_source(o, sigma_oct),
                        orientation: 0.0,
                        extremum_sign: sign,
                        response: value,
                        octave: o,
                        layer: layer_f,
                    };
                    if upright {
                        out.push(base);
                    } else {
                        let g = &oct.gaussians[layer_f.round() as usize];
                        for angle in orientations(g, e.x, e.y, sigma_oct) {
                            out.push(Keypoint {
                                orientation: angle,
                                ..base
                            });
                        }
                    }
                }
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterOptions {
    pub on_ink: bool,
    pub require_nonblank: bool,
    pub blank_patch_size: u32,
}

impl Default for FilterOptions {
    fn default() -> Self {
        FilterOptions {
            on_ink: false,
            require_nonblank: true,
            blank_patch_size: 32,
        }
    }
}

/// Drops keypoints off the ink (`on_ink`) and keypoints whose centered
/// `blank_patch_size` square holds no ink at all (`require_nonblank`).
pub fn filter_keypoints(
    kps: &[Keypoint],
    mask: &InkMask,
    image_size: (u32, u32),
    opts: &FilterOptions,
) -> Result<Vec<Keypoint>> {
    if mask.dimensions() != image_size {
        return Err(Error::DimensionMismatch {
            expected: (image_size.0 as usize, image_size.1 as usize),
            actual: (mask.width() as usize, mask.height() as usize),
        });
    }
    let (w, h) = (mask.width() as i64, mask.height() as i64);
    let half = opts.blank_patch_size as i64 / 2;
    let keep = |kp: &Keypoint| -> bool {
        let cx = (kp.x.round() as i64).clamp(0, w - 1);
        let cy = (kp.y.round() as i64).clamp(0, h - 1);
        if opts.on_ink && !mask.is_ink(cx as u32, cy as u32) {
            return false;
        }
        if opts.require_nonblank {
            let size = opts.blank_patch_size as i64;
            let (x0, y0) = ((cx - half).max(0), (cy - half).max(0));
            let (x1, y1) = ((cx - half + size).min(w), (cy - half + size).min(h));
            let any_ink = (y0..y1).any(|y| (x0..x1).any(|x| mask.is_ink(x as u32, y as u32)));
            if !any_ink {
                return false;
            }
        }
        true
    };
    Ok(kps.iter().filter(|kp| keep(kp)).copied().collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::scale_space::{build_scale_space, ScaleSpaceParams};
    use image::{GrayImage, Luma};

    fn params() -> ScaleSpaceParams {
        ScaleSpaceParams {
            downsample_factor: 1,
            ..Default::default()
        }
    }

    fn disc(dark: bool) -> GrayImage {
        let (fg, bg) = if dark { (0u8, 255u8) } else { (255, 0) };
        GrayImage::from_fn(96, 96, |x, y| {
            let r2 = (x as f64 - 48.0).powi(2) + (y as f64 - 48.0).powi(2);
            Luma([if r2 <= 36.0 { fg } else { bg }])
        })
    }

    fn near_center(kp: &Keypoint) -> bool {
        (kp.x - 48.0).abs() <= 2.0 && (kp.y - 48.0).abs() <= 2.0
    }

    #[test]
    fn disc_between_samples_is_found() {
        // after 2x downsampling the disc centre falls between two pixels
        let p = ScaleSpaceParams {
            downsample_factor: 2,
            ..Default::default()
        };
        let ss = build_scale_space(&disc(true), &p).unwrap();
        let kps = detect_keypoints(&ss, DetectMode::MinimaOnly, true);
        assert!(kps.iter().any(near_center), "{kps:?}");
    }

    #[test]
    fn dark_disc_is_a_minimum() {
        let ss = build_scale_space(&disc(true), &params()).unwrap();
        let kps = detect_keypoints(&ss, DetectMode::All, false);
        let center: Vec<_> = kps.iter().filter(|k| near_center(k)).collect();
        assert!(!center.is_empty());
        assert!(center.iter().all(|k| k.extremum_sign == ExtremumSign::Min));
        // brute-force: the center pixel is a discrete minimum at some level
        let found = ss.octaves.iter().enumerate().any(|(o, oct)| {
            let (cx, cy) = ss.from_source(o, 48.0, 48.0);
            let (cx, cy) = (cx.round() as usize, cy.round() as usize);
            (1..oct.dogs.len() - 1).any(|l| {
                let v = oct.dogs[l].at(cx, cy);
                v < 0.0
                    && (l - 1..=l + 1).all(|ll| {
                        (cy - 1..=cy + 1)
                            .all(|yy| (cx - 1..=cx + 1).all(|xx| oct.dogs[ll].at(xx, yy) >= v))
                    })
            })
        });
        assert!(found);
    }

    #[test]
    fn light_disc_has_no_minimum_at_center() {
        let ss = build_scale_space(&disc(false), &params()).unwrap();
        let all = detect_keypoints(&ss, DetectMode::All, false);
        assert!(all
            .iter()
            .any(|k| near_center(k) && k.extremum_sign == ExtremumSign::Max));
        let minima = detect_keypoints(&ss, DetectMode::MinimaOnly, false);
        assert!(!minima.iter().any(near_center));
    }

    #[test]
    fn blank_image_has_no_keypoints() {
        let img = GrayImage::from_pixel(64, 64, Luma([128]));
        let ss = build_scale_space(&img, &params()).unwrap();
        assert!(detect_keypoints(&ss, DetectMode::All, false).is_empty());
    }

    #[test]
    fn minima_subset_of_all() {
        let img =
            GrayImage::from_fn(80, 80, |x, y| {
                Luma([
                    ((x * 7 + y * 13) % 50 + if (x / 10 + y / 10) % 2 == 0 { 0 } else { 150 })
                        as u8,
                ])
            });
        let ss = build_scale_space(&img, &params()).unwrap();
        let all = detect_keypoints(&ss, DetectMode::All, true);
        let min = detect_keypoints(&ss, DetectMode::MinimaOnly, true);
        assert!(!all.is_empty());
        for k in &min {
            assert!(all.contains(k));
        }
    }

    fn kp(x: f64, y: f64) -> Keypoint {
        Keypoint {
            x,
            y,
            scale: 2.0,
            orientation: 0.0,
            extremum_sign: ExtremumSign::Min,
            response: -0.1,
            octave: 0,
            layer: 1.0,
        }
    }

    #[test]
    fn filtering_by_mask() {
        let mask = InkMask::from_fn(100, 100, |x, y| {
            (10..20).contains(&x) && (10..20).contains(&y)
        });
        let kps = vec![kp(15.0, 15.2), kp(30.0, 15.0), kp(70.0, 70.0)];
        let on_ink = FilterOptions {
            on_ink: true,
            require_nonblank: false,
            blank_patch_size: 32,
        };
        let out = filter_keypoints(&kps, &mask, (100, 100), &on_ink).unwrap();
        assert_eq!(out, vec![kps[0]]);

        // (70, 70) is 50 px from the ink: its 32x32 window is empty
        let nonblank = FilterOptions {
            on_ink: false,
            ..Default::default()
        };
        let out = filter_keypoints(&kps, &mask, (100, 100), &nonblank).unwrap();
        assert_eq!(out, vec![kps[0], kps[1]]);
        let twice = filter_keypoints(&out, &mask, (100, 100), &nonblank).unwrap();
        assert_eq!(out, twice);

        assert!(matches!(
            filter_keypoints(&kps, &mask, (100, 90), &nonblank),
            Err(Error::DimensionMismatch { .. })
        ));
    }
}
