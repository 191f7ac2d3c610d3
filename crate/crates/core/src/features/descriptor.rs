use std::f64::consts::PI;

use super::detect::Keypoint;
use super::scale_space::ScaleSpace;

pub const SIFT_DIM: usize = 128;
const CELLS: usize = 4;
const BINS: usize = 8;
/// Width of one spatial cell in units of the keypoint scale.
const CELL_SCALE: f64 = 3.0;
const CLIP: f64 = 0.2;

#[derive(Debug, Clone, PartialEq)]
pub struct LocalDescriptor {
    pub vector: Vec<f32>,
    pub keypoint: Keypoint,
}

/// 4x4 spatial cells x 8 orientation bins of scale-weighted gradients, rotated
/// into the keypoint frame, trilinearly interpolated, normalized, clipped at
/// 0.2 and renormalized.
pub fn sift_descriptor(ss: &ScaleSpace, kp: &Keypoint) -> Option<Vec<f32>> {
    let oct = ss.octaves.get(kp.octave)?;
    let level = (kp.layer.round() as usize).min(oct.gaussians.len() - 1);
    let img = &oct.gaussians[level];
    let (ox, oy) = ss.from_source(kp.octave, kp.x, kp.y);
    let (cx, cy) = (ox.round() as i64, oy.round() as i64);
    let sigma = ss.level_sigma(kp.layer);

    let cell = CELL_SCALE * sigma;
    let radius = ((cell * std::f64::consts::SQRT_2 * (CELLS as f64 + 1.0) * 0.5).round() as i64)
        .min(((img.width.pow(2) + img.height.pow(2)) as f64).sqrt() as i64);
    let (cos_t, sin_t) = (kp.orientation.cos(), kp.orientation.sin());
    let d = CELLS as f64;
    let weight_denom = 2.0 * (0.5 * d) * (0.5 * d);

    // padded by one cell on each side and one bin for the wrap-around
    let mut hist = vec![0.0f64; (CELLS + 2) * (CELLS + 2) * (BINS + 2)];
    let idx = |r: usize, c: usize, o: usize| (r * (CELLS + 2) + c) * (BINS + 2) + o;

    for dy in -radius..=radius {
        for dx in -radius..=radius {
            // offset expressed in the keypoint frame, in cell units
            let u = (dx as f64 * cos_t + dy as f64 * sin_t) / cell;
            let v = (-(dx as f64) * sin_t + dy as f64 * cos_t) / cell;
            let rbin = v + d / 2.0 - 0.5;
            let cbin = u + d / 2.0 - 0.5;
            if rbin <= -1.0 || rbin >= d || cbin <= -1.0 || cbin >= d {
                continue;
            }
            let (x, y) = (cx + dx, cy + dy);
            if x <= 0 || y <= 0 || x >= img.width as i64 - 1 || y >= img.height as i64 - 1 {
                continue;
            }
            let (x, y) = (x as usize, y as usize);
            let gx = (img.at(x + 1, y) - img.at(x - 1, y)) as f64;
            let gy = (img.at(x, y + 1) - img.at(x, y - 1)) as f64;
            let mag = (gx * gx + gy * gy).sqrt();
            if mag == 0.0 {
                continue;
            }
            let angle = (gy.atan2(gx) - kp.orientation).rem_euclid(2.0 * PI);
            let obin = angle * BINS as f64 / (2.0 * PI);
            let w = (-(u * u + v * v) / weight_denom).exp() * mag;

            let (r0, c0, o0) = (rbin.floor(), cbin.floor(), obin.floor());
            let (fr, fc, fo) = (rbin - r0, cbin - c0, obin - o0);
            let (r0, c0) = ((r0 + 1.0) as usize, (c0 + 1.0) as usize);
            let o0 = (o0 as usize).min(BINS - 1);
            for (ri, wr) in [(0, 1.0 - fr), (1, fr)] {
                for (ci, wc) in [(0, 1.0 - fc), (1, fc)] {
                    for (oi, wo) in [(0, 1.0 - fo), (1, fo)] {
                        hist[idx(r0 + ri, c0 + ci, o0 + oi)] += w * wr * wc * wo;
                    }
                }
            }
        }
    }

    let mut out = vec![0.0f64; SIFT_DIM];
    for r in 0..CELLS {
        for c in 0..CELLS {
            for o in 0..BINS + 2 {
                out[(r * CELLS + c) * BINS + o % BINS] += hist[idx(r + 1, c + 1, o)];
            }
        }
    }
    let norm = out.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 || !norm.is_finite() {
        return None;
    }
    let limit = CLIP * norm;
    out.iter_mut().for_each(|v| *v = v.min(limit));
    let norm = out.iter().map(|v| v * v).sum::<f64>().sqrt();
    Some(out.iter().map(|v| (v / norm) as f32).collect())
}

/// Descriptors for every keypoint; gradient-free patches are dropped.
pub fn compute_descriptors(ss: &ScaleSpace, kps: &[Keypoint]) -> Vec<LocalDescriptor> {
    kps.iter()
        .filter_map(|kp| {
            sift_descriptor(ss, kp).map(|vector| LocalDescriptor {
                vector,
                keypoint: *kp,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::detect::{detect_keypoints, DetectMode, ExtremumSign};
    use crate::features::scale_space::{build_scale_space, ScaleSpaceParams};
    use image::{GrayImage, Luma};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn params() -> ScaleSpaceParams {
        ScaleSpaceParams {
            downsample_factor: 1,
            ..Default::default()
        }
    }

    fn blobs_image(size: u32, seed: u64) -> GrayImage {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let blobs: Vec<(f64, f64, f64, f64, f64)> = (0..25)
            .map(|_| {
                (
                    rng.random_range(10.0..size as f64 - 10.0),
                    rng.random_range(10.0..size as f64 - 10.0),
                    rng.random_range(2.0..6.0),
                    rng.random_range(0.5..2.5),
                    rng.random_range(0.0..PI),
                )
            })
            .collect();
        GrayImage::from_fn(size, size, |x, y| {
            let mut v = 230.0;
            for &(bx, by, s, elong, rot) in &blobs {
                let (dx, dy) = (x as f64 - bx, y as f64 - by);
                let (a, b) = (
                    dx * rot.cos() + dy * rot.sin(),
                    -dx * rot.sin() + dy * rot.cos(),
                );
                let r2 = (a / (s * elong)).powi(2) + (b / s).powi(2);
                v -= 180.0 * (-r2 / 2.0).exp();
            }
            Luma([v.clamp(0.0, 255.0) as u8])
        })
    }

    #[test]
    fn descriptors_are_unit_length() {
        let ss = build_scale_space(&blobs_image(96, 1), &params()).unwrap();
        let kps = detect_keypoints(&ss, DetectMode::All, false);
        let descs = compute_descriptors(&ss, &kps);
        assert!(!descs.is_empty());
        for d in &descs {
            assert_eq!(d.vector.len(), SIFT_DIM);
            let n: f64 = d
                .vector
                .iter()
                .map(|&v| (v as f64).powi(2))
                .sum::<f64>()
                .sqrt();
            assert!((n - 1.0).abs() < 1e-6);
            assert!(d.vector.iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn flat_patch_is_dropped() {
        let img = GrayImage::from_pixel(64, 64, Luma([100]));
        let ss = build_scale_space(&img, &params()).unwrap();
        let kp = Keypoint {
            x: 32.0,
            y: 32.0,
            scale: 2.0,
            orientation: 0.3,
            extremum_sign: ExtremumSign::Min,
            response: -0.1,
            octave: 0,
            layer: 1.0,
        };
        assert!(compute_descriptors(&ss, &[kp]).is_empty());
    }

    fn cosine(a: &[f32], b: &[f32]) -> f64 {
        let dot: f64 = a
            .iter()
            .zip(b)
            .map(|(x, y)| (*x as f64) * (*y as f64))
            .sum();
        let na: f64 = a.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
        let nb: f64 = b.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
        dot / (na * nb)
    }

    #[test]
    fn rotation_by_90_degrees() {
        // odd side length keeps the octave subsampling grid rotation-equivariant
        let size = 129u32;
        let img = blobs_image(size, 4);
        let rot = GrayImage::from_fn(size, size, |x, y| *img.get_pixel(y, size - 1 - x));
        let ss = build_scale_space(&img, &params()).unwrap();
        let ss_rot = build_scale_space(&rot, &params()).unwrap();
        let d0 = compute_descriptors(&ss, &detect_keypoints(&ss, DetectMode::All, false));
        let d1 = compute_descriptors(&ss_rot, &detect_keypoints(&ss_rot, DetectMode::All, false));

        let mut matched = 0;
        for a in &d0 {
            // clockwise rotation: (x, y) -> (size - 1 - y, x), orientation + pi/2
            let (ex, ey) = ((size - 1) as f64 - a.keypoint.y, a.keypoint.x);
            let eo = (a.keypoint.orientation + PI / 2.0).rem_euclid(2.0 * PI);
            let partner = d1.iter().find(|b| {
                let dori = (b.keypoint.orientation - eo).rem_euclid(2.0 * PI);
                (b.keypoint.x - ex).abs() < 0.5
                    && (b.keypoint.y - ey).abs() < 0.5
                    && (b.keypoint.scale / a.keypoint.scale - 1.0).abs() < 0.05
                    && dori.min(2.0 * PI - dori) < 0.05
            });
            if let Some(b) = partner {
                matched += 1;
                let c = cosine(&a.vector, &b.vector);
                assert!(c >= 0.9, "cosine {c}");
            }
        }
        assert!(matched >= d0.len() / 2, "{matched} of {}", d0.len());
    }
}
