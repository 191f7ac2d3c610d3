//! Scale space, keypoints, SIFT descriptors and their 64-D normalization.

pub mod cache;
pub mod descriptor;
pub mod detect;
pub mod scale_space;
pub mod transform;

use std::str::FromStr;

use image::GrayImage;
use serde::{Deserialize, Serialize};

pub use cache::DescriptorFile;
pub use descriptor::{compute_descriptors, sift_descriptor, LocalDescriptor, SIFT_DIM};
pub use detect::{
    detect_keypoints, filter_keypoints, DetectMode, ExtremumSign, FilterOptions, Keypoint,
};
pub use scale_space::{build_scale_space, FloatImage, ScaleSpace, ScaleSpaceParams};
pub use transform::{power_normalize, DescriptorTransform};

use crate::binarize::InkMask;
use crate::error::{Error, Result};

/// `sift` keeps all extrema; `rsift` keeps scale-space minima lying on ink.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum FeatureMode {
    #[default]
    Sift,
    Rsift,
}

impl FromStr for FeatureMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sift" => Ok(FeatureMode::Sift),
            "rsift" => Ok(FeatureMode::Rsift),
            other => Err(Error::UnknownMethod(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FeatureParams {
    pub mode: FeatureMode,
    pub upright: bool,
    pub downsample: bool,
    /// Compute gradients on the mask rendering instead of the gray page.
    pub on_binarized: bool,
    pub blank_patch_size: u32,
}

impl Default for FeatureParams {
    fn default() -> Self {
        FeatureParams {
            mode: FeatureMode::Sift,
            upright: false,
            downsample: true,
            on_binarized: false,
            blank_patch_size: 32,
        }
    }
}

impl FeatureParams {
    pub fn scale_space(&self) -> ScaleSpaceParams {
        ScaleSpaceParams {
            downsample_factor: if self.downsample { 2 } else { 1 },
            ..Default::default()
        }
    }
}

/// Raw 128-D descriptors for one page. The mask, when given, drives the
/// blank-patch filter and, in rsift mode, the on-ink restriction.
pub fn extract_document(
    gray: &GrayImage,
    mask: Option<&InkMask>,
    params: &FeatureParams,
) -> Result<Vec<LocalDescriptor>> {
    let source;
    let img = match (params.on_binarized, mask) {
        (true, Some(m)) => {
            source = m.to_image();
            &source
        }
        (true, None) => {
            return Err(Error::InvalidArgument(
                "features on the binarized page need a mask".into(),
            ))
        }
        _ => gray,
    };
    let ss = build_scale_space(img, &params.scale_space())?;
    let rsift = params.mode == FeatureMode::Rsift;
    let detect_mode = if rsift {
        DetectMode::MinimaOnly
    } else {
        DetectMode::All
    };
    let mut kps = detect_keypoints(&ss, detect_mode, params.upright);
    if let Some(m) = mask {
        let opts = FilterOptions {
            on_ink: rsift,
            require_nonblank: true,
            blank_patch_size: params.blank_patch_size,
        };
        kps = filter_keypoints(&kps, m, gray.dimensions(), &opts)?;
    } else if rsift {
        return Err(Error::InvalidArgument("rsift needs an ink mask".into()));
    }
    Ok(compute_descriptors(&ss, &kps))
}

impl DescriptorFile {
    pub fn from_local(descs: &[LocalDescriptor], dim: usize) -> Self {
        DescriptorFile {
            dim,
            descriptors: descs.iter().map(|d| d.vector.clone()).collect(),
            keypoints: descs
                .iter()
                .map(|d| {
                    let k = &d.keypoint;
                    [k.x as f32, k.y as f32, k.scale as f32, k.orientation as f32]
                })
                .collect(),
        }
    }

    /// Applies the fitted transform to every row.
    pub fn transformed(&self, t: &DescriptorTransform) -> Result<DescriptorFile> {
        let descriptors = self
            .descriptors_f64()
            .iter()
            .map(|d| Ok(t.apply(d)?.iter().map(|&v| v as f32).collect()))
            .collect::<Result<Vec<Vec<f32>>>>()?;
        Ok(DescriptorFile {
            dim: t.output_dim(),
            descriptors,
            keypoints: self.keypoints.clone(),
        })
    }
}
