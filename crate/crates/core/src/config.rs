//! TOML pipeline configuration. Every section and key is optional; unknown
//! keys are rejected.
//!
//! ```toml
//! [paths]
//! input = "data/grk"          # image directory or manifest CSV
//! output = "output"
//! # cache = "output/cache"    # overridden by PAPYRID_CACHE
//!
//! [binarize]
//! method = "su"               # none | otsu | sauvola | su | external
//! # mask_dir = "masks/"       # required by external
//! su = { window = 9, min_high_contrast = 9, contrast_eps = 1e-8 }
//! sauvola = { window = 31, k = 0.2, r = 128.0 }
//!
//! [features]
//! mode = "rsift"              # sift | rsift
//! upright = false
//! downsample = true
//! on_binarized = true
//! blank_patch_size = 32
//! out_dim = 64
//! power = 0.5
//! sample_size = 100000
//! sample_seed = 0
//!
//! [encode]
//! n_codebooks = 5
//! k = 100
//! gamma = 1000.0
//! power_alpha = 0.5
//! seeds = [1, 2, 3, 4, 5]
//! pool = "gmp"                # gmp | sum
//! # pca_dim = 49
//! fit_on = "all"              # all | train
//! kmeans_sample = 100000
//!
//! [evaluate]
//! split_seed = 0
//! split_mode = "first-two"    # first-two | random
//! classifiers = ["nn", "svm"]
//! svm_c = 1.0
//! heatmap_cell_px = 8
//! ```

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::binarize::{SauvolaParams, SuParams};
use crate::classify::Classifier;
use crate::corpus::SplitMode;
use crate::encode::EncodingConfig;
use crate::error::{Error, Result};
use crate::features::{FeatureMode, FeatureParams, SIFT_DIM};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct PathsConfig {
    pub input: PathBuf,
    pub output: PathBuf,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cache: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum BinarizeMethod {
    /// No mask: features come straight from the gray page.
    #[default]
    None,
    Otsu,
    Sauvola,
    Su,
    External,
}

impl FromStr for BinarizeMethod {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(BinarizeMethod::None),
            "otsu" => Ok(BinarizeMethod::Otsu),
            "sauvola" => Ok(BinarizeMethod::Sauvola),
            "su" => Ok(BinarizeMethod::Su),
            "external" => Ok(BinarizeMethod::External),
            other => Err(Error::UnknownMethod(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BinarizeConfig {
    pub method: BinarizeMethod,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mask_dir: Option<PathBuf>,
    pub su: SuParams,
    pub sauvola: SauvolaParams,
}

impl Default for BinarizeConfig {
    fn default() -> Self {
        BinarizeConfig {
            method: BinarizeMethod::None,
            mask_dir: None,
            su: SuParams::default(),
            sauvola: SauvolaParams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FeatureConfig {
    pub mode: FeatureMode,
    pub upright: bool,
    pub downsample: bool,
    pub on_binarized: bool,
    pub blank_patch_size: u32,
    pub out_dim: usize,
    pub power: f64,
    /// Descriptors drawn for fitting the 64-D transform.
    pub sample_size: usize,
    pub sample_seed: u64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        let p = FeatureParams::default();
        FeatureConfig {
            mode: p.mode,
            upright: p.upright,
            downsample: p.downsample,
            on_binarized: p.on_binarized,
            blank_patch_size: p.blank_patch_size,
            out_dim: 64,
            power: 0.5,
            sample_size: 100_000,
            sample_seed: 0,
        }
    }
}

impl FeatureConfig {
    pub fn params(&self) -> FeatureParams {
        FeatureParams {
            mode: self.mode,
            upright: self.upright,
            downsample: self.downsample,
            on_binarized: self.on_binarized,
            blank_patch_size: self.blank_patch_size,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluateConfig {
    pub split_seed: u64,
    pub split_mode: SplitMode,
    pub classifiers: Vec<Classifier>,
    pub svm_c: f64,
    pub heatmap_cell_px: u32,
}

impl Default for EvaluateConfig {
    fn default() -> Self {
        EvaluateConfig {
            split_seed: 0,
            split_mode: SplitMode::FirstTwo,
            classifiers: vec![Classifier::Nn, Classifier::Svm],
            svm_c: 1.0,
            heatmap_cell_px: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub paths: PathsConfig,
    pub binarize: BinarizeConfig,
    pub features: FeatureConfig,
    pub encode: EncodingConfig,
    pub evaluate: EvaluateConfig,
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: PipelineConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Reads a config file. Relative paths stay relative to the working
    /// directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<()> {
        if self.paths.input.as_os_str().is_empty() {
            return Err(Error::Config("paths.input is not set".into()));
        }
        if self.binarize.method == BinarizeMethod::External && self.binarize.mask_dir.is_none() {
            return Err(Error::Config(
                "binarize.method = external needs binarize.mask_dir".into(),
            ));
        }
        let masked = self.binarize.method != BinarizeMethod::None;
        if !masked && self.features.mode == FeatureMode::Rsift {
            return Err(Error::Config(
                "features.mode = rsift needs a binarization method".into(),
            ));
        }
        if !masked && self.features.on_binarized {
            return Err(Error::Config(
                "features.on_binarized needs a binarization method".into(),
            ));
        }
        if self.features.out_dim == 0 || self.features.out_dim > SIFT_DIM {
            return Err(Error::Config(format!(
                "features.out_dim must be in 1..=128, got {}",
                self.features.out_dim
            )));
        }
        if self.features.sample_size < 10 * self.features.out_dim {
            return Err(Error::Config(format!(
                "features.sample_size must be at least {}",
                10 * self.features.out_dim
            )));
        }
        if !(self.evaluate.svm_c > 0.0) {
            return Err(Error::Config("evaluate.svm_c must be > 0".into()));
        }
        self.encode.validate()
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        hash_json(self)
    }
}

/// Hex SHA-256 of a value's JSON serialization.
pub fn hash_json<T: Serialize>(value: &T) -> String {
    let json = serde_json::to_vec(value).expect("config values serialize");
    hex::encode(Sha256::digest(&json))
}
