//! Document discovery, writer labels, manifests and train/test splits.
//!
//! Document ids are file stems such as `Abraamios_3`; the writer label is
//! the stem with its final `_<digits>` suffix removed, so `Kyros3_1`
//! belongs to writer `Kyros3`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use image::{DynamicImage, GrayImage};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const IMAGE_EXTENSIONS: &[&str] = &["png", "jpg", "jpeg", "tif", "tiff"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DocumentRecord {
    pub doc_id: String,
    pub writer: String,
    pub path: PathBuf,
    pub width: u32,
    pub height: u32,
}

impl DocumentRecord {
    pub fn image_size(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn load_gray(&self) -> Result<GrayImage> {
        load_gray(&self.path)
    }
}

/// Records in byte-lexicographic `doc_id` order, so `Victor_10` precedes `Victor_2`.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Corpus {
    records: Vec<DocumentRecord>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScanWarning {
    pub path: PathBuf,
    pub reason: String,
}

#[derive(Debug, Clone)]
pub struct ScanOutcome {
    pub corpus: Corpus,
    pub warnings: Vec<ScanWarning>,
}

/// Strips the final `_<digits>` suffix from a file stem.
pub fn parse_writer_label(filename: &str) -> Result<String> {
    let stem = Path::new(filename)
        .file_stem()
        .and_then(|s| s.to_str())
        .ok_or_else(|| Error::MalformedName(filename.to_string()))?;
    let (label, suffix) = stem
        .rsplit_once('_')
        .ok_or_else(|| Error::MalformedName(filename.to_string()))?;
    if label.is_empty() || suffix.is_empty() || !suffix.bytes().all(|b| b.is_ascii_digit()) {
        return Err(Error::MalformedName(filename.to_string()));
    }
    Ok(label.to_string())
}

fn is_image(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .map(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
        .unwrap_or(false)
}

impl Corpus {
    /// Builds a corpus from records, sorting them and checking id uniqueness.
    pub fn from_records(mut records: Vec<DocumentRecord>) -> Result<Self> {
        records.sort_by(|a, b| a.doc_id.as_bytes().cmp(b.doc_id.as_bytes()));
        for pair in records.windows(2) {
            if pair[0].doc_id == pair[1].doc_id {
                return Err(Error::DuplicateDocId(pair[0].doc_id.clone()));
            }
        }
        for r in &records {
            if r.writer.is_empty() {
                return Err(Error::MalformedName(r.doc_id.clone()));
            }
        }
        Ok(Corpus { records })
    }

    pub fn scan(dir: &Path) -> Result<ScanOutcome> {
        let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
        let mut paths = Vec::new();
        for entry in entries {
            let entry = entry.map_err(|e| Error::io(dir, e))?;
            let path = entry.path();
            if path.is_file() {
                paths.push(path);
            }
        }
        paths.sort();

        let mut records = Vec::new();
        let mut warnings = Vec::new();
        for path in paths {
            if !is_image(&path) {
                warnings.push(ScanWarning {
                    path,
                    reason: "not an image file".into(),
                });
                continue;
            }
            let name = path
                .file_name()
                .and_then(|n| n.to_str())
                .unwrap_or_default();
            let writer = match parse_writer_label(name) {
                Ok(w) => w,
                Err(e) => {
                    warnings.push(ScanWarning {
                        path,
                        reason: e.to_string(),
                    });
                    continue;
                }
            };
            let doc_id = path
                .file_stem()
                .and_then(|s| s.to_str())
                .unwrap_or_default()
                .to_string();
            let (width, height) =
                image::image_dimensions(&path).map_err(|source| Error::Image {
                    path: path.clone(),
                    source,
                })?;
            records.push(DocumentRecord {
                doc_id,
                writer,
                path,
                width,
                height,
            });
        }
        for w in &warnings {
            log::warn!("skipping {}: {}", w.path.display(), w.reason);
        }
        if records.is_empty() {
            return Err(Error::EmptyCorpus(dir.to_path_buf()));
        }
        Ok(ScanOutcome {
            corpus: Corpus::from_records(records)?,
            warnings,
        })
    }

    pub fn records(&self) -> &[DocumentRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn doc_ids(&self) -> Vec<String> {
        self.records.iter().map(|r| r.doc_id.clone()).collect()
    }

    pub fn labels(&self) -> Vec<String> {
        self.records.iter().map(|r| r.writer.clone()).collect()
    }

    pub fn get(&self, doc_id: &str) -> Option<&DocumentRecord> {
        self.records
            .binary_search_by(|r| r.doc_id.as_bytes().cmp(doc_id.as_bytes()))
            .ok()
            .map(|i| &self.records[i])
    }

    /// Writers in order of first appearance in the corpus.
    pub fn writers(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for r in &self.records {
            if !out.contains(&r.writer) {
                out.push(r.writer.clone());
            }
        }
        out
    }

    /// Restricts the corpus to the given ids, keeping corpus order.
    pub fn subset(&self, doc_ids: &[String]) -> Result<Corpus> {
        for id in doc_ids {
            if self.get(id).is_none() {
                return Err(Error::UnknownDocument(id.clone()));
            }
        }
        Ok(Corpus {
            records: self
                .records
                .iter()
                .filter(|r| doc_ids.contains(&r.doc_id))
                .cloned()
                .collect(),
        })
    }

    pub fn write_manifest(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        let mut wtr = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_path(path)?;
        for r in &self.records {
            wtr.serialize(r)?;
        }
        wtr.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    pub fn read_manifest(path: &Path) -> Result<Corpus> {
        let mut rdr = csv::Reader::from_path(path)?;
        let headers = rdr.headers()?.clone();
        if headers.iter().collect::<Vec<_>>() != ["doc_id", "writer", "path", "width", "height"] {
            return Err(Error::format(path, "unexpected manifest header"));
        }
        let records = rdr
            .deserialize()
            .collect::<std::result::Result<Vec<DocumentRecord>, _>>()?;
        if records.is_empty() {
            return Err(Error::EmptyCorpus(path.to_path_buf()));
        }
        Corpus::from_records(records)
    }
}

/// Loads an image as 8-bit grayscale with luma = 0.299 R + 0.587 G + 0.114 B.
pub fn load_gray(path: &Path) -> Result<GrayImage> {
    let img = image::open(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(to_gray(&img))
}

pub fn to_gray(img: &DynamicImage) -> GrayImage {
    match img {
        DynamicImage::ImageLuma8(g) => g.clone(),
        DynamicImage::ImageLumaA8(_)
        | DynamicImage::ImageLuma16(_)
        | DynamicImage::ImageLumaA16(_) => img.to_luma8(),
        _ => {
            let rgb = img.to_rgb8();
            GrayImage::from_fn(rgb.width(), rgb.height(), |x, y| {
                let [r, g, b] = rgb.get_pixel(x, y).0;
                let l = 0.299 * r as f64 + 0.587 * g as f64 + 0.114 * b as f64;
                image::Luma([l.round().clamp(0.0, 255.0) as u8])
            })
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum SplitMode {
    #[default]
    FirstTwo,
    Random,
}

impl std::str::FromStr for SplitMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "first-two" => Ok(SplitMode::FirstTwo),
            "random" => Ok(SplitMode::Random),
            other => Err(Error::UnknownMethod(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassificationSplit {
    pub train: Vec<String>,
    pub test: Vec<String>,
    pub seed: u64,
    pub mode: SplitMode,
}

pub const TRAIN_PER_WRITER: usize = 2;

/// Two training documents per writer, everything else is test.
pub fn make_classification_split(
    corpus: &Corpus,
    seed: u64,
    mode: SplitMode,
) -> Result<ClassificationSplit> {
    let mut by_writer: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for r in corpus.records() {
        by_writer.entry(&r.writer).or_default().push(&r.doc_id);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train: Vec<&str> = Vec::new();
    for (writer, docs) in &by_writer {
        if docs.len() <= TRAIN_PER_WRITER {
            return Err(Error::InsufficientSamples {
                writer: writer.to_string(),
                count: docs.len(),
                required: TRAIN_PER_WRITER + 1,
            });
        }
        match mode {
            SplitMode::FirstTwo => train.extend(&docs[..TRAIN_PER_WRITER]),
            SplitMode::Random => {
                let mut docs = docs.clone();
                docs.shuffle(&mut rng);
                train.extend(&docs[..TRAIN_PER_WRITER]);
            }
        }
    }
    let (train, test) = corpus
        .records()
        .iter()
        .map(|r| r.doc_id.clone())
        .partition(|id| train.contains(&id.as_str()));
    Ok(ClassificationSplit {
        train,
        test,
        seed,
        mode,
    })
}

impl ClassificationSplit {
    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)?;
        fs::write(path, json + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}
