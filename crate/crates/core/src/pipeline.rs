//! Stage drivers and the cached end-to-end run.
//!
//! Each cached stage lives in `<cache>/<stage>-<key>/`, where the key hashes
//! the stage's own settings together with the keys of everything upstream
//! (down to the bytes of the input images). A stage directory holds a
//! `stage.json` snapshot and is only trusted once its `.complete` marker
//! exists.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::binarize::{binarize, InkMask, Method};
use crate::classify::{classify_split, ClassificationReport, Classifier, SvmParams};
use crate::config::{hash_json, BinarizeConfig, BinarizeMethod, FeatureConfig, PipelineConfig};
use crate::corpus::{make_classification_split, ClassificationSplit, Corpus};
use crate::encode::{
    load_globals, save_globals, Encoder, EncodingConfig, FitOn, GlobalDescriptor, GLOBALS_FILE,
};
use crate::error::{Error, Result};
use crate::features::{extract_document, DescriptorFile, DescriptorTransform, SIFT_DIM};
use crate::retrieval::{
    export_document_heatmap, export_scribe_heatmap, leave_one_out, scribe_similarity,
    RetrievalReport,
};

pub const CACHE_ENV: &str = "PAPYRID_CACHE";
pub const TRANSFORM_FILE: &str = "descriptor_transform.pwmd";
pub const MANIFEST_FILE: &str = "manifest.csv";
const COMPLETE: &str = ".complete";

fn stage<T>(name: &'static str, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::Stage { .. } => e,
        other => Error::Stage {
            stage: name,
            source: Box::new(other),
        },
    })
}

fn mkdir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Directory or CSV manifest.
pub fn load_corpus(input: &Path) -> Result<Corpus> {
    if input.is_dir() {
        let outcome = Corpus::scan(input)?;
        for w in &outcome.warnings {
            log::warn!("skipped {}: {}", w.path.display(), w.reason);
        }
        Ok(outcome.corpus)
    } else {
        Corpus::read_manifest(input)
    }
}

fn file_digest(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Hash over identities and image bytes of every document.
pub fn corpus_fingerprint(corpus: &Corpus) -> Result<String> {
    let parts = corpus
        .records()
        .par_iter()
        .map(|r| Ok((r.doc_id.clone(), r.writer.clone(), file_digest(&r.path)?)))
        .collect::<Result<Vec<_>>>()?;
    Ok(hash_json(&parts))
}

fn mask_path(dir: &Path, doc_id: &str) -> PathBuf {
    dir.join(format!("{doc_id}.png"))
}

fn descriptor_path(dir: &Path, doc_id: &str) -> PathBuf {
    dir.join(format!("{doc_id}.pwid"))
}

/// Writes one mask PNG per document into `out_dir`.
pub fn binarize_corpus(corpus: &Corpus, cfg: &BinarizeConfig, out_dir: &Path) -> Result<()> {
    mkdir(out_dir)?;
    corpus.records().par_iter().try_for_each(|r| {
        let external;
        let method = match cfg.method {
            BinarizeMethod::Otsu => Method::Otsu,
            BinarizeMethod::Sauvola => Method::Sauvola(cfg.sauvola),
            BinarizeMethod::Su => Method::Su(cfg.su),
            BinarizeMethod::External => {
                let dir = cfg
                    .mask_dir
                    .as_deref()
                    .ok_or_else(|| Error::Config("external masks need a mask directory".into()))?;
                external = mask_path(dir, &r.doc_id);
                Method::External(&external)
            }
            BinarizeMethod::None => {
                return Err(Error::Config(
                    "binarization method `none` writes no masks".into(),
                ))
            }
        };
        let img = r.load_gray()?;
        let mask = binarize(&r.doc_id, &img, &method)?;
        log::debug!("{}: {} ink pixels", r.doc_id, mask.ink_count());
        mask.save_png(&mask_path(out_dir, &r.doc_id))
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSummary {
    /// (doc_id, descriptor count) in corpus order.
    pub counts: Vec<(String, usize)>,
    pub transform_sample: usize,
}

/// Extracts raw descriptors per page, fits the descriptor transform on a
/// seeded sample of them, and writes the transformed `.pwid` files plus the
/// transform model into `out_dir`.
pub fn extract_corpus(
    corpus: &Corpus,
    masks_dir: Option<&Path>,
    cfg: &FeatureConfig,
    out_dir: &Path,
) -> Result<FeatureSummary> {
    mkdir(out_dir)?;
    let params = cfg.params();
    let raw: Vec<DescriptorFile> = corpus
        .records()
        .par_iter()
        .map(|r| {
            let img = r.load_gray()?;
            let mask = masks_dir
                .map(|d| InkMask::load_png(&mask_path(d, &r.doc_id)))
                .transpose()?;
            if let Some(m) = &mask {
                if m.dimensions() != img.dimensions() {
                    return Err(Error::MaskDimensionMismatch {
                        doc_id: r.doc_id.clone(),
                        mask: m.dimensions(),
                        image: img.dimensions(),
                    });
                }
            }
            let descs = extract_document(&img, mask.as_ref(), &params)?;
            log::debug!("{}: {} descriptors", r.doc_id, descs.len());
            Ok(DescriptorFile::from_local(&descs, SIFT_DIM))
        })
        .collect::<Result<_>>()?;

    let pooled: Vec<&Vec<f32>> = raw.iter().flat_map(|f| f.descriptors.iter()).collect();
    let chosen: Vec<usize> = if pooled.len() > cfg.sample_size {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.sample_seed);
        let mut idx = sample(&mut rng, pooled.len(), cfg.sample_size).into_vec();
        idx.sort_unstable();
        idx
    } else {
        (0..pooled.len()).collect()
    };
    let fit_sample: Vec<Vec<f64>> = chosen
        .iter()
        .map(|&i| pooled[i].iter().map(|&v| v as f64).collect())
        .collect();
    let transform = DescriptorTransform::fit(&fit_sample, cfg.out_dim, cfg.power)?;
    transform.save(&out_dir.join(TRANSFORM_FILE))?;

    corpus
        .records()
        .par_iter()
        .zip(raw.par_iter())
        .try_for_each(|(r, file)| {
            file.transformed(&transform)?
                .save(&descriptor_path(out_dir, &r.doc_id))
        })?;
    Ok(FeatureSummary {
        counts: corpus
            .records()
            .iter()
            .zip(&raw)
            .map(|(r, f)| (r.doc_id.clone(), f.len()))
            .collect(),
        transform_sample: fit_sample.len(),
    })
}

/// Fits the encoder (on the train split when `cfg.fit_on` says so), encodes
/// every document and writes encoder, `globals.json` and a manifest copy
/// into `out_dir`.
pub fn encode_corpus(
    corpus: &Corpus,
    feats_dir: &Path,
    cfg: &EncodingConfig,
    split: Option<&ClassificationSplit>,
    out_dir: &Path,
) -> Result<Vec<GlobalDescriptor>> {
    let docs: Vec<(String, Vec<Vec<f64>>)> = corpus
        .records()
        .par_iter()
        .map(|r| {
            let f = DescriptorFile::load(&descriptor_path(feats_dir, &r.doc_id))?;
            Ok((r.doc_id.clone(), f.descriptors_f64()))
        })
        .collect::<Result<_>>()?;
    let fit_sets: Vec<&[Vec<f64>]> = match cfg.fit_on {
        FitOn::All => docs.iter().map(|(_, d)| d.as_slice()).collect(),
        FitOn::Train => {
            let split =
                split.ok_or_else(|| Error::Config("fit_on = train needs a split".into()))?;
            docs.iter()
                .filter(|(id, _)| split.train.contains(id))
                .map(|(_, d)| d.as_slice())
                .collect()
        }
    };
    let encoder = Encoder::fit(&fit_sets, cfg)?;
    let globals = encoder.encode_all(&docs)?;
    encoder.save(out_dir)?;
    save_globals(&globals, &out_dir.join(GLOBALS_FILE))?;
    corpus.write_manifest(&out_dir.join(MANIFEST_FILE))?;
    Ok(globals)
}

/// Global descriptors of an encoder directory with their writer labels.
pub fn load_encoded(enc_dir: &Path) -> Result<(Vec<GlobalDescriptor>, Corpus)> {
    let globals = load_globals(&enc_dir.join(GLOBALS_FILE))?;
    let corpus = Corpus::read_manifest(&enc_dir.join(MANIFEST_FILE))?;
    if globals
        .iter()
        .map(|g| &g.doc_id)
        .ne(corpus.records().iter().map(|r| &r.doc_id))
    {
        return Err(Error::format(
            enc_dir,
            "globals.json and manifest.csv disagree",
        ));
    }
    Ok((globals, corpus))
}

/// Paths written by [`write_retrieval`].
#[derive(Debug, Clone)]
pub struct RetrievalOutputs<'a> {
    pub report: &'a Path,
    pub heatmap_doc: Option<&'a Path>,
    pub heatmap_scribe: Option<&'a Path>,
    pub cell_px: u32,
}

/// Leave-one-out evaluation; heatmap CSVs go next to their PNGs.
pub fn write_retrieval(
    globals: &[GlobalDescriptor],
    labels: &[String],
    out: &RetrievalOutputs<'_>,
) -> Result<RetrievalReport> {
    let (report, dm) = leave_one_out(globals, labels)?;
    if let Some(dir) = out.report.parent().filter(|d| !d.as_os_str().is_empty()) {
        mkdir(dir)?;
    }
    write_text(out.report, &report.to_json()?)?;
    if let Some(png) = out.heatmap_doc {
        export_document_heatmap(&dm, png, &png.with_extension("csv"), out.cell_px)?;
    }
    if let Some(png) = out.heatmap_scribe {
        let sm = scribe_similarity(&dm, labels)?;
        export_scribe_heatmap(&sm, png, &png.with_extension("csv"), out.cell_px)?;
    }
    Ok(report)
}

pub fn write_classification(
    globals: &[GlobalDescriptor],
    labels: &[String],
    split: &ClassificationSplit,
    classifier: Classifier,
    svm_c: f64,
    report_path: &Path,
    confusion_path: Option<&Path>,
) -> Result<ClassificationReport> {
    let params = SvmParams {
        c: svm_c,
        ..SvmParams::default()
    };
    let report = classify_split(globals, labels, split, classifier, &params)?;
    if let Some(dir) = report_path.parent().filter(|d| !d.as_os_str().is_empty()) {
        mkdir(dir)?;
    }
    write_text(report_path, &report.to_json()?)?;
    if let Some(p) = confusion_path {
        report.confusion.write_csv(p)?;
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub name: String,
    pub key: String,
    pub dir: PathBuf,
    pub skipped: bool,
    pub seconds: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunLog {
    pub config_hash: String,
    pub started_unix: u64,
    pub split_seed: u64,
    pub codebook_seeds: Vec<u64>,
    pub feature_sample_seed: u64,
    pub stages: Vec<StageRecord>,
    pub report_sha256: String,
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub report_dir: PathBuf,
    pub retrieval: RetrievalReport,
    pub classification: Vec<ClassificationReport>,
    pub log: RunLog,
}

pub fn cache_root(cfg: &PipelineConfig) -> PathBuf {
    std::env::var_os(CACHE_ENV)
        .map(PathBuf::from)
        .or_else(|| cfg.paths.cache.clone())
        .unwrap_or_else(|| cfg.paths.output.join("cache"))
}

fn short(key: &str) -> &str {
    &key[..16]
}

struct Stages {
    force: bool,
    records: Vec<StageRecord>,
}

impl Stages {
    /// Runs `body` in `dir` unless a completed directory for `key` exists.
    fn run<T: Serialize>(
        &mut self,
        name: &'static str,
        key: &str,
        dir: &Path,
        snapshot: &T,
        body: impl FnOnce(&Path) -> Result<()>,
    ) -> Result<()> {
        let started = Instant::now();
        let done = dir.join(COMPLETE);
        let skipped = !self.force && done.exists();
        if skipped {
            log::info!("{name}: up to date ({})", dir.display());
        } else {
            log::info!("{name}: running into {}", dir.display());
            if dir.exists() {
                fs::remove_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            }
            stage(name, mkdir(dir))?;
            let snap = serde_json::json!({ "stage": name, "key": key, "config": snapshot });
            stage(
                name,
                write_text(
                    &dir.join("stage.json"),
                    &(serde_json::to_string_pretty(&snap)? + "\n"),
                ),
            )?;
            stage(name, body(dir))?;
            stage(name, write_text(&done, key))?;
        }
        self.records.push(StageRecord {
            name: name.to_string(),
            key: key.to_string(),
            dir: dir.to_path_buf(),
            skipped,
            seconds: started.elapsed().as_secs_f64(),
        });
        Ok(())
    }
}

/// scan -> binarize -> features -> encode -> retrieve + classify, with
/// every stage cached under [`cache_root`] and the reports written to
/// `<output>/run-<key>/`.
pub fn run_pipeline(cfg: &PipelineConfig, force: bool) -> Result<RunSummary> {
    let started_unix = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map_or(0, |d| d.as_secs());
    stage("config", cfg.validate())?;
    let cache = cache_root(cfg);
    let mut stages = Stages {
        force,
        records: Vec::new(),
    };

    let t = Instant::now();
    let corpus = stage("scan", load_corpus(&cfg.paths.input))?;
    let corpus_key = stage("scan", corpus_fingerprint(&corpus))?;
    stages.records.push(StageRecord {
        name: "scan".into(),
        key: corpus_key.clone(),
        dir: cfg.paths.input.clone(),
        skipped: false,
        seconds: t.elapsed().as_secs_f64(),
    });
    let split = stage(
        "scan",
        make_classification_split(&corpus, cfg.evaluate.split_seed, cfg.evaluate.split_mode),
    )?;

    let masks_dir = if cfg.binarize.method == BinarizeMethod::None {
        None
    } else {
        let external: Option<Vec<String>> = match (&cfg.binarize.method, &cfg.binarize.mask_dir) {
            (BinarizeMethod::External, Some(dir)) => Some(stage(
                "binarize",
                corpus
                    .records()
                    .iter()
                    .map(|r| file_digest(&mask_path(dir, &r.doc_id)))
                    .collect::<Result<Vec<_>>>(),
            )?),
            _ => None,
        };
        let mut bin_cfg = cfg.binarize.clone();
        // the mask content, not its location, identifies external masks
        bin_cfg.mask_dir = None;
        let key = hash_json(&("binarize", &corpus_key, &bin_cfg, &external));
        let dir = cache.join(format!("binarize-{}", short(&key)));
        stages.run("binarize", &key, &dir, &cfg.binarize, |d| {
            binarize_corpus(&corpus, &cfg.binarize, d)
        })?;
        Some((key, dir))
    };

    let feat_key = hash_json(&(
        "features",
        &corpus_key,
        masks_dir.as_ref().map(|m| &m.0),
        &cfg.features,
    ));
    let feat_dir = cache.join(format!("features-{}", short(&feat_key)));
    stages.run("features", &feat_key, &feat_dir, &cfg.features, |d| {
        let summary = extract_corpus(
            &corpus,
            masks_dir.as_ref().map(|m| m.1.as_path()),
            &cfg.features,
            d,
        )?;
        write_text(
            &d.join("counts.json"),
            &(serde_json::to_string_pretty(&summary)? + "\n"),
        )
    })?;

    let enc_split = (cfg.encode.fit_on == FitOn::Train).then_some(&split);
    let enc_key = hash_json(&("encode", &feat_key, &cfg.encode, enc_split));
    let enc_dir = cache.join(format!("encode-{}", short(&enc_key)));
    stages.run("encode", &enc_key, &enc_dir, &cfg.encode, |d| {
        encode_corpus(&corpus, &feat_dir, &cfg.encode, enc_split, d).map(|_| ())
    })?;

    let eval_key = hash_json(&("evaluate", &enc_key, &cfg.evaluate, &split));
    let report_dir = cfg.paths.output.join(format!("run-{}", short(&eval_key)));
    stages.run("evaluate", &eval_key, &report_dir, cfg, |d| {
        let (globals, enc_corpus) = load_encoded(&enc_dir)?;
        let labels = enc_corpus.labels();
        write_text(&d.join("config.toml"), &cfg.to_toml()?)?;
        split.save(&d.join("split.json"))?;
        write_retrieval(
            &globals,
            &labels,
            &RetrievalOutputs {
                report: &d.join("report.json"),
                heatmap_doc: Some(&d.join("heatmap_doc.png")),
                heatmap_scribe: Some(&d.join("heatmap_scribe.png")),
                cell_px: cfg.evaluate.heatmap_cell_px,
            },
        )?;
        for &c in &cfg.evaluate.classifiers {
            let name = classifier_name(c);
            write_classification(
                &globals,
                &labels,
                &split,
                c,
                cfg.evaluate.svm_c,
                &d.join(format!("cls_{name}.json")),
                Some(&d.join(format!("conf_{name}.csv"))),
            )?;
        }
        Ok(())
    })?;

    let report_path = report_dir.join("report.json");
    let retrieval: RetrievalReport = stage("evaluate", read_json(&report_path))?;
    let classification = cfg
        .evaluate
        .classifiers
        .iter()
        .map(|&c| read_json(&report_dir.join(format!("cls_{}.json", classifier_name(c)))))
        .collect::<Result<Vec<ClassificationReport>>>();
    let classification = stage("evaluate", classification)?;
    let log = RunLog {
        config_hash: cfg.hash(),
        started_unix,
        split_seed: cfg.evaluate.split_seed,
        codebook_seeds: cfg.encode.seeds.clone(),
        feature_sample_seed: cfg.features.sample_seed,
        stages: stages.records,
        report_sha256: stage("evaluate", file_digest(&report_path))?,
    };
    let log_path = report_dir.join("run_log.json");
    stage(
        "evaluate",
        write_text(&log_path, &(serde_json::to_string_pretty(&log)? + "\n")),
    )?;
    Ok(RunSummary {
        report_dir,
        retrieval,
        classification,
        log,
    })
}

pub fn classifier_name(c: Classifier) -> &'static str {
    match c {
        Classifier::Nn => "nn",
        Classifier::Svm => "svm",
    }
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}
