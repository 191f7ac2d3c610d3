//! Global document descriptors: VLAD embedding against several codebooks,
//! generalized max pooling, power + l2 normalization, concatenation and a
//! jointly fitted whitening PCA.

use std::fs;
use std::path::Path;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::model_io::{load_codebook, load_pca, save_codebook, save_pca};
use crate::numerics::{fit_pca, gmp_solve, kmeans, l2_normalize, Codebook, KmeansParams, PcaModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Pool {
    Sum,
    #[default]
    Gmp,
}

impl FromStr for Pool {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sum" => Ok(Pool::Sum),
            "gmp" => Ok(Pool::Gmp),
            other => Err(Error::UnknownMethod(other.to_string())),
        }
    }
}

/// Which documents the codebooks and the joint PCA are fitted on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum FitOn {
    #[default]
    All,
    Train,
}

impl FromStr for FitOn {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all" => Ok(FitOn::All),
            "train" => Ok(FitOn::Train),
            other => Err(Error::UnknownMethod(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncodingConfig {
    pub n_codebooks: usize,
    pub k: usize,
    pub gamma: f64,
    pub power_alpha: f64,
    pub seeds: Vec<u64>,
    pub pool: Pool,
    /// Joint PCA dimension; `None` means `min(total_dim, n_docs - 1)`.
    pub pca_dim: Option<usize>,
    pub fit_on: FitOn,
    /// Upper bound on pooled descriptors handed to k-means.
    pub kmeans_sample: Option<usize>,
}

impl Default for EncodingConfig {
    fn default() -> Self {
        EncodingConfig {
            n_codebooks: 5,
            k: 100,
            gamma: 1000.0,
            power_alpha: 0.5,
            seeds: (1..=5).collect(),
            pool: Pool::Gmp,
            pca_dim: None,
            fit_on: FitOn::All,
            kmeans_sample: Some(100_000),
        }
    }
}

impl EncodingConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n_codebooks == 0 {
            return bad("n_codebooks must be >= 1".into());
        }
        if self.seeds.len() != self.n_codebooks {
            return bad(format!(
                "{} seeds given for {} codebooks",
                self.seeds.len(),
                self.n_codebooks
            ));
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.seeds.len() {
            return bad("codebook seeds must be pairwise distinct".into());
        }
        if self.k == 0 {
            return bad("k must be >= 1".into());
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return bad(format!("gamma must be > 0, got {}", self.gamma));
        }
        if !(self.power_alpha > 0.0 && self.power_alpha <= 1.0) {
            return bad(format!(
                "power_alpha must be in (0, 1], got {}",
                self.power_alpha
            ));
        }
        if self.pca_dim == Some(0) || self.kmeans_sample == Some(0) {
            return bad("pca_dim and kmeans_sample must be positive".into());
        }
        Ok(())
    }

    /// Sets the codebook count with seeds `1..=n`.
    pub fn with_codebooks(mut self, n: usize) -> Self {
        self.n_codebooks = n;
        self.seeds = (1..=n as u64).collect();
        self
    }
}

/// Dense k*dim VLAD embedding: the residual to the nearest center in that
/// center's block, zeros elsewhere.
pub fn vlad_embed(d: &[f64], cb: &Codebook) -> Result<Vec<f64>> {
    let (j, residual) = vlad_residual(d, cb)?;
    let dim = cb.dim();
    let mut out = vec![0.0; cb.k() * dim];
    out[j * dim..(j + 1) * dim].copy_from_slice(&residual);
    Ok(out)
}

/// Nearest center index and the residual block.
pub fn vlad_residual(d: &[f64], cb: &Codebook) -> Result<(usize, Vec<f64>)> {
    if d.len() != cb.dim() {
        return Err(Error::DimMismatch(cb.dim(), d.len()));
    }
    let (j, _) = cb.nearest(d);
    Ok((
        j,
        d.iter().zip(&cb.centers[j]).map(|(a, c)| a - c).collect(),
    ))
}

/// Pools dense embeddings. Sum of nothing is an empty vector; GMP of nothing
/// is an error.
pub fn aggregate(embeddings: &[Vec<f64>], mode: Pool, gamma: f64) -> Result<Vec<f64>> {
    let Some(first) = embeddings.first() else {
        return match mode {
            Pool::Sum => Ok(Vec::new()),
            Pool::Gmp => Err(Error::EmptySetForGmp),
        };
    };
    let dim = first.len();
    if let Some(bad) = embeddings.iter().find(|e| e.len() != dim) {
        return Err(Error::DimMismatch(dim, bad.len()));
    }
    match mode {
        Pool::Sum => {
            let mut out = vec![0.0; dim];
            for e in embeddings {
                out.iter_mut().zip(e).for_each(|(o, v)| *o += v);
            }
            Ok(out)
        }
        Pool::Gmp => {
            let phi = DMatrix::from_fn(dim, embeddings.len(), |i, j| embeddings[j][i]);
            Ok(gmp_solve(&phi, gamma)?.iter().copied().collect())
        }
    }
}

/// VLAD + pooling for one codebook without forming dense embeddings. With
/// hard assignment the ridge system splits into one independent solve per
/// center, so GMP is solved block by block.
pub fn pool_codebook(
    descs: &[Vec<f64>],
    cb: &Codebook,
    mode: Pool,
    gamma: f64,
) -> Result<Vec<f64>> {
    if descs.is_empty() && mode == Pool::Gmp {
        return Err(Error::EmptySetForGmp);
    }
    let dim = cb.dim();
    let mut members: Vec<Vec<Vec<f64>>> = vec![Vec::new(); cb.k()];
    for d in descs {
        let (j, r) = vlad_residual(d, cb)?;
        members[j].push(r);
    }
    let mut out = vec![0.0; cb.k() * dim];
    for (j, block) in members.iter().enumerate() {
        if block.is_empty() {
            continue;
        }
        let pooled = match mode {
            Pool::Sum => aggregate(block, Pool::Sum, gamma)?,
            Pool::Gmp => {
                let phi = DMatrix::from_fn(dim, block.len(), |i, c| block[c][i]);
                gmp_solve(&phi, gamma)?.iter().copied().collect()
            }
        };
        out[j * dim..(j + 1) * dim].copy_from_slice(&pooled);
    }
    Ok(out)
}

/// Element-wise signed power followed by l2 normalization. Zero stays zero.
pub fn power_l2(v: &[f64], alpha: f64) -> Vec<f64> {
    let mut out: Vec<f64> = v.iter().map(|x| x.signum() * x.abs().powf(alpha)).collect();
    // signum(0.0) is 1.0 but 0^alpha is 0, so zeros survive
    l2_normalize(&mut out);
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalDescriptor {
    pub doc_id: String,
    pub vector: Vec<f64>,
    /// Set when the document had no local descriptors; the vector is zero.
    #[serde(default)]
    pub empty: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Encoder {
    pub config: EncodingConfig,
    pub codebooks: Vec<Codebook>,
    pub pca: PcaModel,
}

/// Pooled descriptors, optionally subsampled (sorted indices, so order is
/// stable) to `cap` rows.
fn pooled_sample(sets: &[&[Vec<f64>]], cap: Option<usize>, seed: u64) -> Vec<Vec<f64>> {
    let all: Vec<&Vec<f64>> = sets.iter().flat_map(|s| s.iter()).collect();
    match cap {
        Some(cap) if all.len() > cap => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut idx = sample(&mut rng, all.len(), cap).into_vec();
            idx.sort_unstable();
            idx.into_iter().map(|i| all[i].clone()).collect()
        }
        _ => all.into_iter().cloned().collect(),
    }
}

impl Encoder {
    /// Fits codebooks on the pooled descriptors of `fit_sets` and the joint
    /// whitening on their concatenated encodings. Documents without
    /// descriptors are left out of the PCA fit.
    pub fn fit(fit_sets: &[&[Vec<f64>]], cfg: &EncodingConfig) -> Result<Encoder> {
        cfg.validate()?;
        if fit_sets.len() < 2 {
            return Err(Error::TooFewDocuments(fit_sets.len()));
        }
        let pooled: usize = fit_sets.iter().map(|s| s.len()).sum();
        if pooled < 10 * cfg.k {
            return Err(Error::InsufficientDescriptors {
                required: 10 * cfg.k,
                actual: pooled,
            });
        }
        let sample = pooled_sample(fit_sets, cfg.kmeans_sample, cfg.seeds[0]);
        if sample.len() < pooled {
            log::info!(
                "k-means on {} of {} pooled descriptors",
                sample.len(),
                pooled
            );
        }
        let codebooks = cfg
            .seeds
            .iter()
            .map(|&seed| {
                log::debug!("codebook seed {seed}");
                kmeans(&sample, &KmeansParams::new(cfg.k, seed))
            })
            .collect::<Result<Vec<_>>>()?;

        let partial = Encoder {
            config: cfg.clone(),
            codebooks,
            pca: PcaModel {
                mean: Vec::new(),
                basis: DMatrix::zeros(0, 0),
                eigenvalues: Vec::new(),
                whiten: true,
                eps: 0.0,
            },
        };
        let concatenated: Vec<Vec<f64>> = fit_sets
            .par_iter()
            .filter(|s| !s.is_empty())
            .map(|s| partial.concatenated(s))
            .collect::<Result<_>>()?;
        if concatenated.len() < 2 {
            return Err(Error::TooFewDocuments(concatenated.len()));
        }
        let total = partial.concatenated_dim();
        let bound = total.min(concatenated.len() - 1);
        let m = cfg.pca_dim.map_or(bound, |m| m.min(bound));
        if cfg.pca_dim.is_some_and(|p| p > bound) {
            log::warn!("joint PCA dimension capped at {bound}");
        }
        let pca = fit_pca(&concatenated, m, true)?;
        Ok(Encoder { pca, ..partial })
    }

    pub fn concatenated_dim(&self) -> usize {
        self.codebooks.iter().map(|c| c.k() * c.dim()).sum()
    }

    pub fn output_dim(&self) -> usize {
        self.pca.output_dim()
    }

    /// Per-codebook VLAD + pooling + power/l2, concatenated (before the PCA).
    pub fn concatenated(&self, descs: &[Vec<f64>]) -> Result<Vec<f64>> {
        if descs.is_empty() {
            return Err(Error::EmptyDescriptorSet(String::new()));
        }
        let mut out = Vec::with_capacity(self.concatenated_dim());
        for cb in &self.codebooks {
            let pooled = pool_codebook(descs, cb, self.config.pool, self.config.gamma)?;
            out.extend(power_l2(&pooled, self.config.power_alpha));
        }
        Ok(out)
    }

    /// Whitened projection before the final l2 step.
    pub fn project(&self, descs: &[Vec<f64>]) -> Result<Vec<f64>> {
        self.pca.transform(&self.concatenated(descs)?)
    }

    pub fn encode(&self, doc_id: &str, descs: &[Vec<f64>]) -> Result<GlobalDescriptor> {
        if descs.is_empty() {
            return Err(Error::EmptyDescriptorSet(doc_id.to_string()));
        }
        let mut vector = self.project(descs)?;
        l2_normalize(&mut vector);
        Ok(GlobalDescriptor {
            doc_id: doc_id.to_string(),
            vector,
            empty: false,
        })
    }

    /// Encodes every document in parallel; empty ones become flagged zero
    /// vectors.
    pub fn encode_all(&self, docs: &[(String, Vec<Vec<f64>>)]) -> Result<Vec<GlobalDescriptor>> {
        docs.par_iter()
            .map(|(id, descs)| {
                if descs.is_empty() {
                    log::warn!("{id}: no local descriptors, using a zero vector");
                    Ok(GlobalDescriptor {
                        doc_id: id.clone(),
                        vector: vec![0.0; self.output_dim()],
                        empty: true,
                    })
                } else {
                    self.encode(id, descs)
                }
            })
            .collect()
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (i, cb) in self.codebooks.iter().enumerate() {
            save_codebook(cb, &dir.join(format!("codebook_{i}.pwmd")))?;
        }
        save_pca(&self.pca, &dir.join("joint_pca.pwmd"))?;
        let path = dir.join("config.json");
        let json = serde_json::to_string_pretty(&self.config)?;
        fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: &Path) -> Result<Encoder> {
        let path = dir.join("config.json");
        let text = fs::read_to_string(&path).map_err(|e| {
            if e.kind() == std::io::ErrorKind::NotFound {
                Error::NotFitted(path.display().to_string())
            } else {
                Error::io(&path, e)
            }
        })?;
        let config: EncodingConfig = serde_json::from_str(&text)?;
        let codebooks = (0..config.n_codebooks)
            .map(|i| load_codebook(&dir.join(format!("codebook_{i}.pwmd"))))
            .collect::<Result<Vec<_>>>()?;
        let pca = load_pca(&dir.join("joint_pca.pwmd"))?;
        Ok(Encoder {
            config,
            codebooks,
            pca,
        })
    }
}

pub const GLOBALS_FILE: &str = "globals.json";

pub fn save_globals(descs: &[GlobalDescriptor], path: &Path) -> Result<()> {
    let json = serde_json::to_string(descs)?;
    fs::write(path, json + "\n").map_err(|e| Error::io(path, e))
}

pub fn load_globals(path: &Path) -> Result<Vec<GlobalDescriptor>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}
