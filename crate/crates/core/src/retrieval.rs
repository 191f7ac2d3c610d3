//! Cosine-distance retrieval, leave-one-out evaluation and heatmap export.

use std::fs;
use std::path::Path;

use image::{GrayImage, Luma};
use rayon::prelude::*;
use serde::{Deserialize, Serialize, Serializer};

use crate::encode::GlobalDescriptor;
use crate::error::{Error, Result};
use crate::numerics::{dot, l2_norm};

/// `1 - cos(a, b)`, clamped to [0, 2]. A zero vector is maximally distant
/// from everything.
pub fn cosine_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimMismatch(a.len(), b.len()));
    }
    let (na, nb) = (l2_norm(a), l2_norm(b));
    if na == 0.0 || nb == 0.0 {
        return Ok(2.0);
    }
    Ok((1.0 - dot(a, b) / (na * nb)).clamp(0.0, 2.0))
}

/// Symmetric n x n distances with a zero diagonal, rows in document order.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    pub doc_ids: Vec<String>,
    data: Vec<f64>,
}

impl DistanceMatrix {
    pub fn from_rows(doc_ids: Vec<String>, rows: &[Vec<f64>]) -> Result<Self> {
        let n = doc_ids.len();
        if rows.len() != n || rows.iter().any(|r| r.len() != n) {
            return Err(Error::InvalidArgument(format!(
                "distance matrix must be {n} x {n}"
            )));
        }
        Ok(DistanceMatrix {
            doc_ids,
            data: rows.concat(),
        })
    }

    pub fn compute(descs: &[GlobalDescriptor]) -> Result<Self> {
        let n = descs.len();
        let upper: Vec<Vec<f64>> = (0..n)
            .into_par_iter()
            .map(|i| {
                (i + 1..n)
                    .map(|j| cosine_distance(&descs[i].vector, &descs[j].vector))
                    .collect::<Result<Vec<f64>>>()
            })
            .collect::<Result<_>>()?;
        let mut data = vec![0.0; n * n];
        for (i, row) in upper.iter().enumerate() {
            for (off, &d) in row.iter().enumerate() {
                let j = i + 1 + off;
                data[i * n + j] = d;
                data[j * n + i] = d;
            }
        }
        Ok(DistanceMatrix {
            doc_ids: descs.iter().map(|d| d.doc_id.clone()).collect(),
            data,
        })
    }

    pub fn len(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.doc_ids.is_empty()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.len() + j]
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.data
            .chunks(self.len().max(1))
            .map(<[f64]>::to_vec)
            .collect()
    }

    /// Gallery order for query `q`: everyone else by ascending distance, ties
    /// by doc_id.
    pub fn ranking(&self, q: usize) -> Vec<usize> {
        let mut others: Vec<usize> = (0..self.len()).filter(|&j| j != q).collect();
        others.sort_by(|&a, &b| {
            self.get(q, a)
                .total_cmp(&self.get(q, b))
                .then_with(|| self.doc_ids[a].cmp(&self.doc_ids[b]))
        });
        others
    }
}

/// Mean over relevant positions of precision at that position; 0 when
/// nothing is relevant.
pub fn average_precision(relevant: &[bool]) -> f64 {
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (i, &r) in relevant.iter().enumerate() {
        if r {
            hits += 1;
            sum += hits as f64 / (i + 1) as f64;
        }
    }
    if hits == 0 {
        0.0
    } else {
        sum / hits as f64
    }
}

fn one_decimal<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_f64((v * 10.0).round() / 10.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryResult {
    pub doc_id: String,
    pub ap: f64,
    /// 1-based rank of the first same-writer document.
    pub first_correct_rank: usize,
}

/// Percentages are kept exact in memory and written with one decimal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalReport {
    #[serde(serialize_with = "one_decimal")]
    pub top1: f64,
    #[serde(serialize_with = "one_decimal")]
    pub top5: f64,
    #[serde(serialize_with = "one_decimal")]
    pub top10: f64,
    #[serde(serialize_with = "one_decimal")]
    pub map: f64,
    pub per_query: Vec<QueryResult>,
    /// Queries whose writer has no other document.
    pub excluded: Vec<String>,
    /// Documents encoded as flagged zero vectors.
    #[serde(default)]
    pub empty_documents: Vec<String>,
}

impl RetrievalReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }
}

/// Every document queries all others. Soft Top-k: a hit anywhere in the
/// first k counts.
pub fn leave_one_out(
    descs: &[GlobalDescriptor],
    labels: &[String],
) -> Result<(RetrievalReport, DistanceMatrix)> {
    if descs.len() < 2 {
        return Err(Error::TooFewDocuments(descs.len()));
    }
    if labels.len() != descs.len() {
        return Err(Error::DimMismatch(descs.len(), labels.len()));
    }
    let dm = DistanceMatrix::compute(descs)?;
    let report = evaluate_distances(&dm, labels)?;
    let report = RetrievalReport {
        empty_documents: descs
            .iter()
            .filter(|d| d.empty)
            .map(|d| d.doc_id.clone())
            .collect(),
        ..report
    };
    Ok((report, dm))
}

pub fn evaluate_distances(dm: &DistanceMatrix, labels: &[String]) -> Result<RetrievalReport> {
    let n = dm.len();
    if n < 2 {
        return Err(Error::TooFewDocuments(n));
    }
    let mut per_query = Vec::new();
    let mut excluded = Vec::new();
    for q in 0..n {
        let relevant: Vec<bool> = dm
            .ranking(q)
            .into_iter()
            .map(|j| labels[j] == labels[q])
            .collect();
        match relevant.iter().position(|&r| r) {
            None => {
                log::warn!(
                    "{}: writer has no other document, query excluded",
                    dm.doc_ids[q]
                );
                excluded.push(dm.doc_ids[q].clone());
            }
            Some(first) => per_query.push(QueryResult {
                doc_id: dm.doc_ids[q].clone(),
                ap: average_precision(&relevant),
                first_correct_rank: first + 1,
            }),
        }
    }
    let count = per_query.len().max(1) as f64;
    let top = |k: usize| {
        100.0
            * per_query
                .iter()
                .filter(|r| r.first_correct_rank <= k)
                .count() as f64
            / count
    };
    Ok(RetrievalReport {
        top1: top(1),
        top5: top(5),
        top10: top(10),
        map: 100.0 * per_query.iter().map(|r| r.ap).sum::<f64>() / count,
        per_query,
        excluded,
        empty_documents: Vec::new(),
    })
}

/// Writer x writer mean distances, writers in first-occurrence order.
#[derive(Debug, Clone, PartialEq)]
pub struct ScribeMatrix {
    pub writers: Vec<String>,
    /// Row-major; `None` on the diagonal of single-document writers.
    pub values: Vec<Option<f64>>,
}

impl ScribeMatrix {
    pub fn get(&self, a: usize, b: usize) -> Option<f64> {
        self.values[a * self.writers.len() + b]
    }

    pub fn rows(&self) -> Vec<Vec<Option<f64>>> {
        self.values
            .chunks(self.writers.len().max(1))
            .map(<[Option<f64>]>::to_vec)
            .collect()
    }
}

/// Mean of `dm[i][j]` over documents i of writer a and j of writer b,
/// leaving out i = j.
pub fn scribe_similarity(dm: &DistanceMatrix, labels: &[String]) -> Result<ScribeMatrix> {
    if labels.len() != dm.len() {
        return Err(Error::DimMismatch(dm.len(), labels.len()));
    }
    let mut writers: Vec<String> = Vec::new();
    let mut of: Vec<usize> = Vec::with_capacity(labels.len());
    for l in labels {
        let idx = match writers.iter().position(|w| w == l) {
            Some(i) => i,
            None => {
                writers.push(l.clone());
                writers.len() - 1
            }
        };
        of.push(idx);
    }
    let w = writers.len();
    let mut sums = vec![0.0; w * w];
    let mut counts = vec![0usize; w * w];
    for i in 0..dm.len() {
        for j in 0..dm.len() {
            if i != j {
                let cell = of[i] * w + of[j];
                sums[cell] += dm.get(i, j);
                counts[cell] += 1;
            }
        }
    }
    let values = sums
        .iter()
        .zip(&counts)
        .map(|(&s, &c)| (c > 0).then(|| s / c as f64))
        .collect::<Vec<_>>();
    for (a, name) in writers.iter().enumerate() {
        if values[a * w + a].is_none() {
            log::warn!("writer {name} has a single document; its self-similarity is undefined");
        }
    }
    Ok(ScribeMatrix { writers, values })
}

/// Writes `matrix` as a grayscale PNG (smallest value black, largest white,
/// constant matrices mid-gray, missing cells white) and as a labeled CSV.
pub fn export_heatmap(
    matrix: &[Vec<Option<f64>>],
    labels: &[String],
    png: &Path,
    csv_path: &Path,
    cell_px: u32,
) -> Result<()> {
    let n = labels.len();
    if matrix.len() != n || matrix.iter().any(|r| r.len() != n) {
        return Err(Error::InvalidArgument(format!("heatmap must be {n} x {n}")));
    }
    let present = || matrix.iter().flatten().flatten().copied();
    if present().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteInput);
    }
    let lo = present().fold(f64::INFINITY, f64::min);
    let hi = present().fold(f64::NEG_INFINITY, f64::max);
    let shade = |v: Option<f64>| -> u8 {
        match v {
            None => 255,
            Some(_) if hi <= lo => 128,
            Some(v) => (255.0 * (v - lo) / (hi - lo)).round() as u8,
        }
    };
    let cell = cell_px.max(1);
    let side = n as u32 * cell;
    let img = GrayImage::from_fn(side, side, |x, y| {
        Luma([shade(matrix[(y / cell) as usize][(x / cell) as usize])])
    });
    for p in [png, csv_path] {
        if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    img.save(png).map_err(|e| Error::Image {
        path: png.to_path_buf(),
        source: e,
    })?;

    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(csv_path)?;
    let mut header = vec![String::new()];
    header.extend(labels.iter().cloned());
    w.write_record(&header)?;
    for (label, row) in labels.iter().zip(matrix) {
        let mut rec = vec![label.clone()];
        rec.extend(
            row.iter()
                .map(|v| v.map_or(String::new(), |v| v.to_string())),
        );
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(csv_path, e))?;
    Ok(())
}

/// Document-level heatmap of a distance matrix.
pub fn export_document_heatmap(
    dm: &DistanceMatrix,
    png: &Path,
    csv: &Path,
    cell_px: u32,
) -> Result<()> {
    let rows: Vec<Vec<Option<f64>>> = dm
        .rows()
        .into_iter()
        .map(|r| r.into_iter().map(Some).collect())
        .collect();
    export_heatmap(&rows, &dm.doc_ids, png, csv, cell_px)
}

pub fn export_scribe_heatmap(
    sm: &ScribeMatrix,
    png: &Path,
    csv: &Path,
    cell_px: u32,
) -> Result<()> {
    export_heatmap(&sm.rows(), &sm.writers, png, csv, cell_px)
}
