//! Writer classification: nearest neighbor and one linear SVM per writer.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::ClassificationSplit;
use crate::encode::GlobalDescriptor;
use crate::error::{Error, Result};
use crate::numerics::dot;
use crate::retrieval::cosine_distance;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Classifier {
    Nn,
    #[default]
    Svm,
}

impl FromStr for Classifier {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nn" => Ok(Classifier::Nn),
            "svm" => Ok(Classifier::Svm),
            other => Err(Error::UnknownMethod(other.to_string())),
        }
    }
}

fn check_train(train: &[GlobalDescriptor], labels: &[String]) -> Result<()> {
    if train.is_empty() {
        return Err(Error::EmptyTrainSet);
    }
    if labels.len() != train.len() {
        return Err(Error::DimMismatch(train.len(), labels.len()));
    }
    Ok(())
}

/// Writers ranked by the distance of their nearest training sample; ties go
/// to the sample with the smaller doc_id.
pub fn nn_rank(train: &[GlobalDescriptor], labels: &[String], x: &[f64]) -> Result<Vec<String>> {
    check_train(train, labels)?;
    let mut scored = train
        .iter()
        .zip(labels)
        .map(|(t, l)| {
            Ok((
                cosine_distance(&t.vector, x)?,
                t.doc_id.as_str(),
                l.as_str(),
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    scored.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(b.1)));
    let mut out: Vec<String> = Vec::new();
    for (_, _, l) in scored {
        if !out.iter().any(|w| w == l) {
            out.push(l.to_string());
        }
    }
    Ok(out)
}

pub fn nn_classify(train: &[GlobalDescriptor], labels: &[String], x: &[f64]) -> Result<String> {
    Ok(nn_rank(train, labels, x)?.remove(0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SvmParams {
    pub c: f64,
    /// Stop once primal minus dual objective is below `gap_tol * max(1, primal)`.
    pub gap_tol: f64,
    pub max_epochs: usize,
}

impl Default for SvmParams {
    fn default() -> Self {
        SvmParams {
            c: 1.0,
            gap_tol: 1e-12,
            max_epochs: 10_000,
        }
    }
}

/// Linear one-vs-rest models, writers sorted by name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmModel {
    pub c: f64,
    pub writers: Vec<String>,
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<f64>,
    /// (positive, negative) per-sample cost multipliers per writer.
    pub class_weights: Vec<(f64, f64)>,
}

/// Weighted hinge-loss SVM with the bias folded in as a constant feature,
/// solved by dual coordinate descent in a fixed sample order.
/// Returns (w, b, final gap).
pub fn train_binary_svm(
    xs: &[&[f64]],
    ys: &[f64],
    costs: &[f64],
    params: &SvmParams,
) -> (Vec<f64>, f64, f64) {
    let n = xs.len();
    let d = xs.first().map_or(0, |x| x.len());
    // augmented weight vector: w[..d] and the bias at w[d]
    let mut w = vec![0.0; d + 1];
    let mut alpha = vec![0.0; n];
    let qii: Vec<f64> = xs.iter().map(|x| dot(x, x) + 1.0).collect();
    let margin = |w: &[f64], i: usize| dot(&w[..d], xs[i]) + w[d];
    let mut gap = f64::INFINITY;
    for _ in 0..params.max_epochs {
        for i in 0..n {
            let g = ys[i] * margin(&w, i) - 1.0;
            let new = (alpha[i] - g / qii[i]).clamp(0.0, costs[i]);
            let delta = new - alpha[i];
            if delta != 0.0 {
                alpha[i] = new;
                let s = delta * ys[i];
                w[..d]
                    .iter_mut()
                    .zip(xs[i])
                    .for_each(|(wj, xj)| *wj += s * xj);
                w[d] += s;
            }
        }
        let half_sq = 0.5 * dot(&w, &w);
        let primal = half_sq
            + (0..n)
                .map(|i| costs[i] * (1.0 - ys[i] * margin(&w, i)).max(0.0))
                .sum::<f64>();
        let dual = alpha.iter().sum::<f64>() - half_sq;
        gap = primal - dual;
        if gap <= params.gap_tol * primal.max(1.0) {
            break;
        }
    }
    let b = w.pop().unwrap_or(0.0);
    (w, b, gap)
}

/// One SVM per writer: that writer's samples positive, all others negative,
/// costs `C * n / (2 n_pos)` and `C * n / (2 n_neg)`.
pub fn train_svms(
    train: &[GlobalDescriptor],
    labels: &[String],
    params: &SvmParams,
) -> Result<SvmModel> {
    check_train(train, labels)?;
    let mut writers: Vec<String> = labels.to_vec();
    writers.sort();
    writers.dedup();
    if writers.len() < 2 {
        return Err(Error::SingleClass);
    }
    if !(params.c > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "C must be > 0, got {}",
            params.c
        )));
    }
    let xs: Vec<&[f64]> = train.iter().map(|t| t.vector.as_slice()).collect();
    let n = train.len() as f64;
    let trained: Vec<(Vec<f64>, f64, (f64, f64))> = writers
        .par_iter()
        .map(|wr| {
            let ys: Vec<f64> = labels
                .iter()
                .map(|l| if l == wr { 1.0 } else { -1.0 })
                .collect();
            let n_pos = ys.iter().filter(|&&y| y > 0.0).count() as f64;
            let weights = (n / (2.0 * n_pos), n / (2.0 * (n - n_pos)));
            let costs: Vec<f64> = ys
                .iter()
                .map(|&y| params.c * if y > 0.0 { weights.0 } else { weights.1 })
                .collect();
            let (w, b, gap) = train_binary_svm(&xs, &ys, &costs, params);
            log::debug!("svm {wr}: duality gap {gap:e}");
            (w, b, weights)
        })
        .collect();
    if trained
        .iter()
        .any(|(w, b, _)| !b.is_finite() || w.iter().any(|v| !v.is_finite()))
    {
        return Err(Error::NonFiniteInput);
    }
    let mut model = SvmModel {
        c: params.c,
        writers,
        weights: Vec::new(),
        biases: Vec::new(),
        class_weights: Vec::new(),
    };
    for (w, b, cw) in trained {
        model.weights.push(w);
        model.biases.push(b);
        model.class_weights.push(cw);
    }
    Ok(model)
}

impl SvmModel {
    pub fn decision_values(&self, x: &[f64]) -> Result<Vec<f64>> {
        if self.writers.is_empty() {
            return Err(Error::NotTrained);
        }
        self.weights
            .iter()
            .zip(&self.biases)
            .map(|(w, b)| {
                if w.len() != x.len() {
                    return Err(Error::DimMismatch(w.len(), x.len()));
                }
                Ok(dot(w, x) + b)
            })
            .collect()
    }

    /// Writers by decreasing decision value, ties by name.
    pub fn rank(&self, x: &[f64]) -> Result<Vec<String>> {
        let scores = self.decision_values(x)?;
        let mut order: Vec<usize> = (0..self.writers.len()).collect();
        order.sort_by(|&a, &b| {
            scores[b]
                .total_cmp(&scores[a])
                .then_with(|| self.writers[a].cmp(&self.writers[b]))
        });
        Ok(order.into_iter().map(|i| self.writers[i].clone()).collect())
    }
}

pub fn svm_classify(model: &SvmModel, x: &[f64]) -> Result<String> {
    Ok(model.rank(x)?.remove(0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub doc_id: String,
    /// Best first.
    pub ranked_writers: Vec<String>,
}

/// Rows are true writers, columns predicted ones, both in `writers` order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub writers: Vec<String>,
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    /// Header of writer names, then `true_writer,count,...` rows.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_path(path)?;
        let mut header = vec![String::new()];
        header.extend(self.writers.iter().cloned());
        w.write_record(&header)?;
        for (wr, row) in self.writers.iter().zip(&self.counts) {
            let mut rec = vec![wr.clone()];
            rec.extend(row.iter().map(u64::to_string));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocResult {
    pub doc_id: String,
    pub writer: String,
    pub predicted: String,
    pub true_rank: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationReport {
    pub classifier: Classifier,
    pub top1: f64,
    pub top5: f64,
    pub per_doc: Vec<DocResult>,
    pub confusion: ConfusionMatrix,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub svm_c: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub class_weighting: Option<String>,
    /// Training documents left out because they had no descriptors.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub skipped_training: Vec<String>,
}

impl ClassificationReport {
    pub fn to_json(&self) -> Result<String> {
        let mut v = serde_json::to_value(self)?;
        for key in ["top1", "top5"] {
            if let Some(x) = v[key].as_f64() {
                v[key] = serde_json::json!((x * 10.0).round() / 10.0);
            }
        }
        Ok(serde_json::to_string_pretty(&v)? + "\n")
    }
}

/// Top-1 / Top-5 and the Top-1 confusion matrix over `test` (doc_id, writer)
/// pairs. Writers in the matrix are sorted by name.
pub fn evaluate_classification(
    test: &[(String, String)],
    predictions: &[Prediction],
    classifier: Classifier,
) -> Result<ClassificationReport> {
    let by_id: BTreeMap<&str, &Prediction> =
        predictions.iter().map(|p| (p.doc_id.as_str(), p)).collect();
    let mut writers: Vec<String> = test.iter().map(|(_, w)| w.clone()).collect();
    for p in predictions {
        writers.extend(p.ranked_writers.first().cloned());
    }
    writers.sort();
    writers.dedup();
    let index = |w: &str| writers.binary_search_by(|x| x.as_str().cmp(w)).unwrap();
    let mut counts = vec![vec![0u64; writers.len()]; writers.len()];
    let mut per_doc = Vec::with_capacity(test.len());
    for (doc_id, writer) in test {
        let p = by_id
            .get(doc_id.as_str())
            .filter(|p| !p.ranked_writers.is_empty())
            .ok_or_else(|| Error::MissingPrediction(doc_id.clone()))?;
        let predicted = p.ranked_writers[0].clone();
        counts[index(writer)][index(&predicted)] += 1;
        per_doc.push(DocResult {
            doc_id: doc_id.clone(),
            writer: writer.clone(),
            predicted,
            true_rank: p
                .ranked_writers
                .iter()
                .position(|w| w == writer)
                .map(|r| r + 1),
        });
    }
    let n = per_doc.len().max(1) as f64;
    let within = |k: usize| {
        100.0
            * per_doc
                .iter()
                .filter(|d| d.true_rank.is_some_and(|r| r <= k))
                .count() as f64
            / n
    };
    Ok(ClassificationReport {
        classifier,
        top1: within(1),
        top5: within(5),
        per_doc,
        confusion: ConfusionMatrix { writers, counts },
        svm_c: None,
        class_weighting: None,
        skipped_training: Vec::new(),
    })
}

/// Trains on `split.train` and predicts `split.test`. `labels[i]` is the
/// writer of `descs[i]`.
pub fn classify_split(
    descs: &[GlobalDescriptor],
    labels: &[String],
    split: &ClassificationSplit,
    classifier: Classifier,
    params: &SvmParams,
) -> Result<ClassificationReport> {
    let lookup: BTreeMap<&str, usize> = descs
        .iter()
        .enumerate()
        .map(|(i, d)| (d.doc_id.as_str(), i))
        .collect();
    let find = |id: &String| {
        lookup
            .get(id.as_str())
            .copied()
            .ok_or_else(|| Error::UnknownDocument(id.clone()))
    };
    let mut train_idx = split.train.iter().map(find).collect::<Result<Vec<_>>>()?;
    // a flagged zero vector carries no writer evidence and, as an SVM
    // positive, can only be fit through the bias
    let skipped: Vec<String> = train_idx
        .iter()
        .filter(|&&i| descs[i].empty)
        .map(|&i| descs[i].doc_id.clone())
        .collect();
    for id in &skipped {
        log::warn!("{id}: no descriptors, left out of training");
    }
    train_idx.retain(|&i| !descs[i].empty);
    let test_idx = split.test.iter().map(find).collect::<Result<Vec<_>>>()?;
    let train: Vec<GlobalDescriptor> = train_idx.iter().map(|&i| descs[i].clone()).collect();
    let train_labels: Vec<String> = train_idx.iter().map(|&i| labels[i].clone()).collect();
    let test: Vec<(String, String)> = test_idx
        .iter()
        .map(|&i| (descs[i].doc_id.clone(), labels[i].clone()))
        .collect();

    let predictions = match classifier {
        Classifier::Nn => test_idx
            .iter()
            .map(|&i| {
                Ok(Prediction {
                    doc_id: descs[i].doc_id.clone(),
                    ranked_writers: nn_rank(&train, &train_labels, &descs[i].vector)?,
                })
            })
            .collect::<Result<Vec<_>>>()?,
        Classifier::Svm => {
            let model = train_svms(&train, &train_labels, params)?;
            test_idx
                .iter()
                .map(|&i| {
                    Ok(Prediction {
                        doc_id: descs[i].doc_id.clone(),
                        ranked_writers: model.rank(&descs[i].vector)?,
                    })
                })
                .collect::<Result<Vec<_>>>()?
        }
    };
    let mut report = evaluate_classification(&test, &predictions, classifier)?;
    report.skipped_training = skipped;
    if classifier == Classifier::Svm {
        report.svm_c = Some(params.c);
        report.class_weighting = Some("n_total / (2 * n_class)".into());
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn g(id: &str, v: &[f64]) -> GlobalDescriptor {
        GlobalDescriptor {
            doc_id: id.into(),
            vector: v.to_vec(),
            empty: false,
        }
    }

    fn s(v: &[&str]) -> Vec<String> {
        v.iter().map(|x| x.to_string()).collect()
    }

    #[test]
    fn nn_examples() {
        let train = vec![
            g("a_1", &[1.0, 0.0, 0.0]),
            g("b_1", &[0.0, 1.0, 0.0]),
            g("c_1", &[0.0, 0.0, 1.0]),
        ];
        let labels = s(&["a", "b", "c"]);
        assert_eq!(nn_classify(&train, &labels, &[0.0, 1.0, 0.0]).unwrap(), "b");
        assert_eq!(nn_classify(&train, &labels, &[0.0, 0.0, 3.0]).unwrap(), "c");
        // equidistant from a and b: doc_id order decides
        assert_eq!(
            nn_rank(&train, &labels, &[1.0, 1.0, 0.0]).unwrap(),
            s(&["a", "b", "c"])
        );
        assert!(matches!(
            nn_classify(&[], &[], &[1.0]),
            Err(Error::EmptyTrainSet)
        ));
    }

    #[test]
    fn nn_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let train: Vec<GlobalDescriptor> = (0..3)
                .map(|i| {
                    g(
                        &format!("d{i}"),
                        &(0..3)
                            .map(|_| rng.random_range(-1.0..1.0))
                            .collect::<Vec<_>>(),
                    )
                })
                .collect();
            let labels = s(&["x", "y", "z"]);
            let q: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
            let mut best = (f64::INFINITY, 0);
            for (i, t) in train.iter().enumerate() {
                let dot: f64 = t.vector.iter().zip(&q).map(|(a, b)| a * b).sum();
                let na: f64 = t.vector.iter().map(|a| a * a).sum::<f64>().sqrt();
                let nb: f64 = q.iter().map(|a| a * a).sum::<f64>().sqrt();
                let d = 1.0 - dot / (na * nb);
                if d < best.0 {
                    best = (d, i);
                }
            }
            assert_eq!(nn_classify(&train, &labels, &q).unwrap(), labels[best.1]);
        }
    }

    #[test]
    fn class_weights_for_ten_writers() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut train = Vec::new();
        let mut labels = Vec::new();
        for w in 0..10 {
            for i in 0..2 {
                train.push(g(
                    &format!("w{w}_{i}"),
                    &(0..8)
                        .map(|_| rng.random_range(-1.0..1.0))
                        .collect::<Vec<_>>(),
                ));
                labels.push(format!("w{w}"));
            }
        }
        let m = train_svms(&train, &labels, &SvmParams::default()).unwrap();
        for &(p, n) in &m.class_weights {
            assert_eq!(p, 5.0);
            assert!((n - 20.0 / 36.0).abs() < 1e-15);
        }
    }

    #[test]
    fn separable_toy_is_fit_exactly() {
        let train = vec![
            g("a_1", &[1.0, 0.2]),
            g("a_2", &[0.9, -0.1]),
            g("b_1", &[-1.0, 0.1]),
            g("b_2", &[-0.8, -0.3]),
        ];
        let labels = s(&["a", "a", "b", "b"]);
        let m = train_svms(&train, &labels, &SvmParams::default()).unwrap();
        for (t, l) in train.iter().zip(&labels) {
            assert_eq!(&svm_classify(&m, &t.vector).unwrap(), l);
        }
        assert!(matches!(
            train_svms(&train[..2], &labels[..2], &SvmParams::default()),
            Err(Error::SingleClass)
        ));
    }

    #[test]
    fn duplicated_negatives_match_halved_weight() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let xs: Vec<Vec<f64>> = (0..12)
            .map(|i| {
                let shift = if i < 3 { 0.8 } else { -0.2 };
                (0..5)
                    .map(|_| rng.random_range(-1.0..1.0) + shift)
                    .collect()
            })
            .collect();
        let ys: Vec<f64> = (0..12).map(|i| if i < 3 { 1.0 } else { -1.0 }).collect();
        let (wp, wn) = (2.0, 0.7);
        let params = SvmParams::default();
        let refs: Vec<&[f64]> = xs.iter().map(|x| x.as_slice()).collect();
        let costs: Vec<f64> = ys.iter().map(|&y| if y > 0.0 { wp } else { wn }).collect();
        let (w1, b1, _) = train_binary_svm(&refs, &ys, &costs, &params);

        let mut refs2 = refs.clone();
        let mut ys2 = ys.clone();
        let mut costs2: Vec<f64> = ys
            .iter()
            .map(|&y| if y > 0.0 { wp } else { wn / 2.0 })
            .collect();
        for i in 3..12 {
            refs2.push(refs[i]);
            ys2.push(-1.0);
            costs2.push(wn / 2.0);
        }
        let (w2, b2, _) = train_binary_svm(&refs2, &ys2, &costs2, &params);
        for x in &xs {
            let f1 = dot(&w1, x) + b1;
            let f2 = dot(&w2, x) + b2;
            assert!((f1 - f2).abs() <= 1e-5, "{f1} vs {f2}");
        }
    }

    #[test]
    fn hand_set_model() {
        let m = SvmModel {
            c: 1.0,
            writers: s(&["a", "b", "c"]),
            weights: vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![-1.0, -1.0]],
            biases: vec![0.0, 0.5, 0.0],
            class_weights: vec![(1.0, 1.0); 3],
        };
        // a: 0.3, b: 0.9, c: -0.7
        assert_eq!(m.rank(&[0.3, 0.4]).unwrap(), s(&["b", "a", "c"]));
        let flat = SvmModel {
            weights: vec![vec![0.0, 0.0]; 3],
            biases: vec![0.0; 3],
            ..m.clone()
        };
        assert_eq!(svm_classify(&flat, &[1.0, 1.0]).unwrap(), "a");
        let empty = SvmModel {
            writers: vec![],
            weights: vec![],
            biases: vec![],
            ..m
        };
        assert!(matches!(
            svm_classify(&empty, &[1.0, 1.0]),
            Err(Error::NotTrained)
        ));
    }

    #[test]
    fn evaluation_and_confusion() {
        let test: Vec<(String, String)> = vec![
            ("Menas_1".into(), "Menas".into()),
            ("Menas_2".into(), "Menas".into()),
            ("Menas_3".into(), "Menas".into()),
            ("Kyros_1".into(), "Kyros".into()),
        ];
        let preds: Vec<Prediction> = test
            .iter()
            .map(|(id, w)| Prediction {
                doc_id: id.clone(),
                ranked_writers: vec![w.clone(), "Other".into()],
            })
            .collect();
        let r = evaluate_classification(&test, &preds, Classifier::Nn).unwrap();
        assert_eq!(r.top1, 100.0);
        let menas = r
            .confusion
            .writers
            .iter()
            .position(|w| w == "Menas")
            .unwrap();
        let mut expect = vec![0; r.confusion.writers.len()];
        expect[menas] = 3;
        assert_eq!(r.confusion.counts[menas], expect);
        let total: u64 = r.confusion.counts.iter().flatten().sum();
        assert_eq!(total, 4);

        let err = evaluate_classification(&test, &preds[..3], Classifier::Nn);
        assert!(matches!(err, Err(Error::MissingPrediction(id)) if id == "Kyros_1"));

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("conf.csv");
        r.confusion.write_csv(&path).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert_eq!(text, ",Kyros,Menas\nKyros,1,0\nMenas,0,3\n");
    }

    #[test]
    fn empty_training_documents_are_skipped() {
        let mut descs = Vec::new();
        let mut labels = Vec::new();
        for (w, name) in ["A", "B", "C"].iter().enumerate() {
            for d in 1..=3 {
                let mut v = vec![0.05 * d as f64; 3];
                v[w] = 1.0;
                descs.push(g(&format!("{name}_{d}"), &v));
                labels.push(name.to_string());
            }
        }
        descs[0] = GlobalDescriptor {
            vector: vec![0.0; 3],
            empty: true,
            ..descs[0].clone()
        };
        let split = ClassificationSplit {
            train: s(&["A_1", "A_2", "B_1", "B_2", "C_1", "C_2"]),
            test: s(&["A_3", "B_3", "C_3"]),
            seed: 0,
            mode: crate::corpus::SplitMode::FirstTwo,
        };
        for c in [Classifier::Nn, Classifier::Svm] {
            let r = classify_split(&descs, &labels, &split, c, &SvmParams::default()).unwrap();
            assert_eq!(r.skipped_training, s(&["A_1"]));
            assert_eq!(r.top1, 100.0, "{c:?}");
        }
    }
}
