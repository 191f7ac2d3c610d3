use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

pub const PCA_EPS: f64 = 1e-8;

/// Principal component projection, optionally whitened.
#[derive(Debug, Clone, PartialEq)]
pub struct PcaModel {
    pub mean: Vec<f64>,
    /// d x m, orthonormal columns sorted by decreasing eigenvalue.
    pub basis: DMatrix<f64>,
    pub eigenvalues: Vec<f64>,
    pub whiten: bool,
    pub eps: f64,
}

impl PcaModel {
    pub fn input_dim(&self) -> usize {
        self.mean.len()
    }

    pub fn output_dim(&self) -> usize {
        self.eigenvalues.len()
    }

    /// Projects `x`; whitened models scale component i by `1/sqrt(lambda_i + eps)`.
    pub fn transform(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_dim() {
            return Err(Error::DimMismatch(self.input_dim(), x.len()));
        }
        let centered: Vec<f64> = x.iter().zip(&self.mean).map(|(a, m)| a - m).collect();
        let out = (0..self.output_dim())
            .map(|i| {
                let col = self.basis.column(i);
                let p: f64 = col.iter().zip(&centered).map(|(b, c)| b * c).sum();
                if self.whiten {
                    p / (self.eigenvalues[i] + self.eps).sqrt()
                } else {
                    p
                }
            })
            .collect();
        Ok(out)
    }
}

/// Fits PCA through the covariance matrix when `d <= n`, otherwise through
/// the n x n Gram matrix of the centered samples. Eigenvector signs are fixed
/// so that each column's largest-magnitude entry is positive. Components whose
/// eigenvalue does not exceed `eps` are dropped.
pub fn fit_pca(data: &[Vec<f64>], m: usize, whiten: bool) -> Result<PcaModel> {
    let n = data.len();
    if n < 2 {
        return Err(Error::InsufficientSample {
            required: 2,
            actual: n,
        });
    }
    let d = data[0].len();
    if let Some(bad) = data.iter().find(|x| x.len() != d) {
        return Err(Error::DimMismatch(d, bad.len()));
    }
    if m == 0 || m > d.min(n - 1) {
        return Err(Error::InvalidArgument(format!(
            "PCA dimension {m} must be in 1..={}",
            d.min(n - 1)
        )));
    }
    if data.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteInput);
    }

    let mut mean = vec![0.0; d];
    for x in data {
        for (m, v) in mean.iter_mut().zip(x) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let centered = DMatrix::from_fn(n, d, |i, j| data[i][j] - mean[j]);
    let denom = (n - 1) as f64;

    let (values, vectors) = if d <= n {
        let cov = (centered.transpose() * &centered) / denom;
        let eig = SymmetricEigen::new(cov);
        (eig.eigenvalues, eig.eigenvectors)
    } else {
        let gram = (&centered * centered.transpose()) / denom;
        let eig = SymmetricEigen::new(gram);
        // v = X^T u / sqrt((n - 1) lambda), left as raw X^T u here and
        // rescaled to unit length below
        let lifted = centered.transpose() * &eig.eigenvectors;
        (eig.eigenvalues, lifted)
    };

    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    let keep: Vec<usize> = order
        .into_iter()
        .filter(|&i| values[i] > PCA_EPS)
        .take(m)
        .collect();
    if keep.is_empty() {
        return Err(Error::RankDeficient { eps: PCA_EPS });
    }
    if keep.len() < m {
        log::warn!(
            "PCA: only {} of {} requested components have nonzero variance",
            keep.len(),
            m
        );
    }

    let mut basis = DMatrix::zeros(d, keep.len());
    for (c, &i) in keep.iter().enumerate() {
        let mut col = vectors.column(i).into_owned();
        let norm = col.norm();
        col /= norm;
        let mut pivot = 0;
        for r in 0..d {
            if col[r].abs() > col[pivot].abs() {
                pivot = r;
            }
        }
        if col[pivot] < 0.0 {
            col.neg_mut();
        }
        basis.set_column(c, &col);
    }
    Ok(PcaModel {
        mean,
        basis,
        eigenvalues: keep.iter().map(|&i| values[i]).collect(),
        whiten,
        eps: PCA_EPS,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn covariance(rows: &[Vec<f64>]) -> DMatrix<f64> {
        let n = rows.len();
        let d = rows[0].len();
        let mut mean = vec![0.0; d];
        for r in rows {
            for j in 0..d {
                mean[j] += r[j] / n as f64;
            }
        }
        DMatrix::from_fn(d, d, |a, b| {
            rows.iter()
                .map(|r| (r[a] - mean[a]) * (r[b] - mean[b]))
                .sum::<f64>()
                / (n - 1) as f64
        })
    }

    #[test]
    fn whitens_anisotropic_gaussian() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let sx = Normal::new(0.0, 2.0).unwrap();
        let sy = Normal::new(0.0, 1.0).unwrap();
        let data: Vec<Vec<f64>> = (0..10_000)
            .map(|_| vec![sx.sample(&mut rng) + 3.0, sy.sample(&mut rng) - 1.0])
            .collect();
        let model = fit_pca(&data, 2, true).unwrap();
        assert!((model.eigenvalues[0] - 4.0).abs() < 0.2);
        assert!((model.eigenvalues[1] - 1.0).abs() < 0.05);
        let out: Vec<Vec<f64>> = data.iter().map(|x| model.transform(x).unwrap()).collect();
        let cov = covariance(&out);
        for i in 0..2 {
            assert!((cov[(i, i)] - 1.0).abs() < 0.05);
        }
    }

    #[test]
    fn isotropic_data_gives_orthonormal_basis() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let g = Normal::new(0.0, 1.0).unwrap();
        let data: Vec<Vec<f64>> = (0..5000)
            .map(|_| (0..4).map(|_| g.sample(&mut rng)).collect())
            .collect();
        let model = fit_pca(&data, 4, false).unwrap();
        let gram = model.basis.transpose() * &model.basis;
        assert!((gram - DMatrix::identity(4, 4)).abs().max() < 1e-8);
        for l in &model.eigenvalues {
            assert!((l - 1.0).abs() < 0.1);
        }
    }

    #[test]
    fn gram_path_matches_covariance_path() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g = Normal::new(0.0, 1.0).unwrap();
        // 8 samples in 20 dims takes the Gram route
        let data: Vec<Vec<f64>> = (0..8)
            .map(|_| (0..20).map(|_| g.sample(&mut rng)).collect())
            .collect();
        let model = fit_pca(&data, 7, true).unwrap();
        let gram = model.basis.transpose() * &model.basis;
        assert!((gram - DMatrix::identity(7, 7)).abs().max() < 1e-8);
        let cov = covariance(&data);
        for (i, l) in model.eigenvalues.iter().enumerate() {
            let v = model.basis.column(i).into_owned();
            let cv = &cov * &v;
            assert!((cv - &v * *l).abs().max() < 1e-8);
        }
        let out: Vec<Vec<f64>> = data.iter().map(|x| model.transform(x).unwrap()).collect();
        let c = covariance(&out);
        assert!((c - DMatrix::identity(7, 7)).abs().max() < 1e-6);
    }

    #[test]
    fn sign_convention() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let g = Normal::new(0.0, 1.0).unwrap();
        let data: Vec<Vec<f64>> = (0..300)
            .map(|_| (0..5).map(|_| g.sample(&mut rng)).collect())
            .collect();
        let model = fit_pca(&data, 5, true).unwrap();
        for c in 0..5 {
            let col = model.basis.column(c);
            let pivot = col
                .iter()
                .cloned()
                .fold(0.0f64, |a, b| if b.abs() > a.abs() { b } else { a });
            assert!(pivot > 0.0);
        }
        assert_eq!(model, fit_pca(&data, 5, true).unwrap());
    }

    #[test]
    fn dimension_bound() {
        let data = vec![
            vec![0.0, 1.0, 2.0],
            vec![1.0, 0.0, 2.0],
            vec![3.0, 1.0, 0.0],
        ];
        assert!(fit_pca(&data, 2, true).is_ok());
        assert!(matches!(
            fit_pca(&data, 3, true),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn constant_data_is_rank_deficient() {
        let data = vec![vec![1.0, 1.0]; 10];
        assert!(matches!(
            fit_pca(&data, 1, true),
            Err(Error::RankDeficient { .. })
        ));
    }
}
