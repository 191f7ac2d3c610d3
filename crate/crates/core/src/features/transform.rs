use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::model_io::{self, ByteReader};
use crate::numerics::{fit_pca, l2_normalize, PcaModel};

pub const DEFAULT_OUT_DIM: usize = 64;
pub const DEFAULT_POWER: f64 = 0.5;
pub const L1_EPS: f64 = 1e-10;

/// Local descriptor post-processing: l1 normalization, signed power,
/// whitening PCA, l2 normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct DescriptorTransform {
    pub pca: PcaModel,
    pub hellinger_power: f64,
    pub eps: f64,
}

/// l1-normalizes and applies the element-wise signed power.
pub fn power_normalize(d: &[f64], power: f64, eps: f64) -> Vec<f64> {
    let l1: f64 = d.iter().map(|v| v.abs()).sum::<f64>().max(eps);
    d.iter()
        .map(|v| {
            let x = v / l1;
            x.signum() * x.abs().powf(power)
        })
        .collect()
}

impl DescriptorTransform {
    /// Fits the whitening PCA on power-normalized samples; needs at least
    /// `10 * out_dim` of them.
    pub fn fit(samples: &[Vec<f64>], out_dim: usize, power: f64) -> Result<Self> {
        if samples.len() < 10 * out_dim {
            return Err(Error::InsufficientSample {
                required: 10 * out_dim,
                actual: samples.len(),
            });
        }
        if !(power > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "power must be > 0, got {power}"
            )));
        }
        let prepared: Vec<Vec<f64>> = samples
            .iter()
            .map(|d| power_normalize(d, power, L1_EPS))
            .collect();
        Ok(DescriptorTransform {
            pca: fit_pca(&prepared, out_dim, true)?,
            hellinger_power: power,
            eps: L1_EPS,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.pca.input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.pca.output_dim()
    }

    /// Whitened projection before the final l2 step.
    pub fn project(&self, d: &[f64]) -> Result<Vec<f64>> {
        self.pca
            .transform(&power_normalize(d, self.hellinger_power, self.eps))
    }

    pub fn apply(&self, d: &[f64]) -> Result<Vec<f64>> {
        let mut out = self.project(d)?;
        l2_normalize(&mut out);
        Ok(out)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = model_io::descriptor_header();
        w.f64(self.hellinger_power);
        w.f64(self.eps);
        model_io::write_pca_body(&mut w, &self.pca);
        model_io::write_file(path, &w.buf)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = model_io::read_file(path)?;
        let mut r: ByteReader<'_> = model_io::read_descriptor_header(&bytes, path)?;
        let hellinger_power = r.f64()?;
        let eps = r.f64()?;
        let pca = model_io::read_pca_body(&mut r)?;
        r.finish()?;
        Ok(DescriptorTransform {
            pca,
            hellinger_power,
            eps,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn random_descriptors(n: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                (0..128)
                    .map(|_| {
                        let u: f64 = rng.random();
                        u * u
                    })
                    .collect()
            })
            .collect()
    }

    #[test]
    fn power_step() {
        let mut d = vec![0.0; 128];
        d[0] = 0.64;
        d[1] = 0.36;
        let p = power_normalize(&d, 0.5, L1_EPS);
        assert!((p[0] - 0.8).abs() < 1e-15);
        assert!((p[1] - 0.6).abs() < 1e-15);
        assert!(p[2..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn too_few_samples() {
        let s = random_descriptors(100, 1);
        assert!(matches!(
            DescriptorTransform::fit(&s, 64, 0.5),
            Err(Error::InsufficientSample {
                required: 640,
                actual: 100
            })
        ));
    }

    #[test]
    fn unit_output_and_scale_invariance() {
        let s = random_descriptors(1000, 2);
        let t = DescriptorTransform::fit(&s, 64, 0.5).unwrap();
        assert_eq!(t.output_dim(), 64);
        for d in s.iter().take(20) {
            let a = t.apply(d).unwrap();
            let n: f64 = a.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((n - 1.0).abs() < 1e-9);
            let doubled: Vec<f64> = d.iter().map(|v| 2.0 * v).collect();
            assert_eq!(t.apply(&doubled).unwrap(), a);
            let scaled: Vec<f64> = d.iter().map(|v| 0.37 * v).collect();
            let b = t.apply(&scaled).unwrap();
            for (x, y) in a.iter().zip(&b) {
                assert!((x - y).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn refit_is_identical_and_round_trips() {
        let s = random_descriptors(700, 3);
        let a = DescriptorTransform::fit(&s, 64, 0.5).unwrap();
        let b = DescriptorTransform::fit(&s, 64, 0.5).unwrap();
        assert_eq!(a, b);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.pwmd");
        a.save(&path).unwrap();
        assert_eq!(DescriptorTransform::load(&path).unwrap(), a);
    }
}
