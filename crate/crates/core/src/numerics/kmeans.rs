use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::sq_dist;
use crate::error::{Error, Result};

/// k-means centers (k x d).
#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    pub centers: Vec<Vec<f64>>,
    pub seed: u64,
    /// Sum of squared distances to the assigned centers at convergence.
    pub inertia: f64,
}

impl Codebook {
    pub fn k(&self) -> usize {
        self.centers.len()
    }

    pub fn dim(&self) -> usize {
        self.centers.first().map_or(0, Vec::len)
    }

    /// Index of the nearest center and its squared distance; ties go to the
    /// smallest index.
    pub fn nearest(&self, x: &[f64]) -> (usize, f64) {
        let mut best = (0, f64::INFINITY);
        for (j, c) in self.centers.iter().enumerate() {
            let d = sq_dist(x, c);
            if d < best.1 {
                best = (j, d);
            }
        }
        best
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KmeansParams {
    pub k: usize,
    pub seed: u64,
    pub max_iters: usize,
    /// Stop once the relative inertia decrease falls below this.
    pub tol: f64,
}

impl KmeansParams {
    pub fn new(k: usize, seed: u64) -> Self {
        KmeansParams {
            k,
            seed,
            max_iters: 100,
            tol: 1e-4,
        }
    }
}

#[derive(Debug, Clone)]
pub struct KmeansRun {
    pub codebook: Codebook,
    /// Inertia after every assignment step.
    pub history: Vec<f64>,
}

pub fn kmeans(data: &[Vec<f64>], params: &KmeansParams) -> Result<Codebook> {
    Ok(kmeans_run(data, params)?.codebook)
}

fn assign(data: &[Vec<f64>], centers: &[Vec<f64>]) -> Vec<(usize, f64)> {
    let cb = Codebook {
        centers: centers.to_vec(),
        seed: 0,
        inertia: 0.0,
    };
    data.par_iter().map(|x| cb.nearest(x)).collect()
}

fn plus_plus_init(data: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = data.len();
    let mut centers = vec![data[rng.random_range(0..n)].clone()];
    let mut d2: Vec<f64> = data.par_iter().map(|x| sq_dist(x, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut idx = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                acc += d;
                if acc > target && d > 0.0 {
                    idx = i;
                    break;
                }
            }
            idx
        } else {
            rng.random_range(0..n)
        };
        let c = data[pick].clone();
        d2.par_iter_mut()
            .zip(data.par_iter())
            .for_each(|(d, x)| *d = d.min(sq_dist(x, &c)));
        centers.push(c);
    }
    centers
}

/// k-means++ seeding followed by Lloyd iterations. Empty clusters are moved
/// to the point currently farthest from its center.
pub fn kmeans_run(data: &[Vec<f64>], params: &KmeansParams) -> Result<KmeansRun> {
    let k = params.k;
    if k == 0 {
        return Err(Error::InvalidArgument("k must be >= 1".into()));
    }
    if data.len() < k {
        return Err(Error::TooFewPoints { n: data.len(), k });
    }
    let dim = data[0].len();
    if let Some(bad) = data.iter().find(|x| x.len() != dim) {
        return Err(Error::DimMismatch(dim, bad.len()));
    }
    if data.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteInput);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut centers = plus_plus_init(data, k, &mut rng);
    let mut assignment = assign(data, &centers);
    let mut inertia: f64 = assignment.iter().map(|a| a.1).sum();
    let mut history = vec![inertia];

    for _ in 0..params.max_iters {
        let mut sums = vec![vec![0.0f64; dim]; k];
        let mut counts = vec![0usize; k];
        for (x, &(j, _)) in data.iter().zip(&assignment) {
            counts[j] += 1;
            for (s, v) in sums[j].iter_mut().zip(x) {
                *s += v;
            }
        }
        let mut dists: Vec<f64> = assignment.iter().map(|a| a.1).collect();
        for j in 0..k {
            if counts[j] > 0 {
                let inv = 1.0 / counts[j] as f64;
                centers[j] = sums[j].iter().map(|s| s * inv).collect();
            } else {
                let mut far = 0;
                for (i, &d) in dists.iter().enumerate() {
                    if d > dists[far] {
                        far = i;
                    }
                }
                centers[j] = data[far].clone();
                dists[far] = 0.0;
            }
        }
        assignment = assign(data, &centers);
        let next: f64 = assignment.iter().map(|a| a.1).sum();
        history.push(next);
        let converged = inertia <= 0.0 || (inertia - next) / inertia < params.tol;
        inertia = next;
        if converged {
            break;
        }
    }

    Ok(KmeansRun {
        codebook: Codebook {
            centers,
            seed: params.seed,
            inertia,
        },
        history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, Normal};

    fn blobs(seed: u64) -> (Vec<Vec<f64>>, [Vec<f64>; 2]) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, 0.5).unwrap();
        let mut data = Vec::new();
        for c in [[0.0, 0.0], [10.0, 5.0]] {
            for _ in 0..200 {
                data.push(vec![
                    c[0] + noise.sample(&mut rng),
                    c[1] + noise.sample(&mut rng),
                ]);
            }
        }
        let mean = |r: std::ops::Range<usize>| -> Vec<f64> {
            let n = r.len() as f64;
            let mut m = vec![0.0; 2];
            for x in &data[r] {
                m[0] += x[0] / n;
                m[1] += x[1] / n;
            }
            m
        };
        let means = [mean(0..200), mean(200..400)];
        (data, means)
    }

    #[test]
    fn single_center_is_the_mean() {
        let (data, _) = blobs(1);
        let cb = kmeans(&data, &KmeansParams::new(1, 3)).unwrap();
        let n = data.len() as f64;
        for d in 0..2 {
            let m: f64 = data.iter().map(|x| x[d]).sum::<f64>() / n;
            assert!((cb.centers[0][d] - m).abs() < 1e-9);
        }
    }

    #[test]
    fn k_equals_n_recovers_points() {
        let data: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64, (i * i) as f64]).collect();
        let cb = kmeans(&data, &KmeansParams::new(6, 42)).unwrap();
        assert_eq!(cb.inertia, 0.0);
        let mut centers = cb.centers.clone();
        centers.sort_by(|a, b| a[0].total_cmp(&b[0]));
        assert_eq!(centers, data);
    }

    #[test]
    fn separated_blobs() {
        let (data, means) = blobs(7);
        let cb = kmeans(&data, &KmeansParams::new(2, 0)).unwrap();
        for m in &means {
            let (j, _) = cb.nearest(m);
            assert!(sq_dist(&cb.centers[j], m).sqrt() < 0.1);
        }
    }

    #[test]
    fn inertia_non_increasing() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let data: Vec<Vec<f64>> = (0..500)
            .map(|_| (0..4).map(|_| rng.random::<f64>()).collect())
            .collect();
        let run = kmeans_run(&data, &KmeansParams::new(12, 9)).unwrap();
        for w in run.history.windows(2) {
            assert!(w[1] <= w[0] + 1e-9, "{:?}", run.history);
        }
    }

    #[test]
    fn deterministic_for_seed() {
        let (data, _) = blobs(3);
        let a = kmeans(&data, &KmeansParams::new(5, 11)).unwrap();
        let b = kmeans(&data, &KmeansParams::new(5, 11)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn too_few_points() {
        let data = vec![vec![0.0], vec![1.0]];
        assert!(matches!(
            kmeans(&data, &KmeansParams::new(3, 0)),
            Err(Error::TooFewPoints { n: 2, k: 3 })
        ));
    }

    #[test]
    fn ties_go_to_first_center() {
        let cb = Codebook {
            centers: vec![vec![0.0], vec![2.0]],
            seed: 0,
            inertia: 0.0,
        };
        assert_eq!(cb.nearest(&[1.0]).0, 0);
    }
}
