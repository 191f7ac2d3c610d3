//! Unsupervised numerical kernels shared by the descriptor and encoding stages.

mod gmp;
mod kmeans;
pub mod model_io;
mod pca;

pub use gmp::{gmp_solve, gmp_solve_dual, gmp_solve_primal, CG_MAX_ITERS, CG_TOL, DUAL_LIMIT};
pub use kmeans::{kmeans, kmeans_run, Codebook, KmeansParams, KmeansRun};
pub use pca::{fit_pca, PcaModel, PCA_EPS};

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub(crate) fn l2_norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Scales `v` to unit length; the zero vector is left unchanged.
pub fn l2_normalize(v: &mut [f64]) {
    let n = l2_norm(v);
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
}
