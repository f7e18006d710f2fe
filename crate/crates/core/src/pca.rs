//! Principal component analysis for document/class vector reduction.
//!
//! Fit on document vectors only; class vectors are transformed with the same
//! model and never influence the subspace. The eigendecomposition of the
//! sample covariance uses a cyclic Jacobi solver, which converges to machine
//! precision for symmetric matrices of the sizes used here.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::error::{Error, Result};

/// Fitted PCA model.
#[derive(Debug, Clone)]
pub struct PcaModel {
    /// Per-feature mean of the fitted data.
    pub mean: Array1<f64>,
    /// `p x h`; rows are orthonormal principal directions, descending variance.
    pub components: Array2<f64>,
    /// Sample variance along each component, descending.
    pub explained_variance: Vec<f64>,
}

/// Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.
/// Returns (eigenvalues, eigenvectors as columns), unsorted.
fn jacobi_eigen(mut a: Array2<f64>) -> (Vec<f64>, Array2<f64>) {
    let n = a.nrows();
    let mut v = Array2::<f64>::eye(n);
    let scale: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-300);

    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|p| ((p + 1)..n).map(move |q| (p, q)))
            .map(|(p, q)| a[(p, q)] * a[(p, q)])
            .sum::<f64>()
            .sqrt();
        if off < 1e-15 * scale {
            break;
        }
        for p in 0..n - 1 {
            for q in p + 1..n {
                let apq = a[(p, q)];
                if apq.abs() < 1e-300 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;

                for i in 0..n {
                    let aip = a[(i, p)];
                    let aiq = a[(i, q)];
                    a[(i, p)] = c * aip - s * aiq;
                    a[(i, q)] = s * aip + c * aiq;
                }
                for i in 0..n {
                    let api = a[(p, i)];
                    let aqi = a[(q, i)];
                    a[(p, i)] = c * api - s * aqi;
                    a[(q, i)] = s * api + c * aqi;
                }
                for i in 0..n {
                    let vip = v[(i, p)];
                    let viq = v[(i, q)];
                    v[(i, p)] = c * vip - s * viq;
                    v[(i, q)] = s * vip + c * viq;
                }
            }
        }
    }
    let eigenvalues = (0..n).map(|i| a[(i, i)]).collect();
    (eigenvalues, v)
}

/// Fit a `p`-dimensional PCA on `data` (`N x h`, N > p).
///
/// Errors when the centered data has rank below `p` (suggesting a smaller
/// `p`). Component signs are fixed so the largest-magnitude entry of each
/// row is positive.
pub fn fit_pca(data: ArrayView2<'_, f64>, p: usize) -> Result<PcaModel> {
    let n = data.nrows();
    let h = data.ncols();
    if p < 1 {
        return Err(Error::Invalid("pca: p must be >= 1".into()));
    }
    if p > h {
        return Err(Error::Invalid(format!("pca: p ({p}) exceeds dimensionality ({h})")));
    }
    if n <= p {
        return Err(Error::Invalid(format!(
            "pca: need more samples ({n}) than components ({p})"
        )));
    }

    let mean = data.mean_axis(Axis(0)).expect("non-empty data");
    let centered = &data - &mean;
    let cov = centered.t().dot(&centered) / (n as f64 - 1.0);

    let (eigenvalues, eigenvectors) = jacobi_eigen(cov);
    let mut order: Vec<usize> = (0..h).collect();
    order.sort_by(|&i, &j| {
        eigenvalues[j]
            .partial_cmp(&eigenvalues[i])
            .expect("finite eigenvalues")
    });

    let lambda_max = eigenvalues[order[0]].max(0.0);
    let rank_tol = lambda_max * 1e-12;
    let mut components = Array2::<f64>::zeros((p, h));
    let mut explained_variance = Vec::with_capacity(p);
    for (row, &idx) in order.iter().take(p).enumerate() {
        let lambda = eigenvalues[idx];
        if lambda <= rank_tol {
            return Err(Error::Numeric(format!(
                "pca: data rank is below {p} (component {row} has variance {lambda:.3e}); \
                 use a smaller p"
            )));
        }
        explained_variance.push(lambda);
        let col = eigenvectors.column(idx);
        // deterministic sign: largest-magnitude entry positive
        let mut pivot = 0;
        for d in 0..h {
            if col[d].abs() > col[pivot].abs() {
                pivot = d;
            }
        }
        let sign = if col[pivot] < 0.0 { -1.0 } else { 1.0 };
        for d in 0..h {
            components[(row, d)] = sign * col[d];
        }
    }

    Ok(PcaModel {
        mean,
        components,
        explained_variance,
    })
}

/// Project rows of `vectors` into the fitted subspace.
pub fn transform(model: &PcaModel, vectors: ArrayView2<'_, f64>) -> Array2<f64> {
    let centered = &vectors - &model.mean;
    centered.dot(&model.components.t())
}

/// Project a single vector.
pub fn transform_one(model: &PcaModel, vector: ArrayView1<'_, f64>) -> Array1<f64> {
    let centered = &vector - &model.mean;
    model.components.dot(&centered)
}

/// Map reduced coordinates back to the original space (for tests).
pub fn reconstruct(model: &PcaModel, reduced: ArrayView2<'_, f64>) -> Array2<f64> {
    reduced.dot(&model.components) + &model.mean
}
