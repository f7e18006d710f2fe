//! Small shared vector helpers.

use ndarray::ArrayView1;

pub(crate) fn norm(v: ArrayView1<'_, f64>) -> f64 {
    v.dot(&v).sqrt()
}

/// Cosine similarity; `None` when either vector has zero norm.
pub(crate) fn cosine(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> Option<f64> {
    let na = norm(a);
    let nb = norm(b);
    if na == 0.0 || nb == 0.0 {
        return None;
    }
    Some(a.dot(&b) / (na * nb))
}

/// Cosine with zero-norm inputs mapped to 0 similarity.
pub(crate) fn cosine_or_zero(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> f64 {
    cosine(a, b).unwrap_or(0.0)
}
