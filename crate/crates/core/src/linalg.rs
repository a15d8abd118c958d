//! Small dense 2×2 helpers shared by the geometry, direction and metrics code.

use nalgebra::{Matrix2, Vector2};

/// Eigenvalues `(λ_max, λ_min)` of `AᵀA`, i.e. the squared singular values of `a`.
///
/// The smaller one is recovered from `det(AᵀA) = det(A)²` to avoid cancellation
/// for nearly singular matrices.
pub fn gram_eigenvalues(a: &Matrix2<f64>) -> (f64, f64) {
    let m = a.transpose() * a;
    let mean = 0.5 * (m[(0, 0)] + m[(1, 1)]);
    let half_diff = 0.5 * (m[(0, 0)] - m[(1, 1)]);
    let radius = (half_diff * half_diff + m[(0, 1)] * m[(0, 1)]).sqrt();
    let big = mean + radius;
    if big <= 0.0 {
        return (0.0, 0.0);
    }
    let det = a.determinant();
    let small = (det * det / big).min(big);
    (big, small)
}

/// Largest singular value of a 2×2 matrix.
pub fn spectral_norm(a: &Matrix2<f64>) -> f64 {
    gram_eigenvalues(a).0.sqrt()
}

/// Frobenius inner product `A : B`.
#[inline]
pub fn frobenius_dot(a: &Matrix2<f64>, b: &Matrix2<f64>) -> f64 {
    a.component_mul(b).sum()
}

/// 2D cross product (signed parallelogram area).
#[inline]
pub fn cross(a: &Vector2<f64>, b: &Vector2<f64>) -> f64 {
    a.x * b.y - a.y * b.x
}
