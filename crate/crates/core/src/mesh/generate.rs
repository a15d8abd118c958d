//! Structured generators for the experiment meshes.

use std::f64::consts::PI;

use super::{MeshError, Point, ReferenceMesh};
use crate::HOLD_ALL_HALF_WIDTH;

/// Criss-cross grid of `D` with `n` squares per side, each split into four
/// triangles at its center. The reference domain is `(-1, 1)²`.
pub fn generate_square_in_square(n: usize) -> Result<ReferenceMesh, MeshError> {
    if n < 4 || n % 4 != 0 {
        return Err(MeshError::Alignment { n });
    }
    let w = HOLD_ALL_HALF_WIDTH;
    let coord = |i: usize| -w + 2.0 * w * i as f64 / n as f64;
    let center = |i: usize| -w + 2.0 * w * (i as f64 + 0.5) / n as f64;
    let mut vertices = Vec::with_capacity((n + 1) * (n + 1) + n * n);
    for j in 0..=n {
        for i in 0..=n {
            vertices.push(Point::new(coord(i), coord(j)));
        }
    }
    for j in 0..n {
        for i in 0..n {
            vertices.push(Point::new(center(i), center(j)));
        }
    }
    let grid = |i: usize, j: usize| j * (n + 1) + i;
    let mut triangles = Vec::with_capacity(4 * n * n);
    let mut omega = Vec::with_capacity(4 * n * n);
    for j in 0..n {
        for i in 0..n {
            let c = (n + 1) * (n + 1) + j * n + i;
            let (bl, br, tr, tl) = (grid(i, j), grid(i + 1, j), grid(i + 1, j + 1), grid(i, j + 1));
            let inside = center(i).abs() < 1.0 && center(j).abs() < 1.0;
            for tri in [[bl, br, c], [br, tr, c], [tr, tl, c], [tl, bl, c]] {
                triangles.push(tri);
                omega.push(inside);
            }
        }
    }
    ReferenceMesh::new(vertices, triangles, omega)
}

fn square_point(theta: f64) -> Point {
    let w = HOLD_ALL_HALF_WIDTH;
    let (s, c) = theta.sin_cos();
    let m = c.abs().max(s.abs());
    let snap = |v: f64| {
        let v = w * v / m;
        if (v.abs() - w).abs() < 1e-12 {
            w.copysign(v)
        } else {
            v
        }
    };
    Point::new(snap(c), snap(s))
}

/// Annulus between regular `n_angular`-gons of radii `r_inner` and `r_outer`,
/// split into `n_radial` rings; the inner disk is a fan from the origin and a
/// transition band connects the outer polygon to `∂D`.
///
/// `n_angular` must be a multiple of 8 so that the corners of `D` are vertices.
pub fn generate_annulus_in_square(
    n_angular: usize,
    n_radial: usize,
    r_inner: f64,
    r_outer: f64,
) -> Result<ReferenceMesh, MeshError> {
    if !(0.0 < r_inner && r_inner < r_outer && r_outer < HOLD_ALL_HALF_WIDTH) {
        return Err(MeshError::Parameters(format!(
            "radii must satisfy 0 < r_inner < r_outer < {HOLD_ALL_HALF_WIDTH}, got ({r_inner}, {r_outer})"
        )));
    }
    if n_angular < 8 || n_radial < 1 {
        return Err(MeshError::Parameters(format!(
            "need n_angular >= 8 and n_radial >= 1, got ({n_angular}, {n_radial})"
        )));
    }
    if n_angular % 8 != 0 {
        return Err(MeshError::Generation(format!(
            "{n_angular} angular segments cannot place vertices at the corners of the hold-all square"
        )));
    }
    let n = n_angular;
    let angles: Vec<f64> = (0..n).map(|i| 2.0 * PI * i as f64 / n as f64).collect();
    let spacing = 2.0 * PI * r_outer / n as f64;
    let mean_gap = 0.5 * (HOLD_ALL_HALF_WIDTH * (1.0 + 2f64.sqrt())) - r_outer;
    let n_transition = ((mean_gap / spacing).round() as usize).max(1);

    let mut vertices = vec![Point::zeros()];
    let mut rings: Vec<Vec<usize>> = Vec::new();
    for k in 0..=n_radial {
        let r = r_inner + (r_outer - r_inner) * k as f64 / n_radial as f64;
        let start = vertices.len();
        vertices.extend(angles.iter().map(|&a| Point::new(r * a.cos(), r * a.sin())));
        rings.push((start..start + n).collect());
    }
    let outer: Vec<Point> = angles.iter().map(|&a| Point::new(r_outer * a.cos(), r_outer * a.sin())).collect();
    for l in 1..=n_transition {
        let s = l as f64 / n_transition as f64;
        let start = vertices.len();
        vertices.extend(outer.iter().zip(&angles).map(|(p, &a)| {
            if l == n_transition {
                square_point(a)
            } else {
                p * (1.0 - s) + square_point(a) * s
            }
        }));
        rings.push((start..start + n).collect());
    }

    let mut triangles = Vec::new();
    let mut omega = Vec::new();
    for i in 0..n {
        triangles.push([0, rings[0][i], rings[0][(i + 1) % n]]);
        omega.push(false);
    }
    for (k, pair) in rings.windows(2).enumerate() {
        let (a, b) = (&pair[0], &pair[1]);
        let inside = k < n_radial;
        for i in 0..n {
            let j = (i + 1) % n;
            triangles.push([a[i], b[i], b[j]]);
            triangles.push([a[i], b[j], a[j]]);
            omega.push(inside);
            omega.push(inside);
        }
    }
    ReferenceMesh::new(vertices, triangles, omega).map_err(|e| match e {
        MeshError::NonPositiveArea { triangle, .. } => MeshError::Generation(format!(
            "transition band self-intersects at triangle {triangle}; increase the angular resolution"
        )),
        other => other,
    })
}
