//! Triangulations of the hold-all square with an embedded reference domain.

mod generate;
mod io;
mod refine;

use std::collections::HashMap;

use nalgebra::{Matrix2, Vector2};
use rayon::prelude::*;
use thiserror::Error;

use crate::linalg::cross;
use crate::HOLD_ALL_HALF_WIDTH;

pub use generate::{generate_annulus_in_square, generate_square_in_square};
pub use io::{parse_mesh, read_mesh, write_mesh, write_mesh_to};
pub use refine::refine_congruent;

pub type Point = Vector2<f64>;

/// Relative positivity threshold: a deformed cell must keep at least this
/// fraction of its reference area.
pub const ADMISSIBILITY_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("mesh size {n} is not a positive multiple of 4")]
    Alignment { n: usize },
    #[error("invalid generator parameters: {0}")]
    Parameters(String),
    #[error("mesh generation failed: {0}")]
    Generation(String),
    #[error("triangle {triangle} references vertex {vertex}, but only {count} vertices exist")]
    IndexOutOfRange { triangle: usize, vertex: usize, count: usize },
    #[error("triangle {triangle} has non-positive area {area:e}")]
    NonPositiveArea { triangle: usize, area: f64 },
    #[error("edge ({0}, {1}) is shared by more than two triangles")]
    NonManifoldEdge(usize, usize),
    #[error("boundary edge ({0}, {1}) does not lie on the boundary of the hold-all domain")]
    OpenBoundary(usize, usize),
    #[error("reference domain is empty")]
    EmptyDomain,
    #[error("reference domain touches the hold-all boundary at vertex {0}")]
    DomainTouchesBoundary(usize),
    #[error("degenerate triangle")]
    Degenerate,
    #[error("cell {cell} is inverted or degenerate (det DΦ = {det:e})")]
    Inadmissible { cell: usize, det: f64 },
    #[error("deformation has {got} values for {expected} vertices")]
    SizeMismatch { expected: usize, got: usize },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Position of a vertex relative to the reference domain `Ω̂`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VertexClass {
    /// Touches only omega cells.
    Interior,
    /// Touches both an omega cell and a non-omega cell.
    Boundary,
    /// Touches no omega cell.
    Exterior,
}

/// A fixed triangulation of `D` with the cells of `Ω̂` flagged.
///
/// Immutable after construction; all invariants are checked by [`ReferenceMesh::new`].
#[derive(Clone, Debug)]
pub struct ReferenceMesh {
    vertices: Vec<Point>,
    triangles: Vec<[usize; 3]>,
    omega: Vec<bool>,
    on_hold_all_boundary: Vec<bool>,
    classes: Vec<VertexClass>,
    h: f64,
}

fn on_square_boundary(p: &Point) -> bool {
    p.x.abs() == HOLD_ALL_HALF_WIDTH || p.y.abs() == HOLD_ALL_HALF_WIDTH
}

fn signed_area(p0: &Point, p1: &Point, p2: &Point) -> f64 {
    0.5 * cross(&(p1 - p0), &(p2 - p0))
}

impl ReferenceMesh {
    /// Validates and builds a mesh.
    pub fn new(
        vertices: Vec<Point>,
        triangles: Vec<[usize; 3]>,
        omega: Vec<bool>,
    ) -> Result<Self, MeshError> {
        assert_eq!(triangles.len(), omega.len(), "one omega flag per triangle");
        let n = vertices.len();
        for (t, tri) in triangles.iter().enumerate() {
            for &v in tri {
                if v >= n {
                    return Err(MeshError::IndexOutOfRange { triangle: t, vertex: v, count: n });
                }
            }
            let area = signed_area(&vertices[tri[0]], &vertices[tri[1]], &vertices[tri[2]]);
            if !(area > 0.0) {
                return Err(MeshError::NonPositiveArea { triangle: t, area });
            }
        }

        let mut edge_count: HashMap<(usize, usize), u8> = HashMap::with_capacity(3 * triangles.len() / 2 + 8);
        for tri in &triangles {
            for k in 0..3 {
                let (a, b) = (tri[k], tri[(k + 1) % 3]);
                *edge_count.entry((a.min(b), a.max(b))).or_insert(0) += 1;
            }
        }
        let mut on_hold_all_boundary = vec![false; n];
        let mut boundary_edges: Vec<_> = edge_count.iter().filter(|(_, &c)| c != 2).collect();
        boundary_edges.sort_unstable();
        for (&(a, b), &c) in boundary_edges {
            if c > 2 {
                return Err(MeshError::NonManifoldEdge(a, b));
            }
            let (pa, pb) = (&vertices[a], &vertices[b]);
            let same_side = (pa.x.abs() == HOLD_ALL_HALF_WIDTH && pa.x == pb.x)
                || (pa.y.abs() == HOLD_ALL_HALF_WIDTH && pa.y == pb.y);
            if !same_side {
                return Err(MeshError::OpenBoundary(a, b));
            }
            on_hold_all_boundary[a] = true;
            on_hold_all_boundary[b] = true;
        }
        for (v, p) in vertices.iter().enumerate() {
            if on_square_boundary(p) && !on_hold_all_boundary[v] {
                return Err(MeshError::Generation(format!(
                    "vertex {v} lies on the hold-all boundary but no boundary edge uses it"
                )));
            }
        }

        if !omega.iter().any(|&f| f) {
            return Err(MeshError::EmptyDomain);
        }
        let mut touches_omega = vec![false; n];
        let mut touches_outside = vec![false; n];
        for (tri, &flag) in triangles.iter().zip(&omega) {
            for &v in tri {
                if flag {
                    touches_omega[v] = true;
                } else {
                    touches_outside[v] = true;
                }
            }
        }
        for v in 0..n {
            if touches_omega[v] && on_hold_all_boundary[v] {
                return Err(MeshError::DomainTouchesBoundary(v));
            }
        }
        let classes = (0..n)
            .map(|v| match (touches_omega[v], touches_outside[v]) {
                (true, true) => VertexClass::Boundary,
                (true, false) => VertexClass::Interior,
                _ => VertexClass::Exterior,
            })
            .collect();

        let h = triangles
            .iter()
            .zip(&omega)
            .filter(|(_, &f)| f)
            .map(|(tri, _)| longest_edge(&vertices, tri))
            .fold(0.0, f64::max);

        Ok(Self { vertices, triangles, omega, on_hold_all_boundary, classes, h })
    }

    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    /// Omega flag per triangle.
    pub fn omega_cells(&self) -> &[bool] {
        &self.omega
    }

    pub fn is_omega(&self, cell: usize) -> bool {
        self.omega[cell]
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn num_triangles(&self) -> usize {
        self.triangles.len()
    }

    pub fn num_omega_cells(&self) -> usize {
        self.omega.iter().filter(|&&f| f).count()
    }

    /// True for vertices on `∂D`.
    pub fn is_hold_all_boundary(&self, v: usize) -> bool {
        self.on_hold_all_boundary[v]
    }

    /// Indices of vertices on `∂D`, ascending.
    pub fn boundary_vertices(&self) -> Vec<usize> {
        (0..self.vertices.len()).filter(|&v| self.on_hold_all_boundary[v]).collect()
    }

    pub fn vertex_class(&self, v: usize) -> VertexClass {
        self.classes[v]
    }

    pub fn vertex_classes(&self) -> &[VertexClass] {
        &self.classes
    }

    /// Nominal mesh size: longest reference edge over omega cells.
    pub fn h(&self) -> f64 {
        self.h
    }

    /// Sorted list of unique edges.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut edges: Vec<_> = self
            .triangles
            .iter()
            .flat_map(|t| (0..3).map(move |k| (t[k].min(t[(k + 1) % 3]), t[k].max(t[(k + 1) % 3]))))
            .collect();
        edges.sort_unstable();
        edges.dedup();
        edges
    }

    /// Reference area of a cell.
    pub fn reference_area(&self, cell: usize) -> f64 {
        let [a, b, c] = self.triangles[cell];
        signed_area(&self.vertices[a], &self.vertices[b], &self.vertices[c])
    }

    /// Largest radius ratio over the reference cells.
    pub fn max_radius_ratio(&self) -> f64 {
        self.triangles
            .iter()
            .map(|&[a, b, c]| {
                radius_ratio(&self.vertices[a], &self.vertices[b], &self.vertices[c]).unwrap_or(f64::INFINITY)
            })
            .fold(1.0, f64::max)
    }
}

fn longest_edge(vertices: &[Point], tri: &[usize; 3]) -> f64 {
    (0..3)
        .map(|k| (vertices[tri[(k + 1) % 3]] - vertices[tri[k]]).norm())
        .fold(0.0, f64::max)
}

/// Nodal values `Φₕ(x̂ᵢ)` of a piecewise linear map on the reference mesh.
#[derive(Clone, Debug, PartialEq)]
pub struct DeformationMap {
    values: Vec<Point>,
}

impl DeformationMap {
    pub fn identity(mesh: &ReferenceMesh) -> Self {
        Self { values: mesh.vertices.clone() }
    }

    pub fn from_values(mesh: &ReferenceMesh, values: Vec<Point>) -> Result<Self, MeshError> {
        if values.len() != mesh.num_vertices() {
            return Err(MeshError::SizeMismatch { expected: mesh.num_vertices(), got: values.len() });
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &[Point] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// `(id + t·V) ∘ Φ`, with `V` given by its values at the deformed vertices.
    pub fn displaced(&self, field: &[Vector2<f64>], t: f64) -> Self {
        assert_eq!(field.len(), self.values.len());
        Self { values: self.values.iter().zip(field).map(|(x, v)| x + v * t).collect() }
    }

    /// Deformed positions of the three vertices of a cell.
    pub fn cell_points(&self, mesh: &ReferenceMesh, cell: usize) -> [Point; 3] {
        let [a, b, c] = mesh.triangles[cell];
        [self.values[a], self.values[b], self.values[c]]
    }
}

/// Geometry of one deformed cell.
#[derive(Clone, Copy, Debug)]
pub struct CellGeometry {
    pub area: f64,
    /// Gradients of the three P1 nodal basis functions on the deformed cell.
    pub basis_gradients: [Vector2<f64>; 3],
    /// `DΦₕ` restricted to the cell.
    pub jacobian: Matrix2<f64>,
}

impl CellGeometry {
    /// Gradient of the P1 interpolant with the given nodal values.
    #[inline]
    pub fn gradient(&self, nodal: [f64; 3]) -> Vector2<f64> {
        self.basis_gradients[0] * nodal[0] + self.basis_gradients[1] * nodal[1] + self.basis_gradients[2] * nodal[2]
    }

    /// Jacobian of a P1 vector field with the given nodal values.
    #[inline]
    pub fn field_jacobian(&self, nodal: [Vector2<f64>; 3]) -> Matrix2<f64> {
        nodal[0] * self.basis_gradients[0].transpose()
            + nodal[1] * self.basis_gradients[1].transpose()
            + nodal[2] * self.basis_gradients[2].transpose()
    }
}

fn edge_matrix(p: &[Point; 3]) -> Matrix2<f64> {
    Matrix2::from_columns(&[p[1] - p[0], p[2] - p[0]])
}

/// Area, P1 basis gradients and Jacobian of a deformed cell.
pub fn cell_geometry(mesh: &ReferenceMesh, phi: &DeformationMap, cell: usize) -> Result<CellGeometry, MeshError> {
    let [a, b, c] = mesh.triangles[cell];
    let reference = edge_matrix(&[mesh.vertices[a], mesh.vertices[b], mesh.vertices[c]]);
    let deformed = edge_matrix(&phi.cell_points(mesh, cell));
    let ref_det = reference.determinant();
    let det = deformed.determinant();
    if !(det > ADMISSIBILITY_TOLERANCE * ref_det) {
        return Err(MeshError::Inadmissible { cell, det: det / ref_det });
    }
    let inv = Matrix2::new(deformed[(1, 1)], -deformed[(0, 1)], -deformed[(1, 0)], deformed[(0, 0)]) / det;
    let g1 = Vector2::new(inv[(0, 0)], inv[(0, 1)]);
    let g2 = Vector2::new(inv[(1, 0)], inv[(1, 1)]);
    let ref_adj = Matrix2::new(reference[(1, 1)], -reference[(0, 1)], -reference[(1, 0)], reference[(0, 0)]);
    Ok(CellGeometry {
        area: 0.5 * det,
        basis_gradients: [-g1 - g2, g1, g2],
        jacobian: (deformed * ref_adj) / ref_det,
    })
}

/// Geometry of every cell, in cell order.
pub fn all_cell_geometry(mesh: &ReferenceMesh, phi: &DeformationMap) -> Result<Vec<CellGeometry>, MeshError> {
    if phi.len() != mesh.num_vertices() {
        return Err(MeshError::SizeMismatch { expected: mesh.num_vertices(), got: phi.len() });
    }
    (0..mesh.num_triangles()).into_par_iter().map(|c| cell_geometry(mesh, phi, c)).collect()
}

/// Outcome of [`check_admissible`].
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AdmissibilityReport {
    pub admissible: bool,
    /// Cells with `det DΦₕ` below the positivity tolerance.
    pub inverted_cells: Vec<usize>,
    /// `∂D` vertices moved by the map.
    pub moved_boundary_vertices: Vec<usize>,
    /// Smallest `det DΦₕ` over all cells.
    pub min_det: f64,
}

/// Checks `det DΦₕ > 0` on every cell (relative tolerance) and `Φₕ = id` on `∂D`.
pub fn check_admissible(mesh: &ReferenceMesh, phi: &DeformationMap) -> AdmissibilityReport {
    if phi.len() != mesh.num_vertices() {
        return AdmissibilityReport { admissible: false, min_det: f64::NAN, ..Default::default() };
    }
    let dets: Vec<f64> = (0..mesh.num_triangles())
        .into_par_iter()
        .map(|c| {
            let [a, b, d] = mesh.triangles[c];
            let reference = edge_matrix(&[mesh.vertices[a], mesh.vertices[b], mesh.vertices[d]]);
            edge_matrix(&phi.cell_points(mesh, c)).determinant() / reference.determinant()
        })
        .collect();
    let inverted_cells: Vec<usize> = dets
        .iter()
        .enumerate()
        .filter(|(_, &d)| !(d > ADMISSIBILITY_TOLERANCE))
        .map(|(c, _)| c)
        .collect();
    let moved_boundary_vertices: Vec<usize> = (0..mesh.num_vertices())
        .filter(|&v| mesh.on_hold_all_boundary[v] && phi.values[v] != mesh.vertices[v])
        .collect();
    AdmissibilityReport {
        admissible: inverted_cells.is_empty() && moved_boundary_vertices.is_empty(),
        inverted_cells,
        moved_boundary_vertices,
        min_det: dets.iter().copied().fold(f64::INFINITY, f64::min),
    }
}

/// Radius ratio `σ = r/(2ρ)`: radius of the smallest enclosing disk over twice
/// the inradius. Equals 1 exactly for equilateral triangles.
///
/// For acute and right triangles the enclosing disk is the circumdisk; for obtuse
/// ones it is the disk over the longest edge.
pub fn radius_ratio(p0: &Point, p1: &Point, p2: &Point) -> Result<f64, MeshError> {
    let a = (p1 - p2).norm();
    let b = (p2 - p0).norm();
    let c = (p0 - p1).norm();
    let area = signed_area(p0, p1, p2).abs();
    let longest = a.max(b).max(c);
    if !(area > 1e-14 * longest * longest) {
        return Err(MeshError::Degenerate);
    }
    let inradius = area / (0.5 * (a + b + c));
    let (s0, s1, s2) = {
        let mut s = [a, b, c];
        s.sort_by(f64::total_cmp);
        (s[0], s[1], s[2])
    };
    let enclosing = if s2 * s2 > s0 * s0 + s1 * s1 { 0.5 * s2 } else { a * b * c / (4.0 * area) };
    Ok(enclosing / (2.0 * inradius))
}
