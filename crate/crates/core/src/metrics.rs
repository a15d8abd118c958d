//! Shape-quality and convergence diagnostics.

use rayon::prelude::*;
use thiserror::Error;

use crate::linalg::gram_eigenvalues;
use crate::mesh::{all_cell_geometry, DeformationMap, MeshError, Point, ReferenceMesh, VertexClass};
use crate::problem::TargetShape;

#[derive(Clone, Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("EOC undefined for non-positive values ({0}, {1})")]
    NonPositiveValue(f64, f64),
    #[error("mesh sizes must be positive and strictly decreasing, got ({0}, {1})")]
    MeshSizes(f64, f64),
    #[error("length mismatch: {0} values for {1} mesh sizes")]
    LengthMismatch(usize, usize),
}

/// Discrete complement distance of the current shape at every deformed vertex:
/// distance to the nearest deformed boundary-of-`Ωₕ` vertex for vertices inside
/// `Ωₕ`, zero elsewhere.
pub fn discrete_complement_distance(mesh: &ReferenceMesh, phi: &DeformationMap) -> Vec<f64> {
    let positions = phi.values();
    let boundary: Vec<Point> = (0..mesh.num_vertices())
        .filter(|&v| mesh.vertex_class(v) == VertexClass::Boundary)
        .map(|v| positions[v])
        .collect();
    (0..mesh.num_vertices())
        .into_par_iter()
        .map(|v| {
            if mesh.vertex_class(v) != VertexClass::Interior {
                return 0.0;
            }
            let x = positions[v];
            boundary.iter().map(|y| (x - y).norm()).fold(f64::INFINITY, f64::min)
        })
        .collect()
}

/// `maxᵢ |d(xᵢ) − dʰ(xᵢ)|` over the deformed vertices, for an arbitrary
/// reference distance `d`.
pub fn discrete_hcd_with(mesh: &ReferenceMesh, phi: &DeformationMap, distance: impl Fn(Point) -> f64 + Sync) -> f64 {
    let discrete = discrete_complement_distance(mesh, phi);
    phi.values()
        .par_iter()
        .zip(discrete.par_iter())
        .map(|(x, dh)| (distance(*x) - dh).abs())
        .reduce(|| 0.0, f64::max)
}

/// Discrete Hausdorff complementary distance to a known target shape.
pub fn discrete_hcd(mesh: &ReferenceMesh, phi: &DeformationMap, target: &TargetShape) -> f64 {
    discrete_hcd_with(mesh, phi, |x| target.complement_distance(x))
}

/// `(max ‖DΦₕ‖, max ‖DΦₕ⁻¹‖)` over the cells, spectral norms.
pub fn deformation_norms(mesh: &ReferenceMesh, phi: &DeformationMap) -> Result<(f64, f64), MeshError> {
    let geometry = all_cell_geometry(mesh, phi)?;
    let per_cell: Vec<(f64, f64)> = geometry
        .par_iter()
        .map(|g| {
            let (big, small) = gram_eigenvalues(&g.jacobian);
            (big.sqrt(), small.sqrt().recip())
        })
        .collect();
    Ok(per_cell.iter().fold((0.0, 0.0), |(a, b), &(x, y)| (a.max(x), b.max(y))))
}

/// Experimental order of convergence between consecutive entries:
/// `(ln E₁ − ln E₂) / (ln h₁ − ln h₂)`.
pub fn eoc(values: &[f64], hs: &[f64]) -> Result<Vec<Result<f64, MetricsError>>, MetricsError> {
    if values.len() != hs.len() {
        return Err(MetricsError::LengthMismatch(values.len(), hs.len()));
    }
    for w in hs.windows(2) {
        if !(w[1] > 0.0 && w[1] < w[0]) {
            return Err(MetricsError::MeshSizes(w[0], w[1]));
        }
    }
    Ok(values
        .windows(2)
        .zip(hs.windows(2))
        .map(|(e, h)| {
            if !(e[0] > 0.0 && e[1] > 0.0) {
                Err(MetricsError::NonPositiveValue(e[0], e[1]))
            } else {
                Ok((e[0].ln() - e[1].ln()) / (h[0].ln() - h[1].ln()))
            }
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq)]
pub struct TableRow {
    pub h: f64,
    pub mu: Option<f64>,
    pub energy: f64,
    pub eoc_energy: Option<f64>,
    pub hcd: f64,
    pub eoc_hcd: Option<f64>,
}

/// Per-level energies and distances with their EOCs.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ConvergenceTable {
    pub rows: Vec<TableRow>,
}

impl ConvergenceTable {
    /// Builds the table from `(h, μ, energy, hcd)` per level; EOC entries are
    /// absent in the first row and wherever they are undefined.
    pub fn from_levels(levels: &[(f64, Option<f64>, f64, f64)]) -> Result<Self, MetricsError> {
        let hs: Vec<f64> = levels.iter().map(|l| l.0).collect();
        let energies: Vec<f64> = levels.iter().map(|l| l.2).collect();
        let hcds: Vec<f64> = levels.iter().map(|l| l.3).collect();
        let eoc_e = eoc(&energies, &hs)?;
        let eoc_d = eoc(&hcds, &hs)?;
        let rows = levels
            .iter()
            .enumerate()
            .map(|(i, &(h, mu, energy, hcd))| TableRow {
                h,
                mu,
                energy,
                eoc_energy: i.checked_sub(1).and_then(|k| eoc_e[k].clone().ok()),
                hcd,
                eoc_hcd: i.checked_sub(1).and_then(|k| eoc_d[k].clone().ok()),
            })
            .collect();
        Ok(Self { rows })
    }
}
