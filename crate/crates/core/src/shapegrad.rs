//! Discrete shape derivative as a linear functional on nodal vector fields.

use nalgebra::Vector2;
use rayon::prelude::*;

use crate::fem::{cell_samples, FeFunction, FemError, QUADRATURE};
use crate::mesh::{all_cell_geometry, CellGeometry, DeformationMap, ReferenceMesh};
use crate::problem::{CostIntegrand, PenaltyConfig};

/// `𝒥ₕ′(Ωₕ)[V] = Σᵢ dual[i]·V(xᵢ)` for P1 fields `V` vanishing on `∂D`.
#[derive(Clone, Debug, PartialEq)]
pub struct ShapeGradient {
    pub dual: Vec<Vector2<f64>>,
}

impl ShapeGradient {
    pub fn zeros(n: usize) -> Self {
        Self { dual: vec![Vector2::zeros(); n] }
    }

    /// Vertices with a nonzero entry.
    pub fn support(&self) -> Vec<usize> {
        self.dual.iter().enumerate().filter(|(_, g)| g.x != 0.0 || g.y != 0.0).map(|(i, _)| i).collect()
    }

    /// Largest entry magnitude (Euclidean per vertex).
    pub fn max_norm(&self) -> f64 {
        self.dual.iter().fold(0.0, |m, g| m.max(g.norm()))
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self { dual: self.dual.iter().map(|g| g * factor).collect() }
    }
}

/// Dual pairing with a nodal vector field.
pub fn evaluate_pairing(grad: &ShapeGradient, field: &[Vector2<f64>]) -> f64 {
    assert_eq!(grad.dual.len(), field.len());
    grad.dual.iter().zip(field).map(|(g, v)| g.dot(v)).sum()
}

/// Deformed area of the reference domain.
pub fn volume(mesh: &ReferenceMesh, phi: &DeformationMap) -> Result<f64, FemError> {
    let geometry = all_cell_geometry(mesh, phi)?;
    Ok(volume_with(mesh, &geometry))
}

pub(crate) fn volume_with(mesh: &ReferenceMesh, geometry: &[CellGeometry]) -> f64 {
    (0..mesh.num_triangles()).filter(|&c| mesh.is_omega(c)).map(|c| geometry[c].area).sum()
}

/// Assembles the volume form of the shape derivative from the state `u` and
/// adjoint `p`:
///
/// `∫_Ωₕ j div V + j_x·V − j_z·DVᵀ∇u + (DV + DVᵀ − div V I)∇u·∇p + div(fV) p`,
///
/// plus `μ(|Ωₕ| − m₀) ∫_Ωₕ div V` for an active penalty.
pub fn assemble_shape_gradient(
    mesh: &ReferenceMesh,
    phi: &DeformationMap,
    u: &FeFunction,
    p: &FeFunction,
    problem: &dyn CostIntegrand,
    penalty: Option<&PenaltyConfig>,
) -> Result<ShapeGradient, FemError> {
    let geometry = all_cell_geometry(mesh, phi)?;
    assemble_with(mesh, phi, &geometry, u, p, problem, penalty)
}

pub(crate) fn assemble_with(
    mesh: &ReferenceMesh,
    phi: &DeformationMap,
    geometry: &[CellGeometry],
    u: &FeFunction,
    p: &FeFunction,
    problem: &dyn CostIntegrand,
    penalty: Option<&PenaltyConfig>,
) -> Result<ShapeGradient, FemError> {
    let penalty_coefficient = penalty.map_or(0.0, |cfg| cfg.value_and_derivative(volume_with(mesh, geometry)).1);
    let cells: Vec<usize> = (0..mesh.num_triangles()).filter(|&c| mesh.is_omega(c)).collect();
    let local: Vec<[Vector2<f64>; 3]> = cells
        .par_iter()
        .map(|&c| {
            let g = &geometry[c];
            let points = phi.cell_points(mesh, c);
            let u_nodal = u.cell_values(mesh, c);
            let p_nodal = p.cell_values(mesh, c);
            let grad_u = g.gradient(u_nodal);
            let grad_p = g.gradient(p_nodal);
            let w = g.area / 3.0;
            let mut out = [Vector2::zeros(); 3];

            // Terms with constant integrand on the cell.
            let cross_term = grad_u.dot(&grad_p);
            for a in 0..3 {
                let ga = &g.basis_gradients[a];
                out[a] += (grad_p * ga.dot(&grad_u) + grad_u * ga.dot(&grad_p) - ga * cross_term) * g.area;
                out[a] += ga * (penalty_coefficient * g.area);
            }

            let u_samples = cell_samples(&points, u_nodal);
            for ((su, bary), sp) in u_samples.iter().zip(&QUADRATURE).zip(cell_samples(&points, p_nodal)) {
                problem.check_point(su.x)?;
                let j = problem.j(su.x, su.value, grad_u);
                let jx = problem.j_x(su.x, su.value, grad_u);
                let jz = problem.j_z(su.x, su.value, grad_u);
                let f = problem.source(su.x);
                let grad_f = problem.source_gradient(su.x);
                for a in 0..3 {
                    let ga = &g.basis_gradients[a];
                    out[a] += (ga * j + jx * bary[a] - grad_u * ga.dot(&jz) + (grad_f * bary[a] + ga * f) * sp.value) * w;
                }
            }
            Ok(out)
        })
        .collect::<Result<_, FemError>>()?;

    let mut dual = vec![Vector2::zeros(); mesh.num_vertices()];
    for (&c, contrib) in cells.iter().zip(&local) {
        for (a, &v) in mesh.triangles()[c].iter().enumerate() {
            dual[v] += contrib[a];
        }
    }
    for (v, d) in dual.iter_mut().enumerate() {
        if mesh.is_hold_all_boundary(v) {
            *d = Vector2::zeros();
        }
    }
    Ok(ShapeGradient { dual })
}
