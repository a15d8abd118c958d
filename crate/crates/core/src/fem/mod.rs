//! P1 finite elements on the deformed subdomain `Ωₕ = Φₕ(Ω̂)`.
//!
//! Degrees of freedom are the vertices interior to `Ωₕ`; all other vertices
//! carry the homogeneous Dirichlet value and are eliminated from the system.
//! Integrals use the three-point edge-midpoint rule, which is exact for
//! quadratics on each triangle.

pub mod sparse;

use nalgebra::Vector2;
use rayon::prelude::*;
use thiserror::Error;

use crate::mesh::{all_cell_geometry, CellGeometry, DeformationMap, MeshError, Point, ReferenceMesh, VertexClass};
use crate::problem::{CostIntegrand, PenaltyConfig, ProblemError};
pub use sparse::{cg_solve, CgSolution, CsrMatrix, SparseCholesky, SparseSystem};

#[derive(Debug, Error)]
pub enum FemError {
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Problem(#[from] ProblemError),
    #[error("linear solver did not converge in {iterations} iterations (relative residual {residual:e})")]
    NotConverged { iterations: usize, residual: f64 },
    #[error("system matrix is not positive definite")]
    NotPositiveDefinite,
}

/// Barycentric coordinates of the edge-midpoint quadrature nodes; each carries
/// weight `area / 3`.
pub const QUADRATURE: [[f64; 3]; 3] = [[0.5, 0.5, 0.0], [0.0, 0.5, 0.5], [0.5, 0.0, 0.5]];

/// Settings for the state and adjoint solves.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolverOptions {
    /// Relative residual target of the CG iteration.
    pub tol: f64,
    /// Iteration cap as a multiple of the number of unknowns.
    pub max_iter_factor: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self { tol: 1e-10, max_iter_factor: 10 }
    }
}

/// Scalar P1 function given by its vertex values (zero outside `Ω̄ₕ` for
/// states and adjoints).
#[derive(Clone, Debug, PartialEq)]
pub struct FeFunction {
    pub nodal_values: Vec<f64>,
}

impl FeFunction {
    pub fn zeros(n: usize) -> Self {
        Self { nodal_values: vec![0.0; n] }
    }

    pub fn cell_values(&self, mesh: &ReferenceMesh, cell: usize) -> [f64; 3] {
        let [a, b, c] = mesh.triangles()[cell];
        [self.nodal_values[a], self.nodal_values[b], self.nodal_values[c]]
    }

    pub fn max_abs(&self) -> f64 {
        self.nodal_values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Numbering of the unknowns of a P1 system.
#[derive(Clone, Debug)]
pub struct DofMap {
    vertex_to_dof: Vec<Option<usize>>,
    dof_to_vertex: Vec<usize>,
}

impl DofMap {
    /// Vertices satisfying `keep`, in vertex order.
    pub fn new(n_vertices: usize, keep: impl Fn(usize) -> bool) -> Self {
        let mut vertex_to_dof = vec![None; n_vertices];
        let mut dof_to_vertex = Vec::new();
        for (v, slot) in vertex_to_dof.iter_mut().enumerate() {
            if keep(v) {
                *slot = Some(dof_to_vertex.len());
                dof_to_vertex.push(v);
            }
        }
        Self { vertex_to_dof, dof_to_vertex }
    }

    /// Vertices interior to `Ωₕ`.
    pub fn interior(mesh: &ReferenceMesh) -> Self {
        Self::new(mesh.num_vertices(), |v| mesh.vertex_class(v) == VertexClass::Interior)
    }

    /// Vertices not on `∂D`.
    pub fn hold_all(mesh: &ReferenceMesh) -> Self {
        Self::new(mesh.num_vertices(), |v| !mesh.is_hold_all_boundary(v))
    }

    pub fn len(&self) -> usize {
        self.dof_to_vertex.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dof_to_vertex.is_empty()
    }

    pub fn dof(&self, vertex: usize) -> Option<usize> {
        self.vertex_to_dof[vertex]
    }

    pub fn vertex(&self, dof: usize) -> usize {
        self.dof_to_vertex[dof]
    }

    /// Scatters a dof vector to vertex values, zero elsewhere.
    pub fn expand(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.vertex_to_dof.len()];
        for (d, &v) in self.dof_to_vertex.iter().enumerate() {
            out[v] = x[d];
        }
        out
    }
}

/// Quadrature node in physical coordinates.
#[inline]
pub fn quadrature_point(points: &[Point; 3], bary: &[f64; 3]) -> Point {
    points[0] * bary[0] + points[1] * bary[1] + points[2] * bary[2]
}

/// Value and gradient of a P1 function at each quadrature node of a cell.
pub(crate) struct CellSample {
    pub x: Point,
    pub value: f64,
}

pub(crate) fn cell_samples(points: &[Point; 3], nodal: [f64; 3]) -> [CellSample; 3] {
    QUADRATURE.map(|b| CellSample {
        x: quadrature_point(points, &b),
        value: nodal[0] * b[0] + nodal[1] * b[1] + nodal[2] * b[2],
    })
}

/// Stiffness matrix `∫ ∇φ_a·∇φ_b` over the cells selected by `cells`,
/// restricted to `dofs`.
pub fn assemble_stiffness(
    mesh: &ReferenceMesh,
    geometry: &[CellGeometry],
    dofs: &DofMap,
    cells: impl Fn(usize) -> bool + Sync,
) -> CsrMatrix {
    let local: Vec<(usize, [[f64; 3]; 3])> = (0..mesh.num_triangles())
        .into_par_iter()
        .filter(|&c| cells(c))
        .map(|c| {
            let g = &geometry[c];
            let mut k = [[0.0; 3]; 3];
            for a in 0..3 {
                for b in 0..3 {
                    k[a][b] = g.area * g.basis_gradients[a].dot(&g.basis_gradients[b]);
                }
            }
            (c, k)
        })
        .collect();
    let mut triplets = Vec::with_capacity(9 * local.len());
    for (c, k) in &local {
        let tri = mesh.triangles()[*c];
        for a in 0..3 {
            let Some(i) = dofs.dof(tri[a]) else { continue };
            for b in 0..3 {
                if let Some(j) = dofs.dof(tri[b]) {
                    triplets.push((i, j, k[a][b]));
                }
            }
        }
    }
    CsrMatrix::from_triplets(dofs.len(), &triplets)
}

fn omega_cells(mesh: &ReferenceMesh) -> Vec<usize> {
    (0..mesh.num_triangles()).filter(|&c| mesh.is_omega(c)).collect()
}

/// Assembles and solves `∫ ∇w·∇η = rhs(η)` on `Ωₕ` where the load vector is
/// built from per-cell contributions `load(cell, geometry, points) -> [f64; 3]`.
fn solve_on_domain<F>(
    mesh: &ReferenceMesh,
    geometry: &[CellGeometry],
    phi: &DeformationMap,
    options: &SolverOptions,
    load: F,
) -> Result<FeFunction, FemError>
where
    F: Fn(usize, &CellGeometry, &[Point; 3]) -> Result<[f64; 3], FemError> + Sync,
{
    let dofs = DofMap::interior(mesh);
    if dofs.is_empty() {
        return Ok(FeFunction::zeros(mesh.num_vertices()));
    }
    let matrix = assemble_stiffness(mesh, geometry, &dofs, |c| mesh.is_omega(c));
    let cells = omega_cells(mesh);
    let local: Vec<[f64; 3]> = cells
        .par_iter()
        .map(|&c| load(c, &geometry[c], &phi.cell_points(mesh, c)))
        .collect::<Result<_, _>>()?;
    let mut rhs = vec![0.0; dofs.len()];
    for (&c, contrib) in cells.iter().zip(&local) {
        for (a, &v) in mesh.triangles()[c].iter().enumerate() {
            if let Some(i) = dofs.dof(v) {
                rhs[i] += contrib[a];
            }
        }
    }
    let system = SparseSystem { matrix, rhs };
    let max_iter = (options.max_iter_factor * dofs.len()).max(10);
    let solution = cg_solve(&system, options.tol, max_iter)?;
    Ok(FeFunction { nodal_values: dofs.expand(&solution.x) })
}

/// Discrete state: `uₕ ∈ X_{Ωₕ}` with `∫ ∇uₕ·∇η = ∫ f η` for all test functions
/// vanishing on `∂Ωₕ`.
pub fn solve_state(
    mesh: &ReferenceMesh,
    phi: &DeformationMap,
    problem: &dyn CostIntegrand,
    options: &SolverOptions,
) -> Result<FeFunction, FemError> {
    let geometry = all_cell_geometry(mesh, phi)?;
    solve_state_with(mesh, phi, &geometry, problem, options)
}

pub(crate) fn solve_state_with(
    mesh: &ReferenceMesh,
    phi: &DeformationMap,
    geometry: &[CellGeometry],
    problem: &dyn CostIntegrand,
    options: &SolverOptions,
) -> Result<FeFunction, FemError> {
    solve_on_domain(mesh, geometry, phi, options, |_, g, points| {
        let w = g.area / 3.0;
        let mut out = [0.0; 3];
        for bary in &QUADRATURE {
            let x = quadrature_point(points, bary);
            problem.check_point(x)?;
            let f = problem.source(x);
            for a in 0..3 {
                out[a] += w * f * bary[a];
            }
        }
        Ok(out)
    })
}

/// Discrete adjoint: `∫ ∇pₕ·∇η = ∫ j_u η + j_z·∇η` with the partials evaluated at `(x, uₕ, ∇uₕ)`.
pub fn solve_adjoint(
    mesh: &ReferenceMesh,
    phi: &DeformationMap,
    u: &FeFunction,
    problem: &dyn CostIntegrand,
    options: &SolverOptions,
) -> Result<FeFunction, FemError> {
    let geometry = all_cell_geometry(mesh, phi)?;
    solve_adjoint_with(mesh, phi, &geometry, u, problem, options)
}

pub(crate) fn solve_adjoint_with(
    mesh: &ReferenceMesh,
    phi: &DeformationMap,
    geometry: &[CellGeometry],
    u: &FeFunction,
    problem: &dyn CostIntegrand,
    options: &SolverOptions,
) -> Result<FeFunction, FemError> {
    solve_on_domain(mesh, geometry, phi, options, |c, g, points| {
        let nodal = u.cell_values(mesh, c);
        let grad_u = g.gradient(nodal);
        let w = g.area / 3.0;
        let mut out = [0.0; 3];
        for (s, bary) in cell_samples(points, nodal).iter().zip(&QUADRATURE) {
            problem.check_point(s.x)?;
            let ju = problem.j_u(s.x, s.value, grad_u);
            let jz = problem.j_z(s.x, s.value, grad_u);
            for a in 0..3 {
                out[a] += w * (ju * bary[a] + jz.dot(&g.basis_gradients[a]));
            }
        }
        Ok(out)
    })
}

/// Objective split into its parts.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CostBreakdown {
    /// `∫_{Ωₕ} j(x, uₕ, ∇uₕ)`.
    pub objective: f64,
    /// Volume penalty (zero when inactive).
    pub penalty: f64,
    pub volume: f64,
}

impl CostBreakdown {
    pub fn total(&self) -> f64 {
        self.objective + self.penalty
    }
}

pub(crate) fn cost_with(
    mesh: &ReferenceMesh,
    phi: &DeformationMap,
    geometry: &[CellGeometry],
    u: &FeFunction,
    problem: &dyn CostIntegrand,
    penalty: Option<&PenaltyConfig>,
) -> Result<CostBreakdown, FemError> {
    let cells = omega_cells(mesh);
    let per_cell: Vec<f64> = cells
        .par_iter()
        .map(|&c| {
            let g = &geometry[c];
            let nodal = u.cell_values(mesh, c);
            let grad_u: Vector2<f64> = g.gradient(nodal);
            let mut sum = 0.0;
            for s in cell_samples(&phi.cell_points(mesh, c), nodal) {
                problem.check_point(s.x)?;
                sum += problem.j(s.x, s.value, grad_u);
            }
            Ok(sum * g.area / 3.0)
        })
        .collect::<Result<_, FemError>>()?;
    let objective = per_cell.iter().sum();
    let volume: f64 = cells.iter().map(|&c| geometry[c].area).sum();
    let penalty = penalty.map_or(0.0, |p| p.value_and_derivative(volume).0);
    Ok(CostBreakdown { objective, penalty, volume })
}

/// `𝒥ₕ(Ωₕ)` plus the volume penalty when one is given.
pub fn evaluate_cost(
    mesh: &ReferenceMesh,
    phi: &DeformationMap,
    u: &FeFunction,
    problem: &dyn CostIntegrand,
    penalty: Option<&PenaltyConfig>,
) -> Result<f64, FemError> {
    evaluate_cost_breakdown(mesh, phi, u, problem, penalty).map(|c| c.total())
}

pub fn evaluate_cost_breakdown(
    mesh: &ReferenceMesh,
    phi: &DeformationMap,
    u: &FeFunction,
    problem: &dyn CostIntegrand,
    penalty: Option<&PenaltyConfig>,
) -> Result<CostBreakdown, FemError> {
    let geometry = all_cell_geometry(mesh, phi)?;
    cost_with(mesh, phi, &geometry, u, problem, penalty)
}

/// Solves the state on the given shape and evaluates the cost.
pub fn energy(
    mesh: &ReferenceMesh,
    phi: &DeformationMap,
    problem: &dyn CostIntegrand,
    penalty: Option<&PenaltyConfig>,
    options: &SolverOptions,
) -> Result<(FeFunction, CostBreakdown), FemError> {
    let geometry = all_cell_geometry(mesh, phi)?;
    let u = solve_state_with(mesh, phi, &geometry, problem, options)?;
    let cost = cost_with(mesh, phi, &geometry, &u, problem, penalty)?;
    Ok((u, cost))
}
