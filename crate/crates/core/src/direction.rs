//! Steepest-descent direction in `W^{1,∞}`: minimize `𝒥ₕ′(Ωₕ)[V]` over P1 fields
//! with `V = 0` on `∂D` and `|DV| ≤ 1` (spectral norm) on every cell.
//!
//! The problem is split as `DV = q` with `q` a piecewise constant matrix field
//! and solved with ADMM on the augmented Lagrangian
//!
//! `ℒ_τ(V, q; λ) = ∫_D λ:(DV − q) + τ/2 |DV − q|² + 𝒥ₕ′[V]`.
//!
//! The `q` step is a per-cell projection onto the spectral unit ball, the `V`
//! step a vector Laplace solve on the deformed mesh of `D`, whose matrix does
//! not depend on `τ` and is factorized once per call.

use nalgebra::{Matrix2, Vector2};
use rayon::prelude::*;

use crate::fem::{assemble_stiffness, DofMap, SparseCholesky, FemError};
use crate::linalg::{frobenius_dot, gram_eigenvalues, spectral_norm};
use crate::mesh::{all_cell_geometry, CellGeometry, DeformationMap, ReferenceMesh};
use crate::shapegrad::{evaluate_pairing, ShapeGradient};

/// Nearest matrix (in the Frobenius norm) with spectral norm at most one:
/// singular values above 1 are clipped to 1.
///
/// Written as `A·w(AᵀA)` with `w(s) = min(1, s^{-1/2})`, using the closed-form
/// eigen-decomposition of the symmetric 2×2 Gram matrix.
pub fn project_spectral_ball(a: &Matrix2<f64>) -> Matrix2<f64> {
    let (big, small) = gram_eigenvalues(a);
    if big <= 1.0 {
        return *a;
    }
    let w_big = big.sqrt().recip();
    let (w_small, slope) = if small > 1.0 {
        let (sb, ss) = (big.sqrt(), small.sqrt());
        // divided difference of s^{-1/2}, written without cancellation
        (ss.recip(), -1.0 / (sb * ss * (sb + ss)))
    } else {
        (1.0, (w_big - 1.0) / (big - small))
    };
    // w(M) = w_small I + slope (M − small I), exact on both eigenvectors
    let gram = a.transpose() * a;
    let weight = Matrix2::identity() * (w_small - slope * small) + gram * slope;
    a * weight
}

/// Settings of the ADMM iteration.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdmmParams {
    pub tau0: f64,
    /// Stopping tolerance on the residual `R`; `None` selects
    /// `1e-6·(1 + max|g|)` from the shape gradient `g`.
    pub tol: Option<f64>,
    pub max_iter: usize,
    /// Residual balancing: rescale `τ` when one residual exceeds the other by this ratio.
    pub balance_ratio: f64,
    /// Residual balancing factor `κ > 1`.
    pub balance_factor: f64,
}

impl Default for AdmmParams {
    fn default() -> Self {
        Self { tau0: 1.0, tol: None, max_iter: 2000, balance_ratio: 10.0, balance_factor: 2.0 }
    }
}

impl AdmmParams {
    pub fn tolerance_for(&self, grad: &ShapeGradient) -> f64 {
        self.tol.unwrap_or_else(|| 1e-6 * (1.0 + grad.max_norm()))
    }
}

/// Iterates and diagnostics of one ADMM run; can warm-start the next run on
/// the same connectivity.
#[derive(Clone, Debug, PartialEq)]
pub struct AdmmState {
    pub field: Vec<Vector2<f64>>,
    pub q: Vec<Matrix2<f64>>,
    pub lambda: Vec<Matrix2<f64>>,
    pub tau: f64,
    /// Last value of `R = (‖Δλ‖² + ‖ΔDV‖²)^{1/2}`.
    pub residual: f64,
    /// `‖DV − q‖_{L²}` at the last iterate.
    pub primal_residual: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl AdmmState {
    pub fn cold(n_vertices: usize, n_cells: usize, tau: f64) -> Self {
        Self {
            field: vec![Vector2::zeros(); n_vertices],
            q: vec![Matrix2::zeros(); n_cells],
            lambda: vec![Matrix2::zeros(); n_cells],
            tau,
            residual: f64::INFINITY,
            primal_residual: f64::INFINITY,
            iterations: 0,
            converged: false,
        }
    }

    fn fits(&self, n_vertices: usize, n_cells: usize) -> bool {
        self.field.len() == n_vertices && self.q.len() == n_cells && self.lambda.len() == n_cells && self.tau > 0.0
    }
}

/// Result of [`admm_direction`].
#[derive(Clone, Debug)]
pub struct Direction {
    /// Feasible direction `V*` (zero on `∂D`, `|DV*| ≤ 1`).
    pub field: Vec<Vector2<f64>>,
    /// `𝒥ₕ′[V*] ≤ 0`.
    pub pairing: f64,
    /// Largest cell spectral norm of `DV` at the last ADMM iterate, before the
    /// feasibility rescaling.
    pub raw_max_norm: f64,
    /// True if the last iterate had a positive pairing and was replaced by zero.
    pub zeroed: bool,
    pub state: AdmmState,
}

/// Per-cell Jacobians of a nodal field.
pub fn field_jacobians(mesh: &ReferenceMesh, geometry: &[CellGeometry], field: &[Vector2<f64>]) -> Vec<Matrix2<f64>> {
    mesh.triangles()
        .par_iter()
        .zip(geometry.par_iter())
        .map(|(&[a, b, c], g)| g.field_jacobian([field[a], field[b], field[c]]))
        .collect()
}

/// Largest spectral norm of `DV` over the cells.
pub fn max_jacobian_norm(mesh: &ReferenceMesh, phi: &DeformationMap, field: &[Vector2<f64>]) -> Result<f64, FemError> {
    let geometry = all_cell_geometry(mesh, phi)?;
    Ok(field_jacobians(mesh, &geometry, field).iter().map(spectral_norm).fold(0.0, f64::max))
}

fn weighted_norm(geometry: &[CellGeometry], f: impl Fn(usize) -> f64 + Sync) -> f64 {
    let terms: Vec<f64> = (0..geometry.len()).into_par_iter().map(|c| geometry[c].area * f(c)).collect();
    terms.iter().sum::<f64>().sqrt()
}

struct VectorLaplacian<'a> {
    mesh: &'a ReferenceMesh,
    geometry: &'a [CellGeometry],
    dofs: DofMap,
    factor: Option<SparseCholesky>,
}

impl<'a> VectorLaplacian<'a> {
    fn new(mesh: &'a ReferenceMesh, geometry: &'a [CellGeometry]) -> Result<Self, FemError> {
        let dofs = DofMap::hold_all(mesh);
        let factor = if dofs.is_empty() {
            None
        } else {
            Some(SparseCholesky::factor(&assemble_stiffness(mesh, geometry, &dofs, |_| true))?)
        };
        Ok(Self { mesh, geometry, dofs, factor })
    }

    /// Solves `∫ DV:DW = ∫ M:DW − g[W]/τ` for all `W`, with `M` per cell.
    fn solve(&self, matrices: &[Matrix2<f64>], grad: &ShapeGradient, tau: f64) -> Vec<Vector2<f64>> {
        let n = self.mesh.num_vertices();
        let mut out = vec![Vector2::zeros(); n];
        let Some(factor) = &self.factor else { return out };
        let mut load = vec![[0.0; 2]; self.dofs.len()];
        for (d, slot) in load.iter_mut().enumerate() {
            let g = grad.dual[self.dofs.vertex(d)];
            *slot = [-g.x / tau, -g.y / tau];
        }
        for ((tri, g), m) in self.mesh.triangles().iter().zip(self.geometry).zip(matrices) {
            for (a, &v) in tri.iter().enumerate() {
                if let Some(d) = self.dofs.dof(v) {
                    let w = m * g.basis_gradients[a] * g.area;
                    load[d][0] += w.x;
                    load[d][1] += w.y;
                }
            }
        }
        for (d, x) in factor.solve_pairs(&load).into_iter().enumerate() {
            out[self.dofs.vertex(d)] = Vector2::new(x[0], x[1]);
        }
        out
    }
}

/// Approximates `argmin { 𝒥ₕ′(Ωₕ)[W] : W = 0 on ∂D, |DW| ≤ 1 }` with ADMM.
///
/// The returned field is rescaled to be exactly feasible and is replaced by
/// zero if its pairing is positive, so `pairing ≤ 0` always holds. Hitting
/// `max_iter` is reported through `state.converged`, not as an error.
pub fn admm_direction(
    mesh: &ReferenceMesh,
    phi: &DeformationMap,
    grad: &ShapeGradient,
    params: &AdmmParams,
    warm_start: Option<&AdmmState>,
) -> Result<Direction, FemError> {
    let geometry = all_cell_geometry(mesh, phi)?;
    admm_direction_with(mesh, &geometry, grad, params, warm_start)
}

pub(crate) fn admm_direction_with(
    mesh: &ReferenceMesh,
    geometry: &[CellGeometry],
    grad: &ShapeGradient,
    params: &AdmmParams,
    warm_start: Option<&AdmmState>,
) -> Result<Direction, FemError> {
    let (nv, nc) = (mesh.num_vertices(), mesh.num_triangles());
    assert_eq!(grad.dual.len(), nv);
    if grad.max_norm() < 1e-14 {
        let mut state = AdmmState::cold(nv, nc, params.tau0);
        state.residual = 0.0;
        state.primal_residual = 0.0;
        state.converged = true;
        return Ok(Direction { field: state.field.clone(), pairing: 0.0, raw_max_norm: 0.0, zeroed: false, state });
    }
    let tol = params.tolerance_for(grad);
    let laplacian = VectorLaplacian::new(mesh, geometry)?;

    let mut state = match warm_start {
        Some(s) if s.fits(nv, nc) => AdmmState { iterations: 0, converged: false, residual: f64::INFINITY, ..s.clone() },
        _ => AdmmState::cold(nv, nc, params.tau0),
    };
    let mut jac = field_jacobians(mesh, geometry, &state.field);
    let mut jac_norm = weighted_norm(geometry, |c| jac[c].norm_squared());
    let done = |s: &AdmmState, jac_norm: f64| s.residual < tol && s.primal_residual <= tol * (1.0 + jac_norm);

    while state.iterations < params.max_iter {
        if done(&state, jac_norm) {
            state.converged = true;
            break;
        }
        let tau = state.tau;
        let (q, shifted): (Vec<Matrix2<f64>>, Vec<Matrix2<f64>>) = jac
            .par_iter()
            .zip(&state.lambda)
            .map(|(d, l)| {
                let q = project_spectral_ball(&(d + l / tau));
                (q, q - l / tau)
            })
            .unzip();
        state.q = q;
        state.field = laplacian.solve(&shifted, grad, tau);
        let next_jac = field_jacobians(mesh, geometry, &state.field);

        // per cell: area-weighted |DV − q|², |ΔDV|², |DV|²
        let sums: Vec<[f64; 3]> = (0..nc)
            .into_par_iter()
            .map(|c| {
                let w = geometry[c].area;
                let d = &next_jac[c];
                [w * (d - state.q[c]).norm_squared(), w * (d - jac[c]).norm_squared(), w * d.norm_squared()]
            })
            .collect();
        let total = sums.iter().fold([0.0; 3], |acc, s| [acc[0] + s[0], acc[1] + s[1], acc[2] + s[2]]);
        let (primal, change) = (total[0].sqrt(), total[1].sqrt());
        jac_norm = total[2].sqrt();
        for ((l, d), q) in state.lambda.iter_mut().zip(&next_jac).zip(&state.q) {
            *l += (d - q) * tau;
        }
        state.residual = ((tau * primal).powi(2) + change.powi(2)).sqrt();
        state.primal_residual = primal;
        state.iterations += 1;
        jac = next_jac;

        let dual = tau * change;
        if primal > params.balance_ratio * dual {
            state.tau *= params.balance_factor;
        } else if dual > params.balance_ratio * primal {
            state.tau /= params.balance_factor;
        }
    }
    if !state.converged && done(&state, jac_norm) {
        state.converged = true;
    }

    let raw_max_norm = jac.iter().map(spectral_norm).fold(0.0, f64::max);
    let mut field = state.field.clone();
    if raw_max_norm > 1.0 {
        for v in &mut field {
            *v /= raw_max_norm;
        }
    }
    let mut pairing = evaluate_pairing(grad, &field);
    let zeroed = !(pairing <= 0.0);
    if zeroed {
        field.iter_mut().for_each(|v| *v = Vector2::zeros());
        pairing = 0.0;
    }
    Ok(Direction { field, pairing, raw_max_norm, zeroed, state })
}

/// Approximate dual norm `‖𝒥ₕ′(Ωₕ)‖ = −𝒥ₕ′(Ωₕ)[V*] ≥ 0`.
pub fn dual_norm(
    grad: &ShapeGradient,
    mesh: &ReferenceMesh,
    phi: &DeformationMap,
    params: &AdmmParams,
) -> Result<f64, FemError> {
    Ok(-admm_direction(mesh, phi, grad, params, None)?.pairing)
}

/// `∫ λ:(DV − q) + τ/2 |DV − q|² + g[V]`, for diagnostics and tests.
pub fn augmented_lagrangian(
    mesh: &ReferenceMesh,
    phi: &DeformationMap,
    grad: &ShapeGradient,
    state: &AdmmState,
) -> Result<f64, FemError> {
    let geometry = all_cell_geometry(mesh, phi)?;
    let jac = field_jacobians(mesh, &geometry, &state.field);
    let mut sum = evaluate_pairing(grad, &state.field);
    for c in 0..geometry.len() {
        let r = jac[c] - state.q[c];
        sum += geometry[c].area * (frobenius_dot(&state.lambda[c], &r) + 0.5 * state.tau * r.norm_squared());
    }
    Ok(sum)
}
