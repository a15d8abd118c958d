//! Oracles shared by the integration tests and the acceptance suite.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector, Matrix2, Matrix4, Vector2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use winfty_core::fem::{energy, FeFunction, SolverOptions, QUADRATURE};
use winfty_core::mesh::{all_cell_geometry, check_admissible, generate_annulus_in_square, DeformationMap, ReferenceMesh};
use winfty_core::problem::{experiment, Experiment, ExperimentId};
use winfty_core::shapegrad::ShapeGradient;
use winfty_core::{assemble_shape_gradient, evaluate_pairing, solve_adjoint, solve_state};

/// Polygonal disk of radius `radius` as the omega part of an annulus mesh
/// whose fan is switched on. Level `k` has `16·2ᵏ` angular segments and
/// uniform radial spacing `radius / (2·2ᵏ + 1)`.
pub fn disk_mesh(radius: f64, level: u32) -> ReferenceMesh {
    let n_radial = 2usize << level;
    let n_angular = 16usize << level;
    let r_inner = radius / (n_radial + 1) as f64;
    let ring = generate_annulus_in_square(n_angular, n_radial, r_inner, radius).unwrap();
    let omega = ring
        .triangles()
        .iter()
        .map(|t| {
            let c = (ring.vertices()[t[0]] + ring.vertices()[t[1]] + ring.vertices()[t[2]]) / 3.0;
            c.norm() < radius
        })
        .collect();
    ReferenceMesh::new(ring.vertices().to_vec(), ring.triangles().to_vec(), omega).unwrap()
}

/// `‖u − uₕ‖_{L²(Ωₕ)}` with the edge-midpoint rule, exact when `u` is quadratic.
pub fn l2_error(mesh: &ReferenceMesh, phi: &DeformationMap, uh: &FeFunction, exact: impl Fn(Vector2<f64>) -> f64) -> f64 {
    let geometry = all_cell_geometry(mesh, phi).unwrap();
    let mut sum = 0.0;
    for c in (0..mesh.num_triangles()).filter(|&c| mesh.is_omega(c)) {
        let p = phi.cell_points(mesh, c);
        let nodal = uh.cell_values(mesh, c);
        for b in &QUADRATURE {
            let x = p[0] * b[0] + p[1] * b[1] + p[2] * b[2];
            let v = nodal[0] * b[0] + nodal[1] * b[1] + nodal[2] * b[2];
            sum += geometry[c].area / 3.0 * (v - exact(x)).powi(2);
        }
    }
    sum.sqrt()
}

/// Constrained minimum of the pairing from a log-barrier interior-point
/// method on the equivalent matrix inequality `[[I, A], [Aᵀ, I]] ⪰ 0` per cell.
pub struct BarrierOracle {
    /// Pairing at the returned field.
    pub value: f64,
    /// Certified bound on `value − min`.
    pub gap: f64,
    pub field: Vec<Vector2<f64>>,
}

fn embed(a: &Matrix2<f64>) -> Matrix4<f64> {
    let mut x = Matrix4::identity();
    for i in 0..2 {
        for j in 0..2 {
            x[(i, 2 + j)] = a[(i, j)];
            x[(2 + j, i)] = a[(i, j)];
        }
    }
    x
}

pub fn barrier_oracle(mesh: &ReferenceMesh, phi: &DeformationMap, grad: &ShapeGradient, gap_target: f64) -> BarrierOracle {
    let geometry = all_cell_geometry(mesh, phi).unwrap();
    let free: Vec<usize> = (0..mesh.num_vertices()).filter(|&v| !mesh.is_hold_all_boundary(v)).collect();
    let mut index = vec![usize::MAX; mesh.num_vertices()];
    for (d, &v) in free.iter().enumerate() {
        index[v] = d;
    }
    let n = 2 * free.len();
    let g = DVector::from_iterator(n, free.iter().flat_map(|&v| [grad.dual[v].x, grad.dual[v].y]));
    let nc = mesh.num_triangles();

    // per cell: local dofs and the derivative of DV with respect to each
    let locals: Vec<Vec<(usize, Matrix2<f64>)>> = (0..nc)
        .map(|c| {
            let mut out = Vec::new();
            for (a, &v) in mesh.triangles()[c].iter().enumerate() {
                if index[v] == usize::MAX {
                    continue;
                }
                let b = geometry[c].basis_gradients[a];
                for i in 0..2 {
                    let mut m = Matrix2::zeros();
                    m[(i, 0)] = b.x;
                    m[(i, 1)] = b.y;
                    out.push((2 * index[v] + i, m));
                }
            }
            out
        })
        .collect();
    let jacobian = |x: &DVector<f64>, c: usize| -> Matrix2<f64> {
        locals[c].iter().fold(Matrix2::zeros(), |acc, (k, m)| acc + m * x[*k])
    };
    let barrier = |x: &DVector<f64>| -> Option<f64> {
        let mut sum = 0.0;
        for c in 0..nc {
            let a = jacobian(x, c);
            let m = Matrix2::identity() - a.transpose() * a;
            if !(m[(0, 0)] > 0.0 && m.determinant() > 0.0) {
                return None;
            }
            sum -= m.determinant().ln();
        }
        Some(sum)
    };

    let mut x = DVector::zeros(n);
    let mut t = 1.0;
    let theta = 4.0 * nc as f64;
    loop {
        for _ in 0..200 {
            let mut gradient = &g * t;
            let mut hessian = DMatrix::zeros(n, n);
            for c in 0..nc {
                let y = embed(&jacobian(&x, c)).try_inverse().unwrap();
                let dx: Vec<Matrix4<f64>> = locals[c].iter().map(|(_, m)| embed(m) - Matrix4::identity()).collect();
                let ydx: Vec<Matrix4<f64>> = dx.iter().map(|d| y * d).collect();
                for (p, (kp, _)) in locals[c].iter().enumerate() {
                    gradient[*kp] -= ydx[p].trace();
                    for (q, (kq, _)) in locals[c].iter().enumerate() {
                        hessian[(*kp, *kq)] += (ydx[p] * ydx[q]).trace();
                    }
                }
            }
            let step = hessian.cholesky().expect("barrier Hessian is positive definite").solve(&(-&gradient));
            let decrement = -gradient.dot(&step);
            if decrement < 1e-12 {
                break;
            }
            let value = |x: &DVector<f64>| barrier(x).map(|b| t * g.dot(x) + b);
            let f0 = value(&x).unwrap();
            let mut s = 1.0;
            loop {
                let trial = &x + &step * s;
                if let Some(f) = value(&trial) {
                    if f <= f0 - 0.25 * s * decrement {
                        x = trial;
                        break;
                    }
                }
                s *= 0.5;
                assert!(s > 1e-20, "barrier line search stalled");
            }
        }
        if theta / t < gap_target {
            break;
        }
        t *= 8.0;
    }
    let mut field = vec![Vector2::zeros(); mesh.num_vertices()];
    for (d, &v) in free.iter().enumerate() {
        field[v] = Vector2::new(x[2 * d], x[2 * d + 1]);
    }
    BarrierOracle { value: g.dot(&x), gap: theta / t, field }
}

const TIGHT: SolverOptions = SolverOptions { tol: 1e-14, max_iter_factor: 50 };

/// Smooth random field vanishing on `∂D`, scaled to `max |V| = 0.3`.
pub fn random_field(mesh: &ReferenceMesh, rng: &mut ChaCha8Rng) -> Vec<Vector2<f64>> {
    let modes: Vec<(f64, f64, f64, f64)> =
        (0..4).map(|_| (rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(0.5..2.0), rng.gen_range(0.0..6.3))).collect();
    let raw: Vec<Vector2<f64>> = mesh
        .vertices()
        .iter()
        .map(|x| {
            let bump = (4.0 - x.x * x.x) * (4.0 - x.y * x.y) / 16.0;
            let mut v = Vector2::zeros();
            for &(a, b, k, phase) in &modes {
                let s = (k * x.x + phase).sin() * (k * x.y - phase).cos();
                v += Vector2::new(a, b) * s;
            }
            v * bump
        })
        .collect();
    let scale = raw.iter().map(|v| v.norm()).fold(0.0, f64::max);
    raw.iter().map(|v| v * (0.3 / scale)).collect()
}

fn total_energy(exp: &Experiment, mesh: &ReferenceMesh, phi: &DeformationMap) -> f64 {
    let penalty = exp.penalty.map(|s| s.config(mesh.h()));
    energy(mesh, phi, exp.integrand.as_ref(), penalty.as_ref(), &TIGHT).unwrap().1.total()
}

/// Observed orders of the difference-quotient error over `t = 1e-2, 1e-3, 1e-4`.
pub fn fd_orders(id: ExperimentId, seed: u64) -> Vec<(f64, f64)> {
    let exp = experiment(id);
    let mesh = exp.initial_mesh.build().unwrap();
    let phi = DeformationMap::identity(&mesh);
    let penalty = exp.penalty.map(|s| s.config(mesh.h()));
    let u = solve_state(&mesh, &phi, exp.integrand.as_ref(), &TIGHT).unwrap();
    let p = solve_adjoint(&mesh, &phi, &u, exp.integrand.as_ref(), &TIGHT).unwrap();
    let grad = assemble_shape_gradient(&mesh, &phi, &u, &p, exp.integrand.as_ref(), penalty.as_ref()).unwrap();
    let e0 = total_energy(&exp, &mesh, &phi);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..5)
        .map(|_| {
            let field = random_field(&mesh, &mut rng);
            let pairing = evaluate_pairing(&grad, &field);
            let errors: Vec<f64> = [1e-2, 1e-3, 1e-4]
                .iter()
                .map(|&t| {
                    let moved = phi.displaced(&field, t);
                    assert!(check_admissible(&mesh, &moved).admissible);
                    ((total_energy(&exp, &mesh, &moved) - e0) / t - pairing).abs()
                })
                .collect();
            let order = |a: f64, b: f64| (a / b).log10();
            (order(errors[0], errors[1]), order(errors[1], errors[2]))
        })
        .collect()
}

