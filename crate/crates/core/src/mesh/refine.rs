use std::collections::HashMap;

use super::{DeformationMap, MeshError, ReferenceMesh};

/// Red refinement: every triangle is split into four congruent children through
/// its edge midpoints. The deformation is carried over as its P1 interpolant, so
/// the deformed geometry is unchanged.
pub fn refine_congruent(
    mesh: &ReferenceMesh,
    phi: &DeformationMap,
) -> Result<(ReferenceMesh, DeformationMap), MeshError> {
    if phi.len() != mesh.num_vertices() {
        return Err(MeshError::SizeMismatch { expected: mesh.num_vertices(), got: phi.len() });
    }
    let edges = mesh.edges();
    let n = mesh.num_vertices();
    let mut vertices = mesh.vertices().to_vec();
    let mut values = phi.values().to_vec();
    let mut midpoint: HashMap<(usize, usize), usize> = HashMap::with_capacity(edges.len());
    vertices.reserve(edges.len());
    values.reserve(edges.len());
    for (k, &(a, b)) in edges.iter().enumerate() {
        vertices.push((mesh.vertices()[a] + mesh.vertices()[b]) * 0.5);
        values.push((phi.values()[a] + phi.values()[b]) * 0.5);
        midpoint.insert((a, b), n + k);
    }
    let mid = |a: usize, b: usize| midpoint[&(a.min(b), a.max(b))];

    let mut triangles = Vec::with_capacity(4 * mesh.num_triangles());
    let mut omega = Vec::with_capacity(4 * mesh.num_triangles());
    for (&[a, b, c], &flag) in mesh.triangles().iter().zip(mesh.omega_cells()) {
        let (ab, bc, ca) = (mid(a, b), mid(b, c), mid(c, a));
        triangles.extend([[a, ab, ca], [ab, b, bc], [ca, bc, c], [ab, bc, ca]]);
        omega.extend([flag; 4]);
    }
    let refined = ReferenceMesh::new(vertices, triangles, omega)?;
    let phi = DeformationMap::from_values(&refined, values)?;
    Ok((refined, phi))
}
