//! Discrete Laplace–Beltrami operators and stiffness weights.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::mesh::TriangleMesh;
use super::sparse::SparseOperator;
use super::GeomError;

/// Faces at or below this area (mm²) make cotangents meaningless.
pub const DEGENERATE_AREA: f64 = 1e-12;

/// Cotangent Laplacian.
///
/// Off-diagonal `(cot α + cot β) / 2` over each edge (one term on boundary
/// edges), diagonal equal to minus the row sum. Applied to positions it
/// returns `-2 H n A` (pointing inward on a sphere); linear functions on flat
/// regions map to zero.
pub fn cotangent_laplacian(mesh: &TriangleMesh) -> Result<SparseOperator, GeomError> {
    let edge_weights = cotangent_edge_weights(mesh)?;
    Ok(laplacian_from_edges(mesh.vertex_count(), &edge_weights))
}

fn cotangent_edge_weights(mesh: &TriangleMesh) -> Result<BTreeMap<(usize, usize), f64>, GeomError> {
    let v = mesh.vertices();
    let mut weights: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    for (fi, f) in mesh.faces().iter().enumerate() {
        let area = mesh.face_area(fi);
        if !(area > DEGENERATE_AREA) {
            return Err(GeomError::DegenerateTriangle { face: fi, area });
        }
        for corner in 0..3 {
            let k = f[corner];
            let i = f[(corner + 1) % 3];
            let j = f[(corner + 2) % 3];
            let a = v[i] - v[k];
            let b = v[j] - v[k];
            let cot = a.dot(&b) / a.cross(&b).norm();
            let key = if i < j { (i, j) } else { (j, i) };
            *weights.entry(key).or_insert(0.0) += 0.5 * cot;
        }
    }
    Ok(weights)
}

fn laplacian_from_edges(n: usize, edges: &BTreeMap<(usize, usize), f64>) -> SparseOperator {
    let mut diag = vec![0.0; n];
    let mut trip = Vec::with_capacity(edges.len() * 2 + n);
    for (&(i, j), &w) in edges {
        trip.push((i, j, w));
        trip.push((j, i, w));
    }
    // Row sums in the same order the operator stores them (ascending column).
    let off = SparseOperator::from_triplets(n, &trip, true);
    for (r, d) in diag.iter_mut().enumerate() {
        *d = -off.row(r).map(|(_, w)| w).sum::<f64>();
    }
    trip.extend(diag.iter().enumerate().map(|(i, &d)| (i, i, d)));
    SparseOperator::from_triplets(n, &trip, true)
}

/// One third of the incident face areas.
pub fn barycentric_vertex_areas(mesh: &TriangleMesh) -> Vec<f64> {
    let mut areas = vec![0.0; mesh.vertex_count()];
    for (fi, f) in mesh.faces().iter().enumerate() {
        let third = mesh.face_area(fi) / 3.0;
        for &v in f {
            areas[v] += third;
        }
    }
    areas
}

/// Mixed Voronoi areas: the Voronoi region inside non-obtuse faces, and a
/// half / quarter split of obtuse faces. These pair with the cotangent
/// Laplacian so that `L v / (2 A)` estimates the mean-curvature normal.
pub fn mixed_vertex_areas(mesh: &TriangleMesh) -> Vec<f64> {
    let v = mesh.vertices();
    let mut areas = vec![0.0; mesh.vertex_count()];
    for (fi, f) in mesh.faces().iter().enumerate() {
        let area = mesh.face_area(fi);
        let p = [v[f[0]], v[f[1]], v[f[2]]];
        let dots: [f64; 3] = std::array::from_fn(|c| (p[(c + 1) % 3] - p[c]).dot(&(p[(c + 2) % 3] - p[c])));
        if let Some(obtuse) = (0..3).find(|&c| dots[c] < 0.0) {
            for c in 0..3 {
                areas[f[c]] += if c == obtuse { area / 2.0 } else { area / 4.0 };
            }
        } else if area > 0.0 {
            for c in 0..3 {
                let next = (c + 1) % 3;
                let prev = (c + 2) % 3;
                // Edge to `next` is opposite `prev`, edge to `prev` opposite `next`.
                let cot_prev = dots[prev] / (2.0 * area);
                let cot_next = dots[next] / (2.0 * area);
                areas[f[c]] += ((p[next] - p[c]).norm_squared() * cot_prev
                    + (p[prev] - p[c]).norm_squared() * cot_next)
                    / 8.0;
            }
        }
    }
    areas
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MembraneScheme {
    Uniform,
    Cotangent,
    #[default]
    Bilaplacian,
}

/// Per-edge stiffness weights `w_ij >= 0` on 1-ring edges, stored as a
/// symmetric operator with an empty diagonal.
///
/// * `Uniform`: 1 on every edge.
/// * `Cotangent`: the cotangent Laplacian off-diagonal, clamped at 0.
/// * `Bilaplacian`: `|(L L)_ij|` for the cotangent Laplacian `L`, restricted
///   to 1-ring edges.
pub fn membrane_weights(mesh: &TriangleMesh, scheme: MembraneScheme) -> Result<SparseOperator, GeomError> {
    let n = mesh.vertex_count();
    let edges = mesh.edges();
    let weights: Vec<f64> = match scheme {
        MembraneScheme::Uniform => vec![1.0; edges.len()],
        MembraneScheme::Cotangent => {
            let cot = cotangent_edge_weights(mesh)?;
            edges.iter().map(|e| cot[e].max(0.0)).collect()
        }
        MembraneScheme::Bilaplacian => {
            let lap = cotangent_laplacian(mesh)?;
            edges.iter().map(|&(i, j)| sparse_row_dot(&lap, i, j).abs()).collect()
        }
    };
    let mut trip = Vec::with_capacity(edges.len() * 2);
    for (&(i, j), &w) in edges.iter().zip(&weights) {
        trip.push((i, j, w));
        trip.push((j, i, w));
    }
    Ok(SparseOperator::from_triplets(n, &trip, true))
}

/// `(A A)_ij` for symmetric `A`: the dot product of rows `i` and `j`,
/// accumulated in ascending column order.
fn sparse_row_dot(a: &SparseOperator, i: usize, j: usize) -> f64 {
    let mut ri = a.row(i).peekable();
    let mut rj = a.row(j).peekable();
    let mut sum = 0.0;
    while let (Some(&(ci, wi)), Some(&(cj, wj))) = (ri.peek(), rj.peek()) {
        match ci.cmp(&cj) {
            std::cmp::Ordering::Less => {
                ri.next();
            }
            std::cmp::Ordering::Greater => {
                rj.next();
            }
            std::cmp::Ordering::Equal => {
                sum += wi * wj;
                ri.next();
                rj.next();
            }
        }
    }
    sum
}
